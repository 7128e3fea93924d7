#include "mafaae/errors.hpp"
#include "mafaae/synth.hpp"
#include "mafaae/training.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace mafaae;
using namespace mafaae::training;
using model::ModelConfig;

namespace {

ModelConfig toy() {
    ModelConfig c = ModelConfig::for_signals(3, 8);
    c.latent_size = 6;
    c.made_hidden = 12;
    c.disc_widths = {12, 12};
    c.flow_layers = 2;
    return c;
}

data::Frames random_window(const ModelConfig& c, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    data::Frames w(c.window, c.signals);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
    return w;
}

/// Discriminator with zero weights whose output is `p` everywhere.
model::DiscriminatorParams constant_discriminator(const ModelConfig& c, double p) {
    model::DiscriminatorParams d = model::zero_discriminator(c);
    d.arrays.back().value.setConstant(std::log(p / (1.0 - p)));
    return d;
}

std::vector<data::Record> normalized_synthetic(int count, std::uint64_t seed, Index length = 300) {
    data::SynthConfig s;
    s.num_normal = count;
    s.length = length;
    s.seed = seed;
    const auto d = data::synth_generate(s);
    const auto norm = data::fit_normalization(d.records);
    std::vector<data::Record> out;
    for (const auto& r : d.records) out.push_back(data::apply_normalization(r, norm));
    return out;
}

struct Fixture {
    ModelConfig config = toy();
    model::GeneratorParams gen = model::init_generator(config, 3);
    model::DiscriminatorParams disc = model::init_discriminator(config, 4);
    std::vector<data::Frames> windows;
    model::WindowBatch batch;
    Matrix eps;

    Fixture() {
        std::mt19937_64 rng(10);
        for (int b = 0; b < 4; ++b) windows.push_back(random_window(config, rng));
        batch = model::make_batch(windows);
        eps = Matrix(config.latent_size, 4);
        std::normal_distribution<double> g(0.0, 1.0);
        for (Index i = 0; i < eps.size(); ++i) eps(i) = g(rng);
    }
};

} // namespace

TEST_CASE("reconstruction loss is a plain sum of squares") {
    data::Frames a = data::Frames::Zero(2, 2);
    CHECK(loss_mse(a, a) == 0.0);
    CHECK(loss_mse(a, data::Frames::Constant(2, 2, 0.5)) == 1.0);
    data::Frames b = a;
    b(1, 0) = -3.0;
    CHECK(loss_mse(a, b) == 9.0);
    CHECK_THROWS_AS(loss_mse(a, data::Frames::Zero(3, 2)), InputError);
}

TEST_CASE("sparsity penalty covers the encoder only") {
    const ModelConfig c = toy();
    model::GeneratorParams p = model::zero_generator(c);
    CHECK(loss_sparsity(c, p, 0.5) == 0.0);
    p.at(model::slot::lstm_wx)(0, 0) = -6.0;
    p.at(model::slot::mu_b)(1, 0) = 4.0;
    p.at(model::slot::flow(0, model::slot::Part::out_w)).setConstant(100.0);
    CHECK(loss_sparsity(c, p, 0.01) == doctest::Approx(0.1));
    CHECK(loss_sparsity(c, p, 0.0) == 0.0);
    ModelConfig wide = c;
    wide.l1_include_flow = true;
    CHECK(loss_sparsity(wide, p, 0.01) > 1.0);
    ModelConfig off = c;
    off.sparsity = false;
    CHECK(loss_sparsity(off, p, 0.01) == 0.0);
}

TEST_CASE("adversarial generator term") {
    const ModelConfig c = toy();
    const Vector z = Vector::Ones(c.latent_size);
    const model::Discriminator<double> half(c, constant_discriminator(c, 0.5));
    CHECK(loss_adversarial_g(z, half, 1.0) == doctest::Approx(std::log(2.0)));
    CHECK(loss_adversarial_g(z, half, 0.0) == 0.0);
    model::DiscriminatorParams sure = model::zero_discriminator(c);
    sure.arrays.back().value.setConstant(80.0);
    CHECK(loss_adversarial_g(z, model::Discriminator<double>(c, sure), 1.0) < 1e-6);
    CHECK(bce(0.0, true) == doctest::Approx(-std::log(kProbabilityFloor)));
}

TEST_CASE("discriminator loss examples") {
    const ModelConfig c = toy();
    const std::vector<Vector> zs{Vector::Ones(c.latent_size)};
    const model::Discriminator<double> half(c, constant_discriminator(c, 0.5));
    CHECK(loss_discriminator(zs, zs, half) == doctest::Approx(std::log(2.0)));
    const model::Discriminator<double> eight(c, constant_discriminator(c, 0.8));
    CHECK(loss_discriminator(zs, zs, eight) == doctest::Approx(0.5 * (-std::log(0.8) - std::log(0.2))));
    CHECK(loss_discriminator(zs, zs, eight) == doctest::Approx(0.9164).epsilon(1e-4));
}

TEST_CASE("generator loss is the sum of its three terms") {
    Fixture f;
    const model::Generator<double> g(f.config, f.gen);
    const model::Discriminator<double> d(f.config, f.disc);
    const auto pass = g.forward(f.windows[0], f.eps.col(0));
    const GeneratorLoss loss = loss_generator(pass, f.windows[0], f.config, f.gen, d, 0.01, 0.7);
    CHECK(loss.mse == loss_mse(f.windows[0], pass.reconstruction));
    CHECK(loss.l1 == loss_sparsity(f.config, f.gen, 0.01));
    CHECK(loss.bce == loss_adversarial_g(pass.zK, d, 0.7));
    CHECK(loss.total() == loss.mse + loss.l1 + loss.bce);
}

TEST_CASE("perfect reconstruction, zero encoder and a fooled discriminator give almost no loss") {
    const ModelConfig c = toy();
    model::GeneratorParams p = model::zero_generator(c);
    const data::Frames w = data::Frames::Zero(c.window, c.signals);
    model::DiscriminatorParams d = model::zero_discriminator(c);
    d.arrays.back().value.setConstant(80.0);
    const auto pass = model::Generator<double>(c, p).forward(w, Vector::Zero(c.latent_size));
    CHECK(loss_generator(pass, w, c, p, model::Discriminator<double>(c, d), 0.1, 1.0).total() < 1e-6);
}

TEST_CASE("batched tape loss equals the per-window average") {
    Fixture f;
    const double lambda = 0.01;
    const double beta = 0.6;
    numerics::Tape tape;
    std::vector<numerics::Var> gv, dv;
    for (const auto& a : f.gen.arrays) gv.push_back(tape.parameter(a.value));
    for (const auto& a : f.disc.arrays) dv.push_back(tape.constant(a.value));
    const auto graph = model::generator_graph(tape, gv, f.config, f.gen.masks, f.batch, f.eps);
    const auto loss = generator_batch_loss(tape, gv, dv, f.config, graph, f.batch, lambda, beta);

    const model::Generator<double> g(f.config, f.gen);
    const model::Discriminator<double> d(f.config, f.disc);
    double total = 0.0;
    for (std::size_t b = 0; b < f.windows.size(); ++b) {
        const auto pass = g.forward(f.windows[b], f.eps.col(static_cast<Index>(b)));
        total += loss_generator(pass, f.windows[b], f.config, f.gen, d, lambda, beta).total();
    }
    CHECK(tape.scalar(loss.total) == doctest::Approx(total / 4.0).epsilon(1e-12));
}

TEST_CASE("generator loss gradient passes the finite-difference oracle") {
    Fixture f;
    numerics::LossBuilder loss = [&](numerics::Tape& t, std::span<const numerics::Var> gv) {
        std::vector<numerics::Var> dv;
        for (const auto& a : f.disc.arrays) dv.push_back(t.constant(a.value));
        const auto graph = model::generator_graph(t, gv, f.config, f.gen.masks, f.batch, f.eps);
        return generator_batch_loss(t, gv, dv, f.config, graph, f.batch, 0.01, 0.8).total;
    };
    CHECK(numerics::finite_diff_check(f.gen.arrays, loss, 1e-5) < 1e-4);
}

TEST_CASE("discriminator loss gradient passes the finite-difference oracle") {
    Fixture f;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix prior(f.config.latent_size, 5), fake(f.config.latent_size, 4);
    for (Index i = 0; i < prior.size(); ++i) prior(i) = g(rng);
    for (Index i = 0; i < fake.size(); ++i) fake(i) = 2.0 * g(rng);
    numerics::LossBuilder loss = [&](numerics::Tape& t, std::span<const numerics::Var> dv) {
        return discriminator_batch_loss(t, dv, t.constant(prior), t.constant(fake));
    };
    CHECK(numerics::finite_diff_check(f.disc.arrays, loss, 1e-5) < 1e-4);

    std::vector<Vector> pv, fv;
    for (Index b = 0; b < prior.cols(); ++b) pv.push_back(prior.col(b));
    for (Index b = 0; b < fake.cols(); ++b) fv.push_back(fake.col(b));
    CHECK(numerics::evaluate(f.disc.arrays, loss) ==
          doctest::Approx(loss_discriminator(pv, fv, model::Discriminator<double>(f.config, f.disc))).epsilon(1e-12));
}

TEST_CASE("discriminator loss sends exactly zero gradient to the generator") {
    Fixture f;
    numerics::Tape tape;
    std::vector<numerics::Var> gv, dv;
    for (const auto& a : f.gen.arrays) gv.push_back(tape.parameter(a.value));
    for (const auto& a : f.disc.arrays) dv.push_back(tape.parameter(a.value));
    const auto graph = model::generator_graph(tape, gv, f.config, f.gen.masks, f.batch, f.eps);
    const Matrix prior = Matrix::Ones(f.config.latent_size, 4);
    const auto loss = discriminator_batch_loss(tape, dv, tape.constant(prior), tape.detach(graph.zK));
    tape.backward(loss);
    for (const auto v : gv) CHECK(tape.grad(v).isZero(0.0));
    double disc_grad = 0.0;
    for (const auto v : dv) disc_grad += tape.grad(v).cwiseAbs().sum();
    CHECK(disc_grad > 0.0);
}

TEST_CASE("beta schedule") {
    TrainConfig t;
    t.epochs = 15;
    CHECK(beta_schedule(0, t) == 0.0);
    CHECK(beta_schedule(7, t) == doctest::Approx(0.5));
    CHECK(beta_schedule(14, t) == 1.0);
    for (int e = 1; e < 15; ++e) CHECK(beta_schedule(e, t) >= beta_schedule(e - 1, t));
    CHECK_THROWS(beta_schedule(15, t));
    t.epochs = 1;
    CHECK(beta_schedule(0, t) == t.beta_max);
}

TEST_CASE("prior buffer is a bounded FIFO and sampling is reproducible") {
    PriorBuffer buf(3);
    std::mt19937_64 rng(1);
    const Matrix boot = sample_prior(buf, 4, 5, rng);
    CHECK(boot.rows() == 5);
    CHECK(boot.cols() == 4);
    CHECK(boot.cwiseAbs().maxCoeff() > 0.0);

    buf.push(Matrix::Constant(5, 1, 7.0), 0);
    std::mt19937_64 r1(9);
    const Matrix one = sample_prior(buf, 6, 5, r1);
    CHECK(one == Matrix::Constant(5, 6, 7.0));

    Matrix many(5, 4);
    for (Index c = 0; c < 4; ++c) many.col(c).setConstant(static_cast<double>(c));
    buf.push(many, 1);
    CHECK(buf.size() == 3);
    CHECK(buf.entries().front().z(0) == 1.0);
    CHECK(buf.entries().back().z(0) == 3.0);

    std::mt19937_64 a(5), b(5);
    CHECK(sample_prior(buf, 10, 5, a) == sample_prior(buf, 10, 5, b));
}

TEST_CASE("one batch of 8 records with 3 windows each is one step per network") {
    const ModelConfig c = ModelConfig::for_signals(12, 150);
    TrainConfig t;
    const auto records = normalized_synthetic(8, 1, 250);
    Trainer trainer(c, t);
    std::vector<const data::Record*> batch;
    for (const auto& r : records) batch.push_back(&r);
    const auto before = trainer.generator().arrays[0].value;
    const StepStats s = trainer.step(batch, 0);
    CHECK(s.windows == 24);
    CHECK(trainer.generator_optimizer().step == 1);
    CHECK(trainer.discriminator_optimizer().step == 1);
    CHECK(trainer.generator().arrays[0].value != before);
    CHECK(trainer.prior().size() == 24);
    for (const auto& e : trainer.prior().entries()) CHECK(e.step == 0);
}

TEST_CASE("prior entries always come from earlier steps") {
    const ModelConfig c = ModelConfig::for_signals(12, 150);
    TrainConfig t;
    t.prior_capacity = 20;
    const auto records = normalized_synthetic(6, 2, 200);
    Trainer trainer(c, t);
    for (int k = 0; k < 6; ++k) {
        const data::Record* r = &records[static_cast<std::size_t>(k)];
        trainer.step(std::span<const data::Record* const>(&r, 1), 0);
        CHECK(trainer.prior().size() <= 20);
        for (const auto& e : trainer.prior().entries()) CHECK(e.step <= static_cast<std::uint64_t>(k));
    }
}

TEST_CASE("with lambda and beta at zero the generator loss is the reconstruction loss") {
    const ModelConfig c = ModelConfig::for_signals(12, 150);
    TrainConfig t;
    t.epochs = 2;
    t.lambda = 0.0;
    t.beta_max = 0.0;
    const auto log = train(normalized_synthetic(10, 3), c, t).log;
    for (const auto& e : log) {
        CHECK(e.mean_generator == e.mean_mse);
        CHECK(e.mean_l1 == 0.0);
        CHECK(e.mean_bce == 0.0);
    }
}

TEST_CASE("reconstruction loss falls over the first five epochs") {
    const ModelConfig c = ModelConfig::for_signals(12, 150);
    TrainConfig t;
    t.epochs = 5;
    const auto log = train(normalized_synthetic(40, 4), c, t).log;
    REQUIRE(log.size() == 5);
    for (std::size_t e = 1; e < 5; ++e) CHECK(log[e].mean_mse < log[e - 1].mean_mse);
    CHECK(log[4].eta == doctest::Approx(t.schedule.initial_lr * 0.1));
}

TEST_CASE("training is deterministic per seed") {
    const ModelConfig c = toy();
    TrainConfig t;
    t.epochs = 2;
    t.windowing = {8, 4};
    t.seed = 5;
    const auto records = normalized_synthetic(6, 5, 20);
    std::vector<data::Record> small;
    for (const auto& r : records) {
        data::Record s = r;
        s.frames = r.frames.leftCols(3);
        small.push_back(s);
    }
    const auto a = train(small, c, t);
    const auto b = train(small, c, t);
    for (std::size_t i = 0; i < a.generator.arrays.size(); ++i) CHECK(a.generator.arrays[i].value == b.generator.arrays[i].value);
    for (std::size_t i = 0; i < a.discriminator.arrays.size(); ++i) {
        CHECK(a.discriminator.arrays[i].value == b.discriminator.arrays[i].value);
    }
    t.seed = 6;
    CHECK(train(small, c, t).generator.arrays[0].value != a.generator.arrays[0].value);
}

TEST_CASE("a positive sparsity coefficient zeroes more encoder weights") {
    const ModelConfig c = ModelConfig::for_signals(12, 150);
    const auto records = normalized_synthetic(16, 6);
    auto small_count = [&](double lambda) {
        TrainConfig t;
        t.epochs = 6;
        t.lambda = lambda;
        t.seed = 3;
        const auto p = train(records, c, t).generator;
        long n = 0;
        for (std::size_t s = 0; s < p.arrays.size(); ++s) {
            if (model::in_l1_set(c, s)) n += (p.arrays[s].value.array().abs() < 1e-4).count();
        }
        return n;
    };
    CHECK(small_count(1.0) > small_count(0.0));
}

TEST_CASE("anomalous training records are rejected") {
    data::SynthConfig s;
    s.num_normal = 2;
    s.num_anomalous = 1;
    const auto d = data::synth_generate(s);
    CHECK_THROWS_AS(train(d.records, ModelConfig::for_signals(12, 150), TrainConfig{}), InputError);
}

TEST_CASE("config validation") {
    TrainConfig t;
    t.epochs = 0;
    CHECK_THROWS_AS(t.validate(), InputError);
    t = TrainConfig{};
    t.lambda = -1.0;
    CHECK_THROWS_AS(t.validate(), InputError);
    t = TrainConfig{};
    const TrainConfig back = nlohmann::json(t).get<TrainConfig>();
    CHECK(nlohmann::json(back) == nlohmann::json(t));
}
