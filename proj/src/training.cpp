#include "mafaae/training.hpp"

#include "mafaae/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace mafaae::training {

void TrainConfig::validate() const {
    if (epochs < 1) throw InputError("epochs must be >= 1");
    if (batch_size < 1) throw InputError("batch_size must be >= 1");
    if (!(lambda >= 0.0)) throw InputError("lambda must be >= 0");
    if (!(beta_max >= 0.0)) throw InputError("beta_max must be >= 0");
    if (!(schedule.initial_lr > 0.0)) throw InputError("learning rate must be > 0");
    if (!(schedule.gamma > 0.0)) throw InputError("gamma must be > 0");
    for (std::size_t i = 1; i < schedule.milestones.size(); ++i) {
        if (schedule.milestones[i] <= schedule.milestones[i - 1]) {
            throw InputError("milestones must be strictly increasing");
        }
    }
    if (prior_capacity < 1) throw InputError("prior_capacity must be >= 1");
    windowing.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"lr", c.schedule.initial_lr},
        {"gamma", c.schedule.gamma},
        {"milestones", c.schedule.milestones},
        {"weight_decay", c.adamw.weight_decay},
        {"adam_beta1", c.adamw.beta1},
        {"adam_beta2", c.adamw.beta2},
        {"adam_epsilon", c.adamw.epsilon},
        {"lambda", c.lambda},
        {"beta_max", c.beta_max},
        {"prior_capacity", c.prior_capacity},
        {"window", c.windowing.length},
        {"stride", c.windowing.stride},
        {"seed", c.seed},
    };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.schedule.initial_lr = j.value("lr", c.schedule.initial_lr);
    c.schedule.gamma = j.value("gamma", c.schedule.gamma);
    c.schedule.milestones = j.value("milestones", c.schedule.milestones);
    c.adamw.weight_decay = j.value("weight_decay", c.adamw.weight_decay);
    c.adamw.beta1 = j.value("adam_beta1", c.adamw.beta1);
    c.adamw.beta2 = j.value("adam_beta2", c.adamw.beta2);
    c.adamw.epsilon = j.value("adam_epsilon", c.adamw.epsilon);
    c.lambda = j.value("lambda", c.lambda);
    c.beta_max = j.value("beta_max", c.beta_max);
    c.prior_capacity = j.value("prior_capacity", c.prior_capacity);
    c.windowing.length = j.value("window", c.windowing.length);
    c.windowing.stride = j.value("stride", c.windowing.stride);
    c.seed = j.value("seed", c.seed);
}

double loss_mse(const data::Frames& window, const data::Frames& reconstruction) {
    if (window.rows() != reconstruction.rows() || window.cols() != reconstruction.cols()) {
        throw InputError("loss_mse: shape mismatch");
    }
    return (window - reconstruction).squaredNorm();
}

double loss_sparsity(const model::ModelConfig& config, const model::GeneratorParams& params, double lambda) {
    if (!config.sparsity || lambda == 0.0) return 0.0;
    double total = 0.0;
    for (std::size_t s = 0; s < params.arrays.size(); ++s) {
        if (model::in_l1_set(config, s)) total += params.arrays[s].value.cwiseAbs().sum();
    }
    return lambda * total;
}

double bce(double probability, bool target) {
    const double p = std::clamp(probability, kProbabilityFloor, 1.0 - kProbabilityFloor);
    return target ? -std::log(p) : -std::log(1.0 - p);
}

double loss_adversarial_g(const Vector& zK, const model::Discriminator<double>& disc, double beta) {
    if (beta == 0.0) return 0.0;
    return beta * bce(disc.probability(zK), true);
}

GeneratorLoss loss_generator(const model::LatentPass<double>& pass, const data::Frames& window,
                             const model::ModelConfig& config, const model::GeneratorParams& params,
                             const model::Discriminator<double>& disc, double lambda, double beta) {
    GeneratorLoss loss;
    loss.mse = loss_mse(window, pass.reconstruction);
    loss.l1 = loss_sparsity(config, params, lambda);
    loss.bce = loss_adversarial_g(pass.zK, disc, beta);
    return loss;
}

double loss_discriminator(std::span<const Vector> prior, std::span<const Vector> zK,
                          const model::Discriminator<double>& disc) {
    if (prior.empty() || zK.empty()) {
        throw std::invalid_argument("loss_discriminator: empty batch");
    }
    double real = 0.0;
    for (const Vector& z : prior) real += bce(disc.probability(z), true);
    double fake = 0.0;
    for (const Vector& z : zK) fake += bce(disc.probability(z), false);
    return 0.5 * (real / static_cast<double>(prior.size()) + fake / static_cast<double>(zK.size()));
}

double beta_schedule(int epoch, const TrainConfig& config) {
    if (epoch < 0 || epoch >= config.epochs) {
        throw std::invalid_argument("beta_schedule: epoch out of range");
    }
    if (config.epochs == 1) return config.beta_max;
    return config.beta_max * static_cast<double>(epoch) / static_cast<double>(config.epochs - 1);
}

BatchLossVars generator_batch_loss(numerics::Tape& tape, std::span<const numerics::Var> gen,
                                   std::span<const numerics::Var> disc, const model::ModelConfig& config,
                                   const model::GeneratorGraph& graph, const model::WindowBatch& batch,
                                   double lambda, double beta) {
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    BatchLossVars v;
    const numerics::Var diff = tape.sub(graph.reconstruction, tape.constant(batch.targets));
    v.mse = tape.affine(tape.sum(tape.square(diff)), inv_b);

    Matrix zero = Matrix::Zero(1, 1);
    v.l1 = tape.constant(zero);
    if (config.sparsity && lambda != 0.0) {
        std::optional<numerics::Var> acc;
        for (std::size_t s = 0; s < gen.size(); ++s) {
            if (!model::in_l1_set(config, s)) continue;
            const numerics::Var term = tape.sum(tape.abs(gen[s]));
            acc = acc ? tape.add(*acc, term) : term;
        }
        if (acc) v.l1 = tape.affine(*acc, lambda);
    }

    v.bce = tape.constant(zero);
    if (beta != 0.0) {
        const numerics::Var p = model::discriminator_graph(tape, disc, graph.zK);
        const numerics::Var clamped = tape.clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
        v.bce = tape.affine(tape.sum(tape.log(clamped)), -beta * inv_b);
    }
    v.total = tape.add(tape.add(v.mse, v.l1), v.bce);
    return v;
}

numerics::Var discriminator_batch_loss(numerics::Tape& tape, std::span<const numerics::Var> disc,
                                       numerics::Var prior, numerics::Var zK) {
    const double lo = kProbabilityFloor;
    const double hi = 1.0 - kProbabilityFloor;
    const numerics::Var p_real = tape.clamp(model::discriminator_graph(tape, disc, prior), lo, hi);
    const numerics::Var p_fake = tape.clamp(model::discriminator_graph(tape, disc, zK), lo, hi);
    const double n_real = static_cast<double>(tape.value(p_real).cols());
    const double n_fake = static_cast<double>(tape.value(p_fake).cols());
    const numerics::Var real = tape.affine(tape.sum(tape.log(p_real)), -0.5 / n_real);
    const numerics::Var fake = tape.affine(tape.sum(tape.log(tape.affine(p_fake, -1.0, 1.0))), -0.5 / n_fake);
    return tape.add(real, fake);
}

PriorBuffer::PriorBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("PriorBuffer capacity must be >= 1");
}

void PriorBuffer::push(const Matrix& latents, std::uint64_t step) {
    for (Index c = 0; c < latents.cols(); ++c) {
        if (entries_.size() == capacity_) entries_.pop_front();
        entries_.push_back(Entry{latents.col(c), step});
    }
}

Matrix sample_prior(const PriorBuffer& buffer, Index count, Index latent, std::mt19937_64& rng) {
    Matrix out(latent, count);
    if (buffer.empty()) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (Index c = 0; c < count; ++c) {
            for (Index i = 0; i < latent; ++i) out(i, c) = gauss(rng);
        }
        return out;
    }
    std::uniform_int_distribution<std::size_t> pick(0, buffer.size() - 1);
    for (Index c = 0; c < count; ++c) {
        const Vector& z = buffer.entries()[pick(rng)].z;
        if (z.size() != latent) throw std::invalid_argument("sample_prior: latent length mismatch");
        out.col(c) = z;
    }
    return out;
}

nlohmann::json to_json_line(const EpochLog& log) {
    return nlohmann::json{
        {"epoch", log.epoch},
        {"mean_L_mse", log.mean_mse},
        {"mean_L_l1", log.mean_l1},
        {"mean_L_bce", log.mean_bce},
        {"mean_L_G", log.mean_generator},
        {"mean_L_D", log.mean_discriminator},
        {"eta", log.eta},
        {"beta", log.beta},
        {"wall_time_s", log.wall_time_s},
        {"windows", log.windows},
    };
}

Trainer::Trainer(const model::ModelConfig& model_config, const TrainConfig& train_config)
    : model_config_(model_config), config_(train_config), prior_(train_config.prior_capacity),
      rng_(train_config.seed) {
    model_config_.validate();
    config_.validate();
    if (model_config_.window != config_.windowing.length) {
        throw InputError("model window length differs from training window length");
    }
    const std::uint64_t gen_seed = rng_();
    const std::uint64_t disc_seed = rng_();
    generator_ = model::init_generator(model_config_, gen_seed);
    discriminator_ = model::init_discriminator(model_config_, disc_seed);
    g_state_ = numerics::OptimizerState::for_params(generator_.arrays, config_.schedule.initial_lr, config_.adamw);
    d_state_ = numerics::OptimizerState::for_params(discriminator_.arrays, config_.schedule.initial_lr, config_.adamw);
}

StepStats Trainer::step(std::span<const data::Record* const> batch, int epoch) {
    std::vector<data::Frames> windows;
    for (const data::Record* r : batch) {
        if (r->label != data::Label::normal) {
            throw InputError("training data must be normal only; " + r->sample_id + " is anomalous");
        }
        for (auto& w : data::sliding_windows(*r, config_.windowing)) windows.push_back(std::move(w.values));
    }
    const model::WindowBatch wb = model::make_batch(windows);
    const Index B = wb.size();
    const Index D = model_config_.latent_size;
    const double beta = beta_schedule(epoch, config_);
    const double lr = numerics::lr_schedule(epoch, config_.schedule);

    Matrix eps(D, B);
    {
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (Index i = 0; i < eps.size(); ++i) eps(i) = gauss(rng_);
    }

    StepStats stats;
    stats.windows = static_cast<std::size_t>(B);
    numerics::GradientMap g_grads;
    Matrix zK;
    try {
        numerics::Tape tape;
        std::vector<numerics::Var> gen;
        for (const auto& p : generator_.arrays) gen.push_back(tape.parameter(p.value));
        std::vector<numerics::Var> disc;
        for (const auto& p : discriminator_.arrays) disc.push_back(tape.constant(p.value));
        const model::GeneratorGraph graph = model::generator_graph(tape, gen, model_config_, generator_.masks, wb, eps);
        const BatchLossVars loss = generator_batch_loss(tape, gen, disc, model_config_, graph, wb, config_.lambda, beta);
        tape.backward(loss.total);
        for (const auto v : gen) g_grads.push_back(tape.grad(v));
        zK = tape.value(graph.zK);
        stats.mse = tape.scalar(loss.mse);
        stats.l1 = tape.scalar(loss.l1);
        stats.bce = tape.scalar(loss.bce);
        stats.generator = tape.scalar(loss.total);
    } catch (const NumericError& e) {
        throw NumericError("generator loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(steps_) +
                           ": " + e.what());
    }

    const Matrix prior = sample_prior(prior_, B, D, rng_);
    numerics::ValueAndGrad d_result;
    try {
        d_result = numerics::value_and_grad(discriminator_.arrays, [&](numerics::Tape& t, std::span<const numerics::Var> vars) {
            return discriminator_batch_loss(t, vars, t.constant(prior), t.constant(zK));
        });
    } catch (const NumericError& e) {
        throw NumericError("discriminator loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(steps_) + ": " + e.what());
    }
    stats.discriminator = d_result.value;

    g_state_.learning_rate = lr;
    d_state_.learning_rate = lr;
    numerics::adamw_step(generator_.arrays, g_grads, g_state_);
    numerics::adamw_step(discriminator_.arrays, d_result.grads, d_state_);
    prior_.push(zK, steps_);
    ++steps_;
    return stats;
}

std::vector<EpochLog> Trainer::run(std::span<const data::Record> records,
                                   const std::function<void(const EpochLog&)>& on_epoch) {
    if (records.empty()) throw InputError("no training records");
    for (const auto& r : records) {
        if (r.label != data::Label::normal) {
            throw InputError("training data must be normal only; " + r.sample_id + " is anomalous");
        }
        if (r.signals() != model_config_.signals) {
            throw InputError("record " + r.sample_id + " has " + std::to_string(r.signals()) + " signals, model expects " +
                             std::to_string(model_config_.signals));
        }
        if (r.length() < config_.windowing.length) {
            throw InputError("record shorter than window: " + r.sample_id);
        }
    }

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<EpochLog> logs;
    const auto start = std::chrono::steady_clock::now();

    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng_);
        EpochLog log;
        log.epoch = epoch;
        log.eta = numerics::lr_schedule(epoch, config_.schedule);
        log.beta = beta_schedule(epoch, config_);
        std::vector<const data::Record*> batch;
        for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(config_.batch_size)) {
            batch.clear();
            for (std::size_t k = i; k < std::min(order.size(), i + static_cast<std::size_t>(config_.batch_size)); ++k) {
                batch.push_back(&records[order[k]]);
            }
            const StepStats s = step(batch, epoch);
            const double w = static_cast<double>(s.windows);
            log.windows += s.windows;
            log.mean_mse += w * s.mse;
            log.mean_l1 += w * s.l1;
            log.mean_bce += w * s.bce;
            log.mean_generator += w * s.generator;
            log.mean_discriminator += w * s.discriminator;
        }
        const double n = static_cast<double>(log.windows);
        log.mean_mse /= n;
        log.mean_l1 /= n;
        log.mean_bce /= n;
        log.mean_generator /= n;
        log.mean_discriminator /= n;
        log.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (on_epoch) on_epoch(log);
        logs.push_back(log);
    }
    return logs;
}

TrainResult train(std::span<const data::Record> records, const model::ModelConfig& model_config,
                  const TrainConfig& train_config, const std::function<void(const EpochLog&)>& on_epoch) {
    Trainer trainer(model_config, train_config);
    TrainResult result;
    result.log = trainer.run(records, on_epoch);
    result.generator = trainer.generator();
    result.discriminator = trainer.discriminator();
    return result;
}

} // namespace mafaae::training
