#include "mafaae/model.hpp"

#include "mafaae/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mafaae::model {

namespace {

struct ArraySpec {
    std::string name;
    Index rows;
    Index cols;
    Index fan_in;
    bool decay;
};

std::vector<ArraySpec> generator_specs(const ModelConfig& c) {
    const Index H = c.hidden_size;
    const Index D = c.latent_size;
    const Index N = c.signals;
    const Index Hm = c.made_hidden;
    std::vector<ArraySpec> s{
        {"lstm.wx", 4 * H, N, H, true},
        {"lstm.wh", 4 * H, H, H, true},
        {"lstm.b", 4 * H, 1, H, false},
        {"mu.w", D, H, H, true},
        {"mu.b", D, 1, H, false},
        {"logvar.w", D, H, H, true},
        {"logvar.b", D, 1, H, false},
    };
    for (int k = 0; k < c.flow_layers; ++k) {
        const std::string p = "flow" + std::to_string(k);
        s.push_back({p + ".hidden.w", Hm, D, D, true});
        s.push_back({p + ".hidden.b", Hm, 1, D, false});
        s.push_back({p + ".out.w", D, Hm, Hm, true});
        s.push_back({p + ".out.b", D, 1, Hm, false});
    }
    s.push_back({"decoder.hidden.w", H, D, D, true});
    s.push_back({"decoder.hidden.b", H, 1, D, false});
    s.push_back({"decoder.out.w", c.window * N, H, H, true});
    s.push_back({"decoder.out.b", c.window * N, 1, H, false});
    return s;
}

std::vector<ArraySpec> discriminator_specs(const ModelConfig& c) {
    std::vector<ArraySpec> s;
    Index prev = c.latent_size;
    for (std::size_t l = 0; l < c.disc_widths.size(); ++l) {
        const std::string p = "disc" + std::to_string(l);
        s.push_back({p + ".w", c.disc_widths[l], prev, prev, true});
        s.push_back({p + ".b", c.disc_widths[l], 1, prev, false});
        prev = c.disc_widths[l];
    }
    s.push_back({"disc.out.w", 1, prev, prev, true});
    s.push_back({"disc.out.b", 1, 1, prev, false});
    return s;
}

numerics::ParamSet build(const std::vector<ArraySpec>& specs, std::mt19937_64* rng) {
    numerics::ParamSet set;
    set.reserve(specs.size());
    for (const auto& s : specs) {
        numerics::ParamArray p{s.name, Matrix::Zero(s.rows, s.cols), s.decay};
        if (rng != nullptr) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Index i = 0; i < p.value.size(); ++i) {
                p.value(i) = dist(*rng);
            }
        }
        set.push_back(std::move(p));
    }
    return set;
}

void check_specs(const std::vector<ArraySpec>& specs, const numerics::ParamSet& set, const char* what) {
    if (set.size() != specs.size()) {
        throw InputError(std::string(what) + ": expected " + std::to_string(specs.size()) + " arrays, got " +
                         std::to_string(set.size()));
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& p = set[i];
        if (p.name != specs[i].name || p.value.rows() != specs[i].rows || p.value.cols() != specs[i].cols) {
            throw InputError(std::string(what) + ": array " + std::to_string(i) + " (" + p.name +
                             ") does not match expected " + specs[i].name);
        }
        if (!p.value.allFinite()) {
            throw InputError(std::string(what) + ": array " + p.name + " has non-finite entries");
        }
    }
}

std::vector<MadeMasks> build_masks(const ModelConfig& c) {
    std::vector<MadeMasks> masks;
    for (int k = 0; k < c.flow_layers; ++k) {
        masks.push_back(make_made_masks(c.latent_size, c.made_hidden));
    }
    return masks;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
}

} // namespace

ModelConfig ModelConfig::for_signals(Index signals, Index window) {
    ModelConfig c;
    c.signals = signals;
    c.window = window;
    c.hidden_size = 2 * signals;
    c.latent_size = 2 * signals;
    c.made_hidden = 2 * c.latent_size;
    c.disc_widths = {2 * c.latent_size, 2 * c.latent_size};
    return c;
}

void ModelConfig::validate() const {
    if (signals < 1 || window < 1 || hidden_size < 1 || latent_size < 1 || made_hidden < 1) {
        throw InputError("model sizes must all be >= 1");
    }
    if (flow_layers < 0) {
        throw InputError("flow_layers must be >= 0");
    }
    for (Index w : disc_widths) {
        if (w < 1) throw InputError("discriminator widths must be >= 1");
    }
    if (!std::isfinite(alpha) || alpha < 0.0) {
        throw InputError("alpha must be a finite non-negative value");
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{
        {"signals", c.signals},         {"window", c.window},
        {"hidden_size", c.hidden_size}, {"latent_size", c.latent_size},
        {"flow_layers", c.flow_layers}, {"made_hidden", c.made_hidden},
        {"disc_widths", c.disc_widths}, {"alpha", c.alpha},
        {"sparsity", c.sparsity},       {"flow", c.flow},
        {"l1_include_flow", c.l1_include_flow},
    };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    const Index signals = j.value("signals", c.signals);
    const Index window = j.value("window", c.window);
    c = ModelConfig::for_signals(signals, window);
    if (j.contains("latent_size")) {
        c.latent_size = j.at("latent_size").get<Index>();
        c.made_hidden = 2 * c.latent_size;
        c.disc_widths = {2 * c.latent_size, 2 * c.latent_size};
    }
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.flow_layers = j.value("flow_layers", c.flow_layers);
    c.made_hidden = j.value("made_hidden", c.made_hidden);
    c.disc_widths = j.value("disc_widths", c.disc_widths);
    c.alpha = j.value("alpha", c.alpha);
    c.sparsity = j.value("sparsity", c.sparsity);
    c.flow = j.value("flow", c.flow);
    c.l1_include_flow = j.value("l1_include_flow", c.l1_include_flow);
}

MadeMasks make_made_masks(Index latent, Index hidden) {
    MadeMasks m;
    m.encoder = Matrix::Zero(hidden, latent);
    m.decoder = Matrix::Zero(latent, hidden);
    if (latent < 2) {
        return m; // no input can feed any output
    }
    for (Index h = 0; h < hidden; ++h) {
        const Index degree = h % (latent - 1) + 1;
        for (Index j = 0; j < latent; ++j) {
            m.encoder(h, j) = j < degree ? 1.0 : 0.0;
        }
        for (Index i = 0; i < latent; ++i) {
            m.decoder(i, h) = degree <= i ? 1.0 : 0.0;
        }
    }
    check_made_masks(m);
    return m;
}

void check_made_masks(const MadeMasks& masks) {
    const Matrix connectivity = masks.decoder * masks.encoder;
    for (Index i = 0; i < connectivity.rows(); ++i) {
        for (Index j = i; j < connectivity.cols(); ++j) {
            if (connectivity(i, j) != 0.0) {
                throw std::logic_error("MADE masks: output " + std::to_string(i) + " depends on input " +
                                       std::to_string(j));
            }
        }
    }
}

GeneratorParams init_generator(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    return GeneratorParams{build(generator_specs(config), &rng), build_masks(config)};
}

DiscriminatorParams init_discriminator(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    return DiscriminatorParams{build(discriminator_specs(config), &rng)};
}

GeneratorParams zero_generator(const ModelConfig& config) {
    config.validate();
    return GeneratorParams{build(generator_specs(config), nullptr), build_masks(config)};
}

DiscriminatorParams zero_discriminator(const ModelConfig& config) {
    config.validate();
    return DiscriminatorParams{build(discriminator_specs(config), nullptr)};
}

void check_generator(const ModelConfig& config, GeneratorParams& params) {
    config.validate();
    check_specs(generator_specs(config), params.arrays, "generator");
    params.masks = build_masks(config);
}

void check_discriminator(const ModelConfig& config, const DiscriminatorParams& params) {
    config.validate();
    check_specs(discriminator_specs(config), params.arrays, "discriminator");
}

bool in_l1_set(const ModelConfig& config, std::size_t slot_index) {
    if (slot_index < slot::encoder_end) return true;
    return config.l1_include_flow && slot_index < slot::decoder(config.flow_layers, slot::Part::hidden_w);
}

// Generator<Scalar> -----------------------------------------------------------

template <typename Scalar>
Generator<Scalar>::Generator(const ModelConfig& config, const GeneratorParams& params) : config_(config) {
    config_.validate();
    if (params.arrays.size() != slot::generator_count(config_.flow_layers)) {
        throw InputError("generator parameters do not match config");
    }
    lstm_wx_ = params.at(slot::lstm_wx).cast<Scalar>();
    lstm_wh_ = params.at(slot::lstm_wh).cast<Scalar>();
    lstm_b_ = params.at(slot::lstm_b).col(0).cast<Scalar>();
    mu_w_ = params.at(slot::mu_w).cast<Scalar>();
    mu_b_ = params.at(slot::mu_b).col(0).cast<Scalar>();
    logvar_w_ = params.at(slot::logvar_w).cast<Scalar>();
    logvar_b_ = params.at(slot::logvar_b).col(0).cast<Scalar>();
    if (config_.flow_active()) {
        if (params.masks.size() != static_cast<std::size_t>(config_.flow_layers)) {
            throw InputError("generator parameters carry no MADE masks");
        }
        for (int k = 0; k < config_.flow_layers; ++k) {
            const MadeMasks& m = params.masks[static_cast<std::size_t>(k)];
            check_made_masks(m);
            Made made;
            made.w1 = params.at(slot::flow(k, slot::Part::hidden_w)).cwiseProduct(m.encoder).cast<Scalar>();
            made.b1 = params.at(slot::flow(k, slot::Part::hidden_b)).col(0).cast<Scalar>();
            made.w2 = params.at(slot::flow(k, slot::Part::out_w)).cwiseProduct(m.decoder).cast<Scalar>();
            made.b2 = params.at(slot::flow(k, slot::Part::out_b)).col(0).cast<Scalar>();
            flow_.push_back(std::move(made));
        }
    }
    flow_scale_ = static_cast<Scalar>(std::exp(config_.alpha));
    const int K = config_.flow_layers;
    dec_w1_ = params.at(slot::decoder(K, slot::Part::hidden_w)).cast<Scalar>();
    dec_b1_ = params.at(slot::decoder(K, slot::Part::hidden_b)).col(0).cast<Scalar>();
    dec_w2_ = params.at(slot::decoder(K, slot::Part::out_w)).cast<Scalar>();
    dec_b2_ = params.at(slot::decoder(K, slot::Part::out_b)).col(0).cast<Scalar>();
}

template <typename Scalar>
typename Generator<Scalar>::Encoding Generator<Scalar>::encode(const Frames& window) const {
    if (window.rows() != config_.window || window.cols() != config_.signals) {
        throw InputError("encode: window is " + std::to_string(window.rows()) + "x" + std::to_string(window.cols()) +
                         ", model expects " + std::to_string(config_.window) + "x" +
                         std::to_string(config_.signals));
    }
    const Index H = config_.hidden_size;
    // Input contributions for every step at once: 4H x T.
    Mat gates = lstm_wx_ * window.transpose();
    gates.colwise() += lstm_b_;
    Vec h = Vec::Zero(H);
    Vec c = Vec::Zero(H);
    Vec pre(4 * H);
    for (Index t = 0; t < window.rows(); ++t) {
        pre.noalias() = gates.col(t);
        pre.noalias() += lstm_wh_ * h;
        for (Index u = 0; u < H; ++u) {
            const Scalar in = sigmoid(pre(u));
            const Scalar forget = sigmoid(pre(H + u));
            const Scalar cell = std::tanh(pre(2 * H + u));
            const Scalar out = sigmoid(pre(3 * H + u));
            c(u) = forget * c(u) + in * cell;
            h(u) = out * std::tanh(c(u));
        }
    }
    Encoding e;
    e.mu = mu_w_ * h + mu_b_;
    e.logvar = logvar_w_ * h + logvar_b_;
    return e;
}

template <typename Scalar>
typename Generator<Scalar>::Vec Generator<Scalar>::made_forward(int layer, const Vec& z) const {
    if (layer < 0 || static_cast<std::size_t>(layer) >= flow_.size()) {
        throw std::out_of_range("made_forward: no such flow layer");
    }
    const Made& m = flow_[static_cast<std::size_t>(layer)];
    const Vec hidden = (m.w1 * z + m.b1).cwiseMax(Scalar(0));
    return m.w2 * hidden + m.b2;
}

template <typename Scalar>
typename Generator<Scalar>::Vec Generator<Scalar>::maf_forward(const Vec& z0) const {
    Vec z = z0;
    for (int k = 0; k < static_cast<int>(flow_.size()); ++k) {
        const Vec shift = made_forward(k, z);
        z = z * flow_scale_ + shift;
    }
    return z;
}

template <typename Scalar>
typename Generator<Scalar>::Vec Generator<Scalar>::maf_inverse(const Vec& zK) const {
    Vec y = zK;
    for (int k = static_cast<int>(flow_.size()) - 1; k >= 0; --k) {
        Vec x = Vec::Zero(y.size());
        for (Index i = 0; i < y.size(); ++i) {
            // Output i of the MADE only sees x[0..i), which is already solved.
            const Vec shift = made_forward(k, x);
            x(i) = (y(i) - shift(i)) / flow_scale_;
        }
        y = x;
    }
    return y;
}

template <typename Scalar>
typename Generator<Scalar>::Frames Generator<Scalar>::decode(const Vec& zK) const {
    if (zK.size() != config_.latent_size) {
        throw InputError("decode: latent length mismatch");
    }
    const Vec hidden = (dec_w1_ * zK + dec_b1_).cwiseMax(Scalar(0));
    const Vec out = dec_w2_ * hidden + dec_b2_;
    return Eigen::Map<const Frames>(out.data(), config_.window, config_.signals);
}

template <typename Scalar>
LatentPass<Scalar> Generator<Scalar>::forward(const Frames& window, const Vec& eps) const {
    LatentPass<Scalar> pass;
    Encoding e = encode(window);
    pass.mu = std::move(e.mu);
    pass.logvar = std::move(e.logvar);
    pass.z0 = reparameterize<Scalar>(pass.mu, pass.logvar, eps);
    pass.zK = flow_.empty() ? pass.z0 : maf_forward(pass.z0);
    pass.reconstruction = decode(pass.zK);
    return pass;
}

template <typename Scalar>
Discriminator<Scalar>::Discriminator(const ModelConfig& config, const DiscriminatorParams& params) {
    check_discriminator(config, params);
    for (std::size_t i = 0; i + 1 < params.arrays.size(); i += 2) {
        weights_.push_back(params.arrays[i].value.cast<Scalar>());
        biases_.push_back(params.arrays[i + 1].value.col(0).cast<Scalar>());
    }
}

template <typename Scalar>
Scalar Discriminator<Scalar>::logit(const Vec& z) const {
    if (z.size() != weights_.front().cols()) {
        throw InputError("discriminate: latent length mismatch");
    }
    Vec a = z;
    for (std::size_t l = 0; l + 1 < weights_.size(); ++l) {
        a = (weights_[l] * a + biases_[l]).cwiseMax(Scalar(0));
    }
    return (weights_.back() * a + biases_.back())(0);
}

template <typename Scalar>
Scalar Discriminator<Scalar>::probability(const Vec& z) const {
    const Scalar p = sigmoid(logit(z));
    // Saturated logits still map strictly inside (0, 1).
    return std::clamp(p, std::numeric_limits<Scalar>::min(), std::nextafter(Scalar(1), Scalar(0)));
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;

Vector draw_epsilon(EpsilonMode mode, Index latent, std::mt19937_64& rng) {
    Vector eps = Vector::Zero(latent);
    if (mode == EpsilonMode::sample) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (Index i = 0; i < latent; ++i) eps(i) = gauss(rng);
    }
    return eps;
}

// Training graph -------------------------------------------------------------

WindowBatch make_batch(std::span<const data::Frames> windows) {
    if (windows.empty()) {
        throw std::invalid_argument("make_batch: no windows");
    }
    const Index T = windows.front().rows();
    const Index N = windows.front().cols();
    const Index B = static_cast<Index>(windows.size());
    WindowBatch batch;
    batch.steps.assign(static_cast<std::size_t>(T), Matrix(N, B));
    batch.targets.resize(T * N, B);
    for (Index b = 0; b < B; ++b) {
        const data::Frames& w = windows[static_cast<std::size_t>(b)];
        if (w.rows() != T || w.cols() != N) {
            throw InputError("make_batch: windows differ in shape");
        }
        for (Index t = 0; t < T; ++t) {
            batch.steps[static_cast<std::size_t>(t)].col(b) = w.row(t).transpose();
        }
        batch.targets.col(b) = Eigen::Map<const Vector>(w.data(), T * N);
    }
    return batch;
}

GeneratorGraph generator_graph(numerics::Tape& tape, std::span<const numerics::Var> params,
                               const ModelConfig& config, const std::vector<MadeMasks>& masks,
                               const WindowBatch& batch, const Matrix& eps) {
    using numerics::Var;
    const Index H = config.hidden_size;
    const Index B = batch.size();
    if (static_cast<Index>(batch.steps.size()) != config.window || batch.steps.front().rows() != config.signals) {
        throw InputError("generator_graph: batch shape does not match config");
    }
    if (eps.rows() != config.latent_size || eps.cols() != B) {
        throw std::invalid_argument("generator_graph: eps must be latent x batch");
    }
    if (params.size() != slot::generator_count(config.flow_layers)) {
        throw std::invalid_argument("generator_graph: parameter count mismatch");
    }

    const Var wx = params[slot::lstm_wx];
    const Var wh = params[slot::lstm_wh];
    const Var lb = params[slot::lstm_b];
    Var h = tape.constant(Matrix::Zero(H, B));
    Var c = tape.constant(Matrix::Zero(H, B));
    for (const Matrix& x : batch.steps) {
        const Var pre = tape.add_colwise(tape.add(tape.matmul(wx, tape.constant(x)), tape.matmul(wh, h)), lb);
        const Var in = tape.sigmoid(tape.rows(pre, 0, H));
        const Var forget = tape.sigmoid(tape.rows(pre, H, H));
        const Var cell = tape.tanh(tape.rows(pre, 2 * H, H));
        const Var out = tape.sigmoid(tape.rows(pre, 3 * H, H));
        c = tape.add(tape.mul(forget, c), tape.mul(in, cell));
        h = tape.mul(out, tape.tanh(c));
    }

    GeneratorGraph g;
    g.mu = tape.add_colwise(tape.matmul(params[slot::mu_w], h), params[slot::mu_b]);
    g.logvar = tape.add_colwise(tape.matmul(params[slot::logvar_w], h), params[slot::logvar_b]);
    const Var sigma = tape.exp(tape.affine(g.logvar, 0.5));
    g.z0 = tape.add(g.mu, tape.mul(sigma, tape.constant(eps)));

    Var z = g.z0;
    if (config.flow_active()) {
        const double scale = std::exp(config.alpha);
        for (int k = 0; k < config.flow_layers; ++k) {
            const MadeMasks& m = masks.at(static_cast<std::size_t>(k));
            const Var w1 = tape.mul(params[slot::flow(k, slot::Part::hidden_w)], tape.constant(m.encoder));
            const Var w2 = tape.mul(params[slot::flow(k, slot::Part::out_w)], tape.constant(m.decoder));
            const Var hidden =
                tape.relu(tape.add_colwise(tape.matmul(w1, z), params[slot::flow(k, slot::Part::hidden_b)]));
            const Var shift = tape.add_colwise(tape.matmul(w2, hidden), params[slot::flow(k, slot::Part::out_b)]);
            z = tape.add(tape.affine(z, scale), shift);
        }
    }
    g.zK = z;

    const int K = config.flow_layers;
    const Var dh = tape.relu(tape.add_colwise(tape.matmul(params[slot::decoder(K, slot::Part::hidden_w)], g.zK),
                                              params[slot::decoder(K, slot::Part::hidden_b)]));
    g.reconstruction = tape.add_colwise(tape.matmul(params[slot::decoder(K, slot::Part::out_w)], dh),
                                        params[slot::decoder(K, slot::Part::out_b)]);
    return g;
}

numerics::Var discriminator_graph(numerics::Tape& tape, std::span<const numerics::Var> params, numerics::Var z) {
    if (params.size() < 2 || params.size() % 2 != 0) {
        throw std::invalid_argument("discriminator_graph: malformed parameter list");
    }
    numerics::Var a = z;
    for (std::size_t i = 0; i + 2 < params.size(); i += 2) {
        a = tape.relu(tape.add_colwise(tape.matmul(params[i], a), params[i + 1]));
    }
    const std::size_t last = params.size() - 2;
    return tape.sigmoid(tape.add_colwise(tape.matmul(params[last], a), params[last + 1]));
}

} // namespace mafaae::model
