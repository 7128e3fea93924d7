#pragma once

// Sparse MAF-AAE networks.
//
// Generator: LSTM encoder -> (mu, logvar) heads -> z0 = mu + exp(logvar / 2) * eps
//            -> K masked autoregressive flow layers z_k = z_{k-1} * exp(alpha) + made_k(z_{k-1})
//            -> decoder z_K -> hidden (ReLU) -> T_W * N reconstruction.
// Discriminator: ReLU MLP on a latent vector with a sigmoid output.
//
// Parameters live in flat ParamSets so the optimizer and checkpoint code can
// treat them uniformly; the slot helpers below name each array's position.
// Two forward implementations exist: Generator<Scalar> for inference (float or
// double, no tape) and generator_graph() for training on a numerics::Tape.

#include "mafaae/autodiff.hpp"
#include "mafaae/data.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace mafaae::model {

using numerics::Index;
using numerics::Matrix;
using numerics::Vector;

struct ModelConfig {
    Index signals = 12;
    Index window = 150;
    Index hidden_size = 24;
    Index latent_size = 24;
    int flow_layers = 3;
    Index made_hidden = 48;
    std::vector<Index> disc_widths{48, 48};
    /// Fixed log-scale of every flow layer.
    double alpha = 0.0;
    /// Enables the L1 term during training.
    bool sparsity = true;
    /// When off, z_K = z_0 regardless of flow_layers.
    bool flow = true;
    /// Extends the L1 term from the encoder to the flow (MADE) parameters.
    bool l1_include_flow = false;

    /// Defaults derived from the signal count: hidden = latent = 2N,
    /// made_hidden = 2 * latent, discriminator widths {2 * latent, 2 * latent}.
    static ModelConfig for_signals(Index signals, Index window);

    void validate() const;
    bool flow_active() const { return flow && flow_layers > 0; }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Binary MADE masks. encoder: made_hidden x latent, decoder: latent x made_hidden.
struct MadeMasks {
    Matrix encoder;
    Matrix decoder;
};

/// Degree-based masks: hidden unit h has degree (h mod (D - 1)) + 1; input j feeds
/// hidden degree d iff j < d; hidden degree d feeds output i iff d <= i (0-based i).
MadeMasks make_made_masks(Index latent, Index hidden);

/// Throws std::logic_error unless decoder * encoder connectivity is strictly lower triangular.
void check_made_masks(const MadeMasks& masks);

/// Positions of generator arrays inside GeneratorParams::arrays.
namespace slot {
inline constexpr std::size_t lstm_wx = 0;
inline constexpr std::size_t lstm_wh = 1;
inline constexpr std::size_t lstm_b = 2;
inline constexpr std::size_t mu_w = 3;
inline constexpr std::size_t mu_b = 4;
inline constexpr std::size_t logvar_w = 5;
inline constexpr std::size_t logvar_b = 6;
inline constexpr std::size_t encoder_end = 7;

enum class Part : std::size_t { hidden_w = 0, hidden_b = 1, out_w = 2, out_b = 3 };

inline std::size_t flow(int layer, Part part) {
    return encoder_end + 4 * static_cast<std::size_t>(layer) + static_cast<std::size_t>(part);
}
inline std::size_t decoder(int flow_layers, Part part) { return flow(flow_layers, part); }
inline std::size_t generator_count(int flow_layers) { return flow(flow_layers + 1, Part::hidden_w); }
} // namespace slot

struct GeneratorParams {
    numerics::ParamSet arrays;
    std::vector<MadeMasks> masks;

    const Matrix& at(std::size_t s) const { return arrays[s].value; }
    Matrix& at(std::size_t s) { return arrays[s].value; }
};

/// Layers in order: hidden layers (w, b) per disc_widths, then the 1-wide output (w, b).
struct DiscriminatorParams {
    numerics::ParamSet arrays;
};

/// Uniform(+-1/sqrt(fan_in)) initialization. Biases are exempt from weight decay.
GeneratorParams init_generator(const ModelConfig& config, std::uint64_t seed);
DiscriminatorParams init_discriminator(const ModelConfig& config, std::uint64_t seed);

/// Zero-filled arrays with the right shapes and valid masks.
GeneratorParams zero_generator(const ModelConfig& config);
DiscriminatorParams zero_discriminator(const ModelConfig& config);

/// Checks array names, shapes and finiteness against the config; rebuilds masks.
void check_generator(const ModelConfig& config, GeneratorParams& params);
void check_discriminator(const ModelConfig& config, const DiscriminatorParams& params);

/// Arrays covered by the sparsity penalty: the LSTM and both distribution heads,
/// plus the flow when `l1_include_flow` is set.
bool in_l1_set(const ModelConfig& config, std::size_t slot_index);

enum class EpsilonMode { zero, sample };

template <typename Scalar>
struct LatentPass {
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using Frames = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Vec mu;
    Vec logvar;
    Vec z0;
    Vec zK;
    Frames reconstruction;
};

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> reparameterize(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& mu,
                                                        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& logvar,
                                                        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& eps) {
    if (mu.size() != logvar.size() || mu.size() != eps.size()) {
        throw std::invalid_argument("reparameterize: length mismatch");
    }
    return (mu.array() + (logvar.array() * Scalar(0.5)).exp() * eps.array()).matrix();
}

/// Read-only generator with weights cast to Scalar and masks pre-applied.
template <typename Scalar>
class Generator {
public:
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using Frames = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    Generator(const ModelConfig& config, const GeneratorParams& params);

    const ModelConfig& config() const { return config_; }

    struct Encoding {
        Vec mu;
        Vec logvar;
    };

    Encoding encode(const Frames& window) const;
    Vec made_forward(int layer, const Vec& z) const;
    Vec maf_forward(const Vec& z0) const;
    /// Solves each layer coordinate by coordinate in autoregressive order.
    Vec maf_inverse(const Vec& zK) const;
    Frames decode(const Vec& zK) const;
    LatentPass<Scalar> forward(const Frames& window, const Vec& eps) const;

private:
    struct Made {
        Mat w1;
        Vec b1;
        Mat w2;
        Vec b2;
    };

    ModelConfig config_;
    Mat lstm_wx_;
    Mat lstm_wh_;
    Vec lstm_b_;
    Mat mu_w_;
    Vec mu_b_;
    Mat logvar_w_;
    Vec logvar_b_;
    std::vector<Made> flow_;
    Scalar flow_scale_ = 1;
    Mat dec_w1_;
    Vec dec_b1_;
    Mat dec_w2_;
    Vec dec_b2_;
};

template <typename Scalar>
class Discriminator {
public:
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Discriminator(const ModelConfig& config, const DiscriminatorParams& params);

    Scalar logit(const Vec& z) const;
    /// Probability in (0, 1) that z came from the prior.
    Scalar probability(const Vec& z) const;

private:
    std::vector<Mat> weights_;
    std::vector<Vec> biases_;
};

extern template class Generator<float>;
extern template class Generator<double>;
extern template class Discriminator<float>;
extern template class Discriminator<double>;

/// epsilon for one pass: zeros, or standard normal draws from `rng`.
Vector draw_epsilon(EpsilonMode mode, Index latent, std::mt19937_64& rng);

// Training graph -------------------------------------------------------------

/// Windows stacked as columns. steps[t] is N x B (time step t of every window);
/// targets is (T_W * N) x B with row index t * N + j.
struct WindowBatch {
    std::vector<Matrix> steps;
    Matrix targets;

    Index size() const { return targets.cols(); }
};

WindowBatch make_batch(std::span<const data::Frames> windows);

struct GeneratorGraph {
    numerics::Var mu;
    numerics::Var logvar;
    numerics::Var z0;
    numerics::Var zK;
    /// (T_W * N) x B, same layout as WindowBatch::targets.
    numerics::Var reconstruction;
};

/// Generator forward on a tape for a batch of windows; `eps` is latent x B.
GeneratorGraph generator_graph(numerics::Tape& tape, std::span<const numerics::Var> params,
                               const ModelConfig& config, const std::vector<MadeMasks>& masks,
                               const WindowBatch& batch, const Matrix& eps);

/// Discriminator probabilities (1 x B) on a tape for latent columns `z`.
numerics::Var discriminator_graph(numerics::Tape& tape, std::span<const numerics::Var> params, numerics::Var z);

} // namespace mafaae::model
