#pragma once

#include "mafaae/autodiff.hpp"
#include "mafaae/data.hpp"
#include "mafaae/model.hpp"
#include "mafaae/optim.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace mafaae::training {

using numerics::Matrix;
using numerics::Vector;
using numerics::Index;

/// BCE inputs are clamped to [p_min, 1 - p_min].
inline constexpr double kProbabilityFloor = 1e-7;

struct TrainConfig {
    int epochs = 15;
    int batch_size = 8;
    numerics::ScheduleConfig schedule;
    numerics::AdamWConfig adamw;
    /// Sparsity coefficient on encoder parameters.
    double lambda = 1e-4;
    /// Final weight of the adversarial term; annealed linearly from 0.
    double beta_max = 1.0;
    std::size_t prior_capacity = 4096;
    data::WindowingConfig windowing;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Per-window losses on plain values --------------------------------------------

/// Sum of squared differences over every entry.
double loss_mse(const data::Frames& window, const data::Frames& reconstruction);

/// lambda * sum |w| over the L1-covered generator arrays.
double loss_sparsity(const model::ModelConfig& config, const model::GeneratorParams& params, double lambda);

/// -ln(p) or -ln(1 - p) with p clamped to [p_min, 1 - p_min].
double bce(double probability, bool target);

/// beta * BCE(D(z_K), 1).
double loss_adversarial_g(const Vector& zK, const model::Discriminator<double>& disc, double beta);

struct GeneratorLoss {
    double mse = 0.0;
    double l1 = 0.0;
    double bce = 0.0;

    double total() const { return mse + l1 + bce; }
};

GeneratorLoss loss_generator(const model::LatentPass<double>& pass, const data::Frames& window,
                             const model::ModelConfig& config, const model::GeneratorParams& params,
                             const model::Discriminator<double>& disc, double lambda, double beta);

/// 1/2 [mean BCE(D(z_prior), 1) + mean BCE(D(z_K), 0)].
double loss_discriminator(std::span<const Vector> prior, std::span<const Vector> zK,
                          const model::Discriminator<double>& disc);

/// Linear ramp from 0 at epoch 0 to beta_max at the last epoch.
double beta_schedule(int epoch, const TrainConfig& config);

// Batched losses on a tape ------------------------------------------------------

struct BatchLossVars {
    numerics::Var total;
    numerics::Var mse;
    numerics::Var l1;
    numerics::Var bce;
};

/// Mean over the batch of the per-window generator loss. `disc` vars are
/// normally constants so only generator gradients are produced.
BatchLossVars generator_batch_loss(numerics::Tape& tape, std::span<const numerics::Var> gen,
                                   std::span<const numerics::Var> disc, const model::ModelConfig& config,
                                   const model::GeneratorGraph& graph, const model::WindowBatch& batch,
                                   double lambda, double beta);

/// Discriminator loss with prior samples and generated latents given as columns.
numerics::Var discriminator_batch_loss(numerics::Tape& tape, std::span<const numerics::Var> disc,
                                       numerics::Var prior, numerics::Var zK);

// Prior buffer ------------------------------------------------------------------

/// Bounded FIFO of latents from earlier generator passes, used as prior samples.
class PriorBuffer {
public:
    struct Entry {
        Vector z;
        std::uint64_t step = 0;
    };

    explicit PriorBuffer(std::size_t capacity = 4096);

    /// Appends every column of `latents`, tagged with the step that produced them.
    void push(const Matrix& latents, std::uint64_t step);

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return entries_.empty(); }
    const std::deque<Entry>& entries() const { return entries_; }

private:
    std::size_t capacity_;
    std::deque<Entry> entries_;
};

/// `count` columns of length `latent`: uniform draws with replacement from the
/// buffer, or standard-normal samples while it is still empty.
Matrix sample_prior(const PriorBuffer& buffer, Index count, Index latent, std::mt19937_64& rng);

// Training loop -----------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double mean_mse = 0.0;
    double mean_l1 = 0.0;
    double mean_bce = 0.0;
    double mean_generator = 0.0;
    double mean_discriminator = 0.0;
    double eta = 0.0;
    double beta = 0.0;
    double wall_time_s = 0.0;
    std::size_t windows = 0;
};

nlohmann::json to_json_line(const EpochLog& log);

struct StepStats {
    std::size_t windows = 0;
    double mse = 0.0;
    double l1 = 0.0;
    double bce = 0.0;
    double generator = 0.0;
    double discriminator = 0.0;
};

/// Owns both networks, their optimizer states and the prior buffer.
class Trainer {
public:
    Trainer(const model::ModelConfig& model_config, const TrainConfig& train_config);

    /// One batch: window every record, accumulate both losses over all windows,
    /// then one AdamW step for G and one for D, both from pre-update values.
    StepStats step(std::span<const data::Record* const> batch, int epoch);

    /// Runs every epoch over `records` (normalized, normal only).
    std::vector<EpochLog> run(std::span<const data::Record> records,
                              const std::function<void(const EpochLog&)>& on_epoch = {});

    const model::GeneratorParams& generator() const { return generator_; }
    const model::DiscriminatorParams& discriminator() const { return discriminator_; }
    const numerics::OptimizerState& generator_optimizer() const { return g_state_; }
    const numerics::OptimizerState& discriminator_optimizer() const { return d_state_; }
    const PriorBuffer& prior() const { return prior_; }

private:
    model::ModelConfig model_config_;
    TrainConfig config_;
    model::GeneratorParams generator_;
    model::DiscriminatorParams discriminator_;
    numerics::OptimizerState g_state_;
    numerics::OptimizerState d_state_;
    PriorBuffer prior_;
    std::mt19937_64 rng_;
    std::uint64_t steps_ = 0;
};

struct TrainResult {
    model::GeneratorParams generator;
    model::DiscriminatorParams discriminator;
    std::vector<EpochLog> log;
};

/// Throws InputError if any record is anomalous or shorter than a window.
TrainResult train(std::span<const data::Record> records, const model::ModelConfig& model_config,
                  const TrainConfig& train_config, const std::function<void(const EpochLog&)>& on_epoch = {});

} // namespace mafaae::training
