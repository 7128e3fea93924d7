#pragma once

// Synthetic multichannel "torque-like" recordings for desk-scale verification.
//
// Every feature is an offset plus two sinusoids whose frequencies and phases are
// fixed by `shape_seed`, so datasets drawn with different `seed`s share the same
// task morphology. Each record gets a shared time shift, a shared amplitude
// scale and Gaussian noise. Anomalous records add one archetype on top of the
// record's normal base signal.

#include "mafaae/data.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mafaae::data {

enum class AnomalyKind { spike, drift, dropout };

AnomalyKind parse_anomaly_kind(const std::string& name);
const char* to_string(AnomalyKind kind);

struct SynthConfig {
    int num_normal = 200;
    int num_anomalous = 0;
    Index length = 300;
    Index signals = 12;
    std::vector<std::string> anomaly_kinds{"spike", "drift", "dropout"};
    std::uint64_t seed = 0;
    std::uint64_t shape_seed = 0;
    double sample_rate_hz = 100.0;
    /// Noise std relative to each feature's signal std.
    double noise = 0.05;
    /// Frames of shared time shift, drawn uniformly in [-jitter, jitter].
    double jitter = 4.0;

    void validate() const;
};

struct AnomalySpec {
    AnomalyKind kind = AnomalyKind::spike;
    /// Affected features; chosen at random when empty.
    std::vector<Index> features;
    /// In units of the feature's signal std (unused by dropout).
    double magnitude = 5.0;
};

AnomalySpec default_anomaly(AnomalyKind kind);

struct SignalShape {
    Eigen::VectorXd offset;
    Eigen::MatrixXd amplitude; // signals x 2
    Eigen::MatrixXd cycles;    // signals x 2, cycles per record length
    Eigen::MatrixXd phase;     // signals x 2
    /// Std of each feature's noiseless base signal.
    Eigen::VectorXd sigma;
};

SignalShape make_shape(Index signals, std::uint64_t shape_seed);

/// Record `index` of the dataset described by `config`. The normal base signal
/// depends only on (seed, shape, index), so passing an anomaly yields the
/// anomalous counterpart of the same normal record.
Record synth_record(const SynthConfig& config, const SignalShape& shape, int index,
                    const std::optional<AnomalySpec>& anomaly);

/// `num_normal` normal records followed by `num_anomalous` anomalous ones, the
/// latter cycling through `anomaly_kinds`. Bit-reproducible per seed.
Dataset synth_generate(const SynthConfig& config);

/// Independent per-purpose seed derived from a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct SynthSplit {
    Dataset train;
    Dataset test;
};

/// Normal-only training set and a mixed test set sharing `base.shape_seed`.
/// Record seeds are derived from `base.seed`; `base` counts are ignored.
SynthSplit synth_split(const SynthConfig& base, int train_normal, int test_normal, int test_anomalous);

} // namespace mafaae::data
