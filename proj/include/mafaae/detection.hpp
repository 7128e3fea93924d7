#pragma once

#include "mafaae/calibration.hpp"
#include "mafaae/checkpoint.hpp"
#include "mafaae/data.hpp"
#include "mafaae/model.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <istream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace mafaae::detection {

using data::Frames;
using data::Index;

/// Sum of absolute entrywise differences. Throws InputError on shape mismatch.
double l1_error(const Frames& window, const Frames& reconstruction);

/// Population mean and floored std of `errors`; stores the standardized
/// errors sorted ascending. Throws InputError with fewer than 2 errors.
CalibrationStats calibration_from_errors(std::span<const double> errors, model::EpsilonMode mode);

/// (l1 - mu_normal) / sigma_normal.
double anomaly_score(double l1, const CalibrationStats& stats);

/// Strict: a score equal to the threshold is not anomalous.
inline bool classify(double score, double threshold) { return score > threshold; }

/// Threshold whose exceedance rate on the calibration scores is about `target_fpr`:
/// the (1 - target_fpr) inclusive quantile. target_fpr in (0, 1).
double threshold_for_fpr(const CalibrationStats& stats, double target_fpr);

enum class Precision { f32, f64 };

Precision parse_precision(const std::string& name);
const char* to_string(Precision precision);

/// Window scoring against one checkpoint: normalize, run the generator, take the
/// L1 error in normalized space and standardize it.
class Scorer {
public:
    /// `seed` only matters in sampled epsilon mode.
    Scorer(const model::Checkpoint& checkpoint, Precision precision = Precision::f32,
           model::EpsilonMode mode = model::EpsilonMode::zero, std::uint64_t seed = 0);

    const model::ModelConfig& config() const { return config_; }
    const data::NormStats& norm() const { return norm_; }
    double sample_rate_hz() const { return sample_rate_hz_; }
    model::EpsilonMode epsilon_mode() const { return mode_; }
    Precision precision() const { return precision_; }
    bool calibrated() const { return calibration_.has_value(); }
    const CalibrationStats& calibration() const;
    void set_calibration(CalibrationStats stats);

    /// L1 reconstruction error of a raw (unnormalized) T_W x N window.
    double window_error(const Frames& raw_window);

    /// Anomaly score of a raw window. Throws InputError without calibration or
    /// when the calibration was computed in a different epsilon mode.
    double score(const Frames& raw_window);

private:
    model::ModelConfig config_;
    data::NormStats norm_;
    double sample_rate_hz_;
    model::EpsilonMode mode_;
    Precision precision_;
    std::optional<CalibrationStats> calibration_;
    std::variant<model::Generator<float>, model::Generator<double>> generator_;
    std::mt19937_64 rng_;
};

/// Errors over every window of every record, then calibration_from_errors.
CalibrationStats calibrate(Scorer& scorer, std::span<const data::Record> normal_records,
                           const data::WindowingConfig& windowing);

struct DetectorConfig {
    double threshold = 0.0;
    data::WindowingConfig windowing;

    void validate() const;
};

struct Verdict {
    Index window_start = 0;
    double score = 0.0;
    bool is_anomaly = false;
    double inference_us = 0.0;
};

nlohmann::json to_json_line(const Verdict& verdict);

/// Ring buffer of the last T_W frames; scores a window every T_S frames once full.
class StreamDetector {
public:
    using WarningSink = std::function<void(const std::string&)>;

    StreamDetector(Scorer& scorer, DetectorConfig config, WarningSink on_warning = {});

    /// Feeds the next frame. Throws StreamError on a wrong frame width.
    std::optional<Verdict> push(std::span<const double> frame);

    /// As push(frame), but also requires frame_idx to equal the number of frames received so far.
    std::optional<Verdict> push(Index frame_idx, std::span<const double> frame);

    Index received() const { return received_; }
    std::size_t deadline_misses() const { return deadline_misses_; }

private:
    Verdict emit();

    Scorer& scorer_;
    DetectorConfig config_;
    WarningSink on_warning_;
    Frames ring_;
    Frames window_;
    Index received_ = 0;
    double budget_us_;
    std::size_t deadline_misses_ = 0;
};

/// Verdicts expected from `frames` frames: floor((frames - T_W) / T_S) + 1, or 0.
Index expected_verdicts(Index frames, const data::WindowingConfig& windowing);

/// Parses `frame_idx,sig_0,...,sig_{N-1}`. Throws StreamError.
std::pair<Index, std::vector<double>> parse_frame_line(const std::string& line, Index signals);

/// Reads frame lines until end of input, writing one JSON line per verdict.
/// Blank lines are ignored. Returns the number of verdicts written.
std::size_t run_stream(std::istream& in, StreamDetector& detector, std::ostream& out);

} // namespace mafaae::detection
