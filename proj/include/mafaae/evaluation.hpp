#pragma once

#include "mafaae/checkpoint.hpp"
#include "mafaae/data.hpp"
#include "mafaae/detection.hpp"
#include "mafaae/model.hpp"
#include "mafaae/training.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mafaae::evaluation {

using data::Index;

struct ScoredRecord {
    std::string sample_id;
    data::Label label = data::Label::normal;
    std::optional<std::string> anomaly_type;
    double record_score = 0.0;
    std::vector<double> window_scores;
};

struct ScoringResult {
    std::vector<ScoredRecord> records;
    /// Records shorter than one window.
    std::vector<std::string> skipped;
};

/// Maximum window score. Throws std::invalid_argument when empty.
double record_score(std::span<const double> window_scores);

/// Scores every window of every record; short records are skipped and listed.
ScoringResult score_records(std::span<const data::Record> records, detection::Scorer& scorer,
                            const data::WindowingConfig& windowing,
                            const std::function<void(const std::string&)>& on_warning = {});

/// Probability that a random positive outscores a random negative, ties counting
/// one half. Labels are 1 for anomalous. Throws InputError unless both classes occur.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    /// Records scoring >= threshold are flagged; +inf for the (0, 0) endpoint.
    double threshold = 0.0;
};

/// One point per distinct score (ties grouped), plus the (0, 0) start.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

double trapezoid_area(std::span<const RocPoint> curve);

struct TypeAuroc {
    std::map<std::string, double> per_type;
    double mean = 0.0;
    /// Population std across types.
    double std = 0.0;
};

/// AUROC of each anomaly type against all normal records; unweighted mean and std
/// across types. Anomalous records without a type are grouped as "unknown".
TypeAuroc per_type_auroc(std::span<const ScoredRecord> records);

/// Overall ROC of all records (anomalous vs normal).
std::vector<RocPoint> overall_roc(std::span<const ScoredRecord> records);

nlohmann::json evaluation_report(const ScoringResult& scoring, const TypeAuroc& summary, bool include_roc);

/// Mean of the timings t with Q1 <= t <= Q3 (inclusive linear-interpolation quartiles).
double iqr_mean(std::span<const double> timings);

struct LatencyReport {
    std::vector<double> timings_us;
    double iqr_mean_us = 0.0;
    double q1_us = 0.0;
    double median_us = 0.0;
    double q3_us = 0.0;
    int warmup = 0;
    data::WindowingConfig windowing;
    model::ModelConfig model;
    detection::Precision precision = detection::Precision::f32;
    std::string hardware;
};

nlohmann::json to_json(const LatencyReport& report);

inline constexpr int kMinLatencyRuns = 100;

/// Times normalize -> forward -> score on each window in turn, single-threaded.
/// `repetitions` (>= 100) timed runs follow `warmup` untimed ones.
LatencyReport bench_latency(detection::Scorer& scorer, std::span<const data::Frames> windows,
                            const data::WindowingConfig& windowing, int repetitions, int warmup = 20);

/// CPU model name and logical core count, best effort.
std::string hardware_note();

// Workflows ---------------------------------------------------------------------

enum class Ablation { none, no_sparsity, no_flow };

Ablation parse_ablation(const std::string& name);
const char* to_string(Ablation ablation);

/// no-sparsity: hidden = latent = max(1, N / 2), MADE and discriminator widths
/// rescaled from the new latent size, sparsity off and lambda = 0.
/// no-flow: K = 0 and the flow toggle off.
void apply_ablation(Ablation ablation, model::ModelConfig& model, training::TrainConfig& train);

struct PipelineOptions {
    model::ModelConfig model;
    training::TrainConfig train;
    model::EpsilonMode epsilon_mode = model::EpsilonMode::zero;
    detection::Precision precision = detection::Precision::f32;
    nlohmann::json metadata = nlohmann::json::object();
    std::function<void(const training::EpochLog&)> on_epoch;
};

/// Fits normalization on the (normal-only) training set, trains, and calibrates
/// on the training windows. Returns a complete checkpoint.
model::Checkpoint train_and_calibrate(const data::Dataset& train, const PipelineOptions& options);

struct Evaluation {
    ScoringResult scoring;
    TypeAuroc summary;
};

Evaluation evaluate(const model::Checkpoint& checkpoint, const data::Dataset& test,
                    const data::WindowingConfig& windowing, detection::Precision precision,
                    model::EpsilonMode mode = model::EpsilonMode::zero, std::uint64_t seed = 0);

struct VariantResult {
    Ablation variant = Ablation::none;
    model::ModelConfig model;
    TypeAuroc summary;
};

/// Trains and evaluates the full model and both ablations on the same data.
std::vector<VariantResult> run_ablation(const data::Dataset& train, const data::Dataset& test,
                                        const PipelineOptions& base);

nlohmann::json ablation_report(std::span<const VariantResult> results);

} // namespace mafaae::evaluation
