#pragma once

#include "mafaae/detection.hpp"
#include "mafaae/evaluation.hpp"
#include "mafaae/model.hpp"
#include "mafaae/synth.hpp"
#include "mafaae/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>

namespace mafaae::cli {

/// Everything a command needs, loaded from a JSON file and overridden by flags.
///
/// {
///   "seed": 0,
///   "model": { ModelConfig overrides; sizes default from the data's signal count },
///   "train": { TrainConfig fields },
///   "detector": { "threshold", "target_fpr", "epsilon_mode", "precision" },
///   "data": { "freq_downsample", "ablation" },
///   "synth": { SynthConfig fields, "train_normal", "test_normal", "test_anomalous" },
///   "bench": { "repetitions", "warmup" }
/// }
struct RunConfig {
    std::uint64_t seed = 0;
    nlohmann::json model_overrides = nlohmann::json::object();
    training::TrainConfig train;
    std::optional<double> threshold;
    std::optional<double> target_fpr;
    model::EpsilonMode epsilon_mode = model::EpsilonMode::zero;
    detection::Precision precision = detection::Precision::f32;
    int freq_downsample = 1;
    evaluation::Ablation ablation = evaluation::Ablation::none;
    data::SynthConfig synth;
    int train_normal = 200;
    int test_normal = 50;
    int test_anomalous = 50;
    int bench_repetitions = 200;
    int bench_warmup = 20;

    /// Throws InputError on any invalid field.
    void validate() const;

    /// Model sized for `signals`, with overrides and the ablation applied; the
    /// ablation may also change `train`, which is returned alongside.
    std::pair<model::ModelConfig, training::TrainConfig> resolve(data::Index signals) const;

    /// Seeds propagated into the training and synthetic sections.
    void apply_seed(std::uint64_t run_seed);
};

/// Throws InputError on unknown keys, wrong types or invalid values.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);

RunConfig load_run_config(const std::filesystem::path& path);

} // namespace mafaae::cli
