#include "mafaae/evaluation.hpp"

#include "mafaae/errors.hpp"
#include "mafaae/stats.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

namespace mafaae::evaluation {

double record_score(std::span<const double> window_scores) {
    if (window_scores.empty()) throw std::invalid_argument("record_score: no windows");
    return *std::max_element(window_scores.begin(), window_scores.end());
}

ScoringResult score_records(std::span<const data::Record> records, detection::Scorer& scorer,
                            const data::WindowingConfig& windowing,
                            const std::function<void(const std::string&)>& on_warning) {
    ScoringResult result;
    for (const auto& r : records) {
        if (r.length() < windowing.length) {
            result.skipped.push_back(r.sample_id);
            if (on_warning) {
                on_warning("skipping " + r.sample_id + ": " + std::to_string(r.length()) + " frames < window " +
                           std::to_string(windowing.length));
            }
            continue;
        }
        ScoredRecord s;
        s.sample_id = r.sample_id;
        s.label = r.label;
        s.anomaly_type = r.anomaly_type;
        for (const auto& w : data::sliding_windows(r, windowing)) s.window_scores.push_back(scorer.score(w.values));
        s.record_score = record_score(s.window_scores);
        result.records.push_back(std::move(s));
    }
    return result;
}

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels, std::size_t& pos, std::size_t& neg) {
    if (scores.size() != labels.size()) throw InputError("scores and labels differ in length");
    pos = 0;
    neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw InputError("labels must be 0 or 1");
        if (!std::isfinite(scores[i])) throw InputError("non-finite score");
        (labels[i] == 1 ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) throw InputError("AUROC needs both normal and anomalous records");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    return order;
}

} // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
    std::size_t pos = 0;
    std::size_t neg = 0;
    check_binary(scores, labels, pos, neg);
    // Mann-Whitney U with midranks for ties.
    const auto order = order_by_score(scores);
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) rank_sum += midrank;
        }
        i = j;
    }
    const double p = static_cast<double>(pos);
    const double u = rank_sum - p * (p + 1.0) / 2.0;
    return u / (p * static_cast<double>(neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    std::size_t pos = 0;
    std::size_t neg = 0;
    check_binary(scores, labels, pos, neg);
    auto order = order_by_score(scores);
    std::reverse(order.begin(), order.end());
    std::vector<RocPoint> curve{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double threshold = scores[order[i]];
        while (i < order.size() && scores[order[i]] == threshold) {
            (labels[order[i]] == 1 ? tp : fp) += 1;
            ++i;
        }
        curve.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                         static_cast<double>(tp) / static_cast<double>(pos), threshold});
    }
    return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        area += (curve[i].fpr - curve[i - 1].fpr) * 0.5 * (curve[i].tpr + curve[i - 1].tpr);
    }
    return area;
}

TypeAuroc per_type_auroc(std::span<const ScoredRecord> records) {
    std::vector<double> normal_scores;
    std::map<std::string, std::vector<double>> by_type;
    for (const auto& r : records) {
        if (r.label == data::Label::normal) {
            normal_scores.push_back(r.record_score);
        } else {
            by_type[r.anomaly_type.value_or("unknown")].push_back(r.record_score);
        }
    }
    if (normal_scores.empty()) throw InputError("per-type AUROC needs normal records");
    if (by_type.empty()) throw InputError("per-type AUROC needs anomalous records");
    TypeAuroc out;
    std::vector<double> values;
    for (const auto& [type, anomalous] : by_type) {
        std::vector<double> scores = normal_scores;
        std::vector<int> labels(normal_scores.size(), 0);
        scores.insert(scores.end(), anomalous.begin(), anomalous.end());
        labels.resize(scores.size(), 1);
        const double a = auroc(scores, labels);
        out.per_type[type] = a;
        values.push_back(a);
    }
    out.mean = numerics::mean(values);
    out.std = numerics::population_std(values);
    return out;
}

std::vector<RocPoint> overall_roc(std::span<const ScoredRecord> records) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& r : records) {
        scores.push_back(r.record_score);
        labels.push_back(r.label == data::Label::anomalous ? 1 : 0);
    }
    return roc_curve(scores, labels);
}

nlohmann::json evaluation_report(const ScoringResult& scoring, const TypeAuroc& summary, bool include_roc) {
    nlohmann::json report{
        {"per_type", summary.per_type},
        {"overall_mean", summary.mean},
        {"overall_std", summary.std},
        {"n_records", scoring.records.size()},
        {"n_skipped", scoring.skipped.size()},
        {"skipped", scoring.skipped},
    };
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : scoring.records) {
        records.push_back({{"sample_id", r.sample_id},
                           {"label", data::to_string(r.label)},
                           {"anomaly_type", r.anomaly_type ? nlohmann::json(*r.anomaly_type) : nlohmann::json()},
                           {"record_score", r.record_score}});
    }
    report["records"] = std::move(records);
    if (include_roc) {
        nlohmann::json points = nlohmann::json::array();
        for (const auto& p : overall_roc(scoring.records)) {
            // JSON has no infinity; the start point carries a null threshold.
            points.push_back({{"fpr", p.fpr},
                              {"tpr", p.tpr},
                              {"threshold", std::isfinite(p.threshold) ? nlohmann::json(p.threshold) : nlohmann::json()}});
        }
        report["roc_points"] = std::move(points);
    }
    return report;
}

double iqr_mean(std::span<const double> timings) {
    if (timings.empty()) throw std::invalid_argument("iqr_mean: no timings");
    std::vector<double> sorted(timings.begin(), timings.end());
    std::sort(sorted.begin(), sorted.end());
    const double q1 = numerics::quantile_sorted(sorted, 0.25);
    const double q3 = numerics::quantile_sorted(sorted, 0.75);
    double sum = 0.0;
    std::size_t n = 0;
    for (double t : sorted) {
        if (t >= q1 && t <= q3) {
            sum += t;
            ++n;
        }
    }
    return sum / static_cast<double>(n);
}

nlohmann::json to_json(const LatencyReport& r) {
    return nlohmann::json{
        {"iqr_mean_us", r.iqr_mean_us},
        {"iqr_mean_ms", r.iqr_mean_us / 1000.0},
        {"q1_us", r.q1_us},
        {"median_us", r.median_us},
        {"q3_us", r.q3_us},
        {"repetitions", r.timings_us.size()},
        {"warmup", r.warmup},
        {"window", r.windowing.length},
        {"stride", r.windowing.stride},
        {"signals", r.model.signals},
        {"model_config", r.model},
        {"precision", detection::to_string(r.precision)},
        {"single_threaded", true},
        {"hardware", r.hardware},
        {"timings_us", r.timings_us},
    };
}

LatencyReport bench_latency(detection::Scorer& scorer, std::span<const data::Frames> windows,
                            const data::WindowingConfig& windowing, int repetitions, int warmup) {
    if (repetitions < kMinLatencyRuns) {
        throw InputError("latency benchmark needs at least " + std::to_string(kMinLatencyRuns) + " timed runs");
    }
    if (warmup < 0) throw InputError("warmup must be >= 0");
    if (windows.empty()) throw InputError("latency benchmark needs at least one window");
    volatile double sink = 0.0;
    std::size_t next = 0;
    auto one = [&] {
        sink = sink + scorer.score(windows[next]);
        next = (next + 1) % windows.size();
    };
    for (int i = 0; i < warmup; ++i) one();
    LatencyReport report;
    report.timings_us.reserve(static_cast<std::size_t>(repetitions));
    for (int i = 0; i < repetitions; ++i) {
        const auto start = std::chrono::steady_clock::now();
        one();
        report.timings_us.push_back(
            std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count());
    }
    std::vector<double> sorted = report.timings_us;
    std::sort(sorted.begin(), sorted.end());
    report.q1_us = numerics::quantile_sorted(sorted, 0.25);
    report.median_us = numerics::quantile_sorted(sorted, 0.5);
    report.q3_us = numerics::quantile_sorted(sorted, 0.75);
    report.iqr_mean_us = iqr_mean(report.timings_us);
    report.warmup = warmup;
    report.windowing = windowing;
    report.model = scorer.config();
    report.precision = scorer.precision();
    report.hardware = hardware_note();
    return report;
}

std::string hardware_note() {
    std::string cpu = "unknown CPU";
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', colon + 1));
            break;
        }
    }
    return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) + " logical cores";
}

Ablation parse_ablation(const std::string& name) {
    if (name == "none" || name == "full") return Ablation::none;
    if (name == "no-sparsity") return Ablation::no_sparsity;
    if (name == "no-flow") return Ablation::no_flow;
    throw InputError("ablation must be none, no-sparsity or no-flow, got " + name);
}

const char* to_string(Ablation ablation) {
    switch (ablation) {
    case Ablation::none:
        return "full";
    case Ablation::no_sparsity:
        return "no-sparsity";
    case Ablation::no_flow:
        return "no-flow";
    }
    return "full";
}

void apply_ablation(Ablation ablation, model::ModelConfig& model, training::TrainConfig& train) {
    switch (ablation) {
    case Ablation::none:
        break;
    case Ablation::no_sparsity: {
        const Index compressed = std::max<Index>(1, model.signals / 2);
        model.hidden_size = compressed;
        model.latent_size = compressed;
        model.made_hidden = 2 * compressed;
        model.disc_widths = {2 * compressed, 2 * compressed};
        model.sparsity = false;
        train.lambda = 0.0;
        break;
    }
    case Ablation::no_flow:
        model.flow = false;
        model.flow_layers = 0;
        break;
    }
}

model::Checkpoint train_and_calibrate(const data::Dataset& train, const PipelineOptions& options) {
    if (train.records.empty()) throw InputError("training set is empty");
    data::check_signal_count(train, options.model.signals);
    for (const auto& r : train.records) {
        if (r.label != data::Label::normal) {
            throw InputError("training data must be normal only; " + r.sample_id + " is anomalous");
        }
    }
    const data::NormStats norm = data::fit_normalization(train.records);
    std::vector<data::Record> normalized;
    normalized.reserve(train.records.size());
    for (const auto& r : train.records) normalized.push_back(data::apply_normalization(r, norm));

    auto trained = training::train(normalized, options.model, options.train, options.on_epoch);

    model::Checkpoint ck;
    ck.config = options.model;
    ck.generator = std::move(trained.generator);
    ck.discriminator = std::move(trained.discriminator);
    ck.norm = norm;
    ck.sample_rate_hz = train.sample_rate_hz;
    ck.metadata = options.metadata;

    detection::Scorer scorer(ck, options.precision, options.epsilon_mode, options.train.seed);
    ck.calibration = detection::calibrate(scorer, train.records, options.train.windowing);
    return ck;
}

Evaluation evaluate(const model::Checkpoint& checkpoint, const data::Dataset& test,
                    const data::WindowingConfig& windowing, detection::Precision precision, model::EpsilonMode mode,
                    std::uint64_t seed) {
    data::check_signal_count(test, checkpoint.config.signals);
    detection::Scorer scorer(checkpoint, precision, mode, seed);
    Evaluation out;
    out.scoring = score_records(test.records, scorer, windowing);
    out.summary = per_type_auroc(out.scoring.records);
    return out;
}

std::vector<VariantResult> run_ablation(const data::Dataset& train, const data::Dataset& test,
                                        const PipelineOptions& base) {
    std::vector<VariantResult> results;
    for (Ablation variant : {Ablation::none, Ablation::no_sparsity, Ablation::no_flow}) {
        PipelineOptions options = base;
        apply_ablation(variant, options.model, options.train);
        const auto ck = train_and_calibrate(train, options);
        const auto eval = evaluate(ck, test, options.train.windowing, options.precision, options.epsilon_mode,
                                   options.train.seed);
        results.push_back({variant, options.model, eval.summary});
    }
    return results;
}

nlohmann::json ablation_report(std::span<const VariantResult> results) {
    nlohmann::json variants = nlohmann::json::array();
    for (const auto& r : results) {
        variants.push_back({{"variant", to_string(r.variant)},
                            {"model_config", r.model},
                            {"per_type", r.summary.per_type},
                            {"overall_mean", r.summary.mean},
                            {"overall_std", r.summary.std}});
    }
    return nlohmann::json{{"variants", variants}};
}

} // namespace mafaae::evaluation
