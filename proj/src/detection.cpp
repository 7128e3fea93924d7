#include "mafaae/detection.hpp"

#include "mafaae/errors.hpp"
#include "mafaae/stats.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ostream>

namespace mafaae::detection {

double l1_error(const Frames& window, const Frames& reconstruction) {
    if (window.rows() != reconstruction.rows() || window.cols() != reconstruction.cols()) {
        throw InputError("l1_error: shape mismatch (" + std::to_string(window.rows()) + "x" +
                         std::to_string(window.cols()) + " vs " + std::to_string(reconstruction.rows()) + "x" +
                         std::to_string(reconstruction.cols()) + ")");
    }
    return (window - reconstruction).cwiseAbs().sum();
}

CalibrationStats calibration_from_errors(std::span<const double> errors, model::EpsilonMode mode) {
    if (errors.size() < 2) {
        throw InputError("calibration needs at least 2 windows, got " + std::to_string(errors.size()));
    }
    CalibrationStats stats;
    stats.mu_normal = numerics::mean(errors);
    stats.sigma_normal = std::max(numerics::population_std(errors), kSigmaFloor);
    stats.epsilon_mode = mode;
    stats.windows = errors.size();
    stats.scores.reserve(errors.size());
    for (double e : errors) stats.scores.push_back(anomaly_score(e, stats));
    std::sort(stats.scores.begin(), stats.scores.end());
    return stats;
}

double anomaly_score(double l1, const CalibrationStats& stats) { return (l1 - stats.mu_normal) / stats.sigma_normal; }

double threshold_for_fpr(const CalibrationStats& stats, double target_fpr) {
    if (!(target_fpr > 0.0 && target_fpr < 1.0)) throw InputError("target FPR must lie in (0, 1)");
    if (stats.scores.empty()) throw InputError("calibration carries no scores; recalibrate to use a target FPR");
    return numerics::quantile_sorted(stats.scores, 1.0 - target_fpr);
}

Precision parse_precision(const std::string& name) {
    if (name == "f32" || name == "float32") return Precision::f32;
    if (name == "f64" || name == "float64") return Precision::f64;
    throw InputError("precision must be f32 or f64, got " + name);
}

const char* to_string(Precision precision) { return precision == Precision::f32 ? "float32" : "float64"; }

namespace {

std::variant<model::Generator<float>, model::Generator<double>> make_generator(const model::Checkpoint& ck,
                                                                                Precision precision) {
    if (precision == Precision::f32) {
        return std::variant<model::Generator<float>, model::Generator<double>>(
            std::in_place_type<model::Generator<float>>, ck.config, ck.generator);
    }
    return std::variant<model::Generator<float>, model::Generator<double>>(
        std::in_place_type<model::Generator<double>>, ck.config, ck.generator);
}

} // namespace

Scorer::Scorer(const model::Checkpoint& checkpoint, Precision precision, model::EpsilonMode mode, std::uint64_t seed)
    : config_(checkpoint.config), norm_(checkpoint.norm), sample_rate_hz_(checkpoint.sample_rate_hz), mode_(mode),
      precision_(precision), calibration_(checkpoint.calibration), generator_(make_generator(checkpoint, precision)),
      rng_(seed) {}

const CalibrationStats& Scorer::calibration() const {
    if (!calibration_) throw InputError("checkpoint is not calibrated");
    return *calibration_;
}

void Scorer::set_calibration(CalibrationStats stats) { calibration_ = std::move(stats); }

double Scorer::window_error(const Frames& raw_window) {
    if (raw_window.rows() != config_.window || raw_window.cols() != config_.signals) {
        throw InputError("window must be " + std::to_string(config_.window) + "x" + std::to_string(config_.signals));
    }
    return std::visit(
        [&](const auto& gen) {
            using Gen = std::decay_t<decltype(gen)>;
            using S = typename Gen::Mat::Scalar;
            typename Gen::Frames w(raw_window.rows(), raw_window.cols());
            for (Index t = 0; t < w.rows(); ++t) {
                for (Index j = 0; j < w.cols(); ++j) {
                    w(t, j) = static_cast<S>((raw_window(t, j) - norm_.mean(j)) / norm_.std(j));
                }
            }
            const typename Gen::Vec eps = model::draw_epsilon(mode_, config_.latent_size, rng_).template cast<S>();
            const auto pass = gen.forward(w, eps);
            double total = 0.0;
            for (Index i = 0; i < w.size(); ++i) {
                total += static_cast<double>(std::abs(w.data()[i] - pass.reconstruction.data()[i]));
            }
            return total;
        },
        generator_);
}

double Scorer::score(const Frames& raw_window) {
    const CalibrationStats& stats = calibration();
    if (stats.epsilon_mode != mode_) {
        throw InputError(std::string("calibration was computed with epsilon mode ") + to_string(stats.epsilon_mode) +
                         " but scoring uses " + to_string(mode_));
    }
    return anomaly_score(window_error(raw_window), stats);
}

CalibrationStats calibrate(Scorer& scorer, std::span<const data::Record> normal_records,
                           const data::WindowingConfig& windowing) {
    std::vector<double> errors;
    for (const auto& r : normal_records) {
        if (r.label != data::Label::normal) {
            throw InputError("calibration data must be normal only; " + r.sample_id + " is anomalous");
        }
        if (r.length() < windowing.length) continue;
        for (const auto& w : data::sliding_windows(r, windowing)) errors.push_back(scorer.window_error(w.values));
    }
    return calibration_from_errors(errors, scorer.epsilon_mode());
}

void DetectorConfig::validate() const {
    if (!std::isfinite(threshold)) throw InputError("threshold must be finite");
    windowing.validate();
}

nlohmann::json to_json_line(const Verdict& v) {
    return nlohmann::json{
        {"window_start", v.window_start},
        {"score", v.score},
        {"is_anomaly", v.is_anomaly},
        {"inference_us", v.inference_us},
    };
}

StreamDetector::StreamDetector(Scorer& scorer, DetectorConfig config, WarningSink on_warning)
    : scorer_(scorer), config_(std::move(config)), on_warning_(std::move(on_warning)) {
    config_.validate();
    if (config_.windowing.length != scorer_.config().window) {
        throw InputError("detector window length differs from the model window");
    }
    ring_.setZero(config_.windowing.length, scorer_.config().signals);
    window_.setZero(config_.windowing.length, scorer_.config().signals);
    budget_us_ = 1e6 * static_cast<double>(config_.windowing.stride) / scorer_.sample_rate_hz();
}

std::optional<Verdict> StreamDetector::push(std::span<const double> frame) {
    const Index n = scorer_.config().signals;
    if (static_cast<Index>(frame.size()) != n) {
        throw StreamError("frame " + std::to_string(received_) + " has " + std::to_string(frame.size()) +
                          " values, expected " + std::to_string(n));
    }
    const Index slot = received_ % config_.windowing.length;
    for (Index j = 0; j < n; ++j) ring_(slot, j) = frame[static_cast<std::size_t>(j)];
    ++received_;
    const Index t_w = config_.windowing.length;
    if (received_ < t_w || (received_ - t_w) % config_.windowing.stride != 0) return std::nullopt;
    return emit();
}

std::optional<Verdict> StreamDetector::push(Index frame_idx, std::span<const double> frame) {
    if (frame_idx != received_) {
        throw StreamError("expected frame_idx " + std::to_string(received_) + ", got " + std::to_string(frame_idx));
    }
    return push(frame);
}

Verdict StreamDetector::emit() {
    const auto start = std::chrono::steady_clock::now();
    const Index t_w = config_.windowing.length;
    const Index oldest = received_ % t_w;
    for (Index t = 0; t < t_w; ++t) window_.row(t) = ring_.row((oldest + t) % t_w);
    Verdict v;
    v.window_start = received_ - t_w;
    v.score = scorer_.score(window_);
    v.is_anomaly = classify(v.score, config_.threshold);
    v.inference_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
    if (v.inference_us > budget_us_) {
        ++deadline_misses_;
        if (on_warning_) {
            on_warning_("inference for window at " + std::to_string(v.window_start) + " took " +
                        std::to_string(v.inference_us) + " us, over the " + std::to_string(budget_us_) +
                        " us stride period");
        }
    }
    return v;
}

Index expected_verdicts(Index frames, const data::WindowingConfig& windowing) {
    if (frames < windowing.length) return 0;
    return (frames - windowing.length) / windowing.stride + 1;
}

std::pair<Index, std::vector<double>> parse_frame_line(const std::string& line, Index signals) {
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (!rest.empty() && (rest.back() == '\r' || rest.back() == ' ')) rest.remove_suffix(1);
    for (;;) {
        const auto comma = rest.find(',');
        fields.push_back(rest.substr(0, comma));
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
    }
    if (static_cast<Index>(fields.size()) != signals + 1) {
        throw StreamError("frame line has " + std::to_string(fields.size() - 1) + " signal values, expected " +
                          std::to_string(signals));
    }
    Index idx = 0;
    {
        const auto f = fields[0];
        const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), idx);
        if (ec != std::errc() || ptr != f.data() + f.size() || idx < 0) {
            throw StreamError("bad frame_idx '" + std::string(f) + "'");
        }
    }
    std::vector<double> values(static_cast<std::size_t>(signals));
    for (std::size_t k = 1; k < fields.size(); ++k) {
        const auto f = fields[k];
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
        if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
            throw StreamError("frame " + std::to_string(idx) + ": bad value '" + std::string(f) + "'");
        }
        values[k - 1] = v;
    }
    return {idx, std::move(values)};
}

std::size_t run_stream(std::istream& in, StreamDetector& detector, std::ostream& out) {
    std::size_t written = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        // A header such as "frame_idx,sig_0,..." is tolerated as the first line only.
        if (detector.received() == 0 && written == 0 && line.rfind("frame_idx", 0) == 0) continue;
        // Width is checked by the detector so the error names the frame.
        auto [idx, values] = parse_frame_line(line, static_cast<Index>(std::count(line.begin(), line.end(), ',')));
        if (auto v = detector.push(idx, values)) {
            out << to_json_line(*v).dump() << '\n';
            out.flush();
            ++written;
        }
    }
    return written;
}

} // namespace mafaae::detection
