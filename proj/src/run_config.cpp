#include "mafaae/run_config.hpp"

#include "mafaae/errors.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace mafaae::cli {

namespace {

using nlohmann::json;

void require_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw InputError(std::string("config section '") + section + "' must be an object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
        if (!keys.count(key)) throw InputError(std::string("unknown config key '") + section + "." + key + "'");
    }
}

json synth_to_json(const data::SynthConfig& s) {
    return json{
        {"length", s.length},     {"signals", s.signals},     {"anomaly_kinds", s.anomaly_kinds},
        {"shape_seed", s.shape_seed}, {"sample_rate_hz", s.sample_rate_hz}, {"noise", s.noise},
        {"jitter", s.jitter},
    };
}

} // namespace

void RunConfig::validate() const {
    train.validate();
    synth.validate();
    for (const auto& k : synth.anomaly_kinds) data::parse_anomaly_kind(k);
    if (threshold && !std::isfinite(*threshold)) throw InputError("threshold must be finite");
    if (target_fpr && !(*target_fpr > 0.0 && *target_fpr < 1.0)) throw InputError("target_fpr must lie in (0, 1)");
    if (threshold && target_fpr) throw InputError("give either a threshold or a target FPR, not both");
    if (freq_downsample < 1) throw InputError("freq_downsample must be >= 1");
    if (train_normal < 1 || test_normal < 0 || test_anomalous < 0) throw InputError("synthetic record counts invalid");
    if (bench_repetitions < evaluation::kMinLatencyRuns) {
        throw InputError("bench repetitions must be >= " + std::to_string(evaluation::kMinLatencyRuns));
    }
    if (bench_warmup < 0) throw InputError("bench warmup must be >= 0");
    // Surfaces bad model overrides before any work starts.
    resolve(model_overrides.value("signals", synth.signals));
}

std::pair<model::ModelConfig, training::TrainConfig> RunConfig::resolve(data::Index signals) const {
    json m = model_overrides;
    if (m.contains("signals") && m.at("signals").get<data::Index>() != signals) {
        throw InputError("config model.signals (" + m.at("signals").dump() + ") does not match the data (" +
                         std::to_string(signals) + ")");
    }
    m["signals"] = signals;
    if (!m.contains("window")) m["window"] = train.windowing.length;
    model::ModelConfig model;
    try {
        model = m.get<model::ModelConfig>();
    } catch (const json::exception& e) {
        throw InputError(std::string("invalid model config: ") + e.what());
    }
    if (model.window != train.windowing.length) throw InputError("model.window must equal train.window");
    training::TrainConfig t = train;
    evaluation::apply_ablation(ablation, model, t);
    model.validate();
    t.validate();
    return {model, t};
}

void RunConfig::apply_seed(std::uint64_t run_seed) {
    seed = run_seed;
    train.seed = run_seed;
    synth.seed = run_seed;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    try {
        require_keys(j, "root", {"seed", "model", "train", "detector", "data", "synth", "bench"});
        if (j.contains("model")) {
            require_keys(j.at("model"), "model",
                         {"signals", "window", "hidden_size", "latent_size", "flow_layers", "made_hidden", "disc_widths",
                          "alpha", "sparsity", "flow", "l1_include_flow"});
            c.model_overrides = j.at("model");
        }
        if (j.contains("train")) {
            require_keys(j.at("train"), "train",
                         {"epochs", "batch_size", "lr", "gamma", "milestones", "weight_decay", "adam_beta1",
                          "adam_beta2", "adam_epsilon", "lambda", "beta_max", "prior_capacity", "window", "stride",
                          "seed"});
            c.train = j.at("train").get<training::TrainConfig>();
        }
        if (j.contains("detector")) {
            const json& d = j.at("detector");
            require_keys(d, "detector", {"threshold", "target_fpr", "epsilon_mode", "precision"});
            if (d.contains("threshold") && !d.at("threshold").is_null()) c.threshold = d.at("threshold").get<double>();
            if (d.contains("target_fpr") && !d.at("target_fpr").is_null()) {
                c.target_fpr = d.at("target_fpr").get<double>();
            }
            if (d.contains("epsilon_mode")) {
                c.epsilon_mode = detection::parse_epsilon_mode(d.at("epsilon_mode").get<std::string>());
            }
            if (d.contains("precision")) c.precision = detection::parse_precision(d.at("precision").get<std::string>());
        }
        if (j.contains("data")) {
            const json& d = j.at("data");
            require_keys(d, "data", {"freq_downsample", "ablation"});
            c.freq_downsample = d.value("freq_downsample", c.freq_downsample);
            if (d.contains("ablation")) c.ablation = evaluation::parse_ablation(d.at("ablation").get<std::string>());
        }
        if (j.contains("synth")) {
            const json& s = j.at("synth");
            require_keys(s, "synth",
                         {"length", "signals", "anomaly_kinds", "shape_seed", "sample_rate_hz", "noise", "jitter",
                          "train_normal", "test_normal", "test_anomalous"});
            c.synth.length = s.value("length", c.synth.length);
            c.synth.signals = s.value("signals", c.synth.signals);
            c.synth.anomaly_kinds = s.value("anomaly_kinds", c.synth.anomaly_kinds);
            c.synth.shape_seed = s.value("shape_seed", c.synth.shape_seed);
            c.synth.sample_rate_hz = s.value("sample_rate_hz", c.synth.sample_rate_hz);
            c.synth.noise = s.value("noise", c.synth.noise);
            c.synth.jitter = s.value("jitter", c.synth.jitter);
            c.train_normal = s.value("train_normal", c.train_normal);
            c.test_normal = s.value("test_normal", c.test_normal);
            c.test_anomalous = s.value("test_anomalous", c.test_anomalous);
        }
        if (j.contains("bench")) {
            const json& b = j.at("bench");
            require_keys(b, "bench", {"repetitions", "warmup"});
            c.bench_repetitions = b.value("repetitions", c.bench_repetitions);
            c.bench_warmup = b.value("warmup", c.bench_warmup);
        }
        const std::uint64_t seed = j.value("seed", std::uint64_t{0});
        const std::uint64_t train_seed = c.train.seed;
        c.apply_seed(seed);
        if (j.contains("train") && j.at("train").contains("seed")) c.train.seed = train_seed;
    } catch (const json::exception& e) {
        throw InputError(std::string("invalid config: ") + e.what());
    }
    return c;
}

json to_json(const RunConfig& c) {
    return json{
        {"seed", c.seed},
        {"model", c.model_overrides},
        {"train", c.train},
        {"detector",
         {{"threshold", c.threshold ? json(*c.threshold) : json()},
          {"target_fpr", c.target_fpr ? json(*c.target_fpr) : json()},
          {"epsilon_mode", detection::to_string(c.epsilon_mode)},
          {"precision", detection::to_string(c.precision)}}},
        {"data", {{"freq_downsample", c.freq_downsample}, {"ablation", evaluation::to_string(c.ablation)}}},
        {"synth",
         [&] {
             json s = synth_to_json(c.synth);
             s["train_normal"] = c.train_normal;
             s["test_normal"] = c.test_normal;
             s["test_anomalous"] = c.test_anomalous;
             return s;
         }()},
        {"bench", {{"repetitions", c.bench_repetitions}, {"warmup", c.bench_warmup}}},
    };
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::exception& e) {
        throw InputError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

} // namespace mafaae::cli
