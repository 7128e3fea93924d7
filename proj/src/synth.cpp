#include "mafaae/synth.hpp"

#include "mafaae/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace mafaae::data {

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t index, std::uint32_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), tag};
    return std::mt19937_64(seq);
}

constexpr std::uint32_t kShapeTag = 0x5348;
constexpr std::uint32_t kBaseTag = 0x4241;
constexpr std::uint32_t kAnomalyTag = 0x414e;

std::vector<Index> pick_features(std::mt19937_64& rng, Index signals, Index count) {
    std::vector<Index> all(static_cast<std::size_t>(signals));
    for (Index j = 0; j < signals; ++j) all[static_cast<std::size_t>(j)] = j;
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(std::min(count, signals)));
    std::sort(all.begin(), all.end());
    return all;
}

} // namespace

AnomalyKind parse_anomaly_kind(const std::string& name) {
    if (name == "spike") return AnomalyKind::spike;
    if (name == "drift") return AnomalyKind::drift;
    if (name == "dropout") return AnomalyKind::dropout;
    throw InputError("unknown anomaly kind: " + name);
}

const char* to_string(AnomalyKind kind) {
    switch (kind) {
    case AnomalyKind::spike: return "spike";
    case AnomalyKind::drift: return "drift";
    case AnomalyKind::dropout: return "dropout";
    }
    return "?";
}

void SynthConfig::validate() const {
    if (num_normal < 0 || num_anomalous < 0) throw InputError("record counts must be >= 0");
    if (length < 1) throw InputError("record length must be >= 1");
    if (signals < 2) throw InputError("synthetic data needs at least 2 signals");
    if (!(sample_rate_hz > 0.0)) throw InputError("sample rate must be positive");
    if (num_anomalous > 0 && anomaly_kinds.empty()) throw InputError("anomalous records need anomaly kinds");
    for (const auto& k : anomaly_kinds) parse_anomaly_kind(k);
}

AnomalySpec default_anomaly(AnomalyKind kind) {
    AnomalySpec spec;
    spec.kind = kind;
    spec.magnitude = kind == AnomalyKind::drift ? 3.0 : 5.0;
    return spec;
}

SignalShape make_shape(Index signals, std::uint64_t shape_seed) {
    auto rng = make_rng(shape_seed, 0, kShapeTag);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SignalShape s;
    s.offset.resize(signals);
    s.amplitude.resize(signals, 2);
    s.cycles.resize(signals, 2);
    s.phase.resize(signals, 2);
    s.sigma.resize(signals);
    for (Index j = 0; j < signals; ++j) {
        s.amplitude(j, 0) = 0.5 + 1.5 * unit(rng);
        s.amplitude(j, 1) = 0.1 + 0.4 * unit(rng);
        s.cycles(j, 0) = 0.5 + 2.0 * unit(rng);
        s.cycles(j, 1) = 3.0 + 3.0 * unit(rng);
        s.phase(j, 0) = 2.0 * std::numbers::pi * unit(rng);
        s.phase(j, 1) = 2.0 * std::numbers::pi * unit(rng);
        // Offsets keep every feature on one side of zero.
        const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
        s.offset(j) = sign * (s.amplitude(j, 0) + s.amplitude(j, 1) + 0.5 + unit(rng));
        s.sigma(j) = std::sqrt(0.5 * (s.amplitude(j, 0) * s.amplitude(j, 0) + s.amplitude(j, 1) * s.amplitude(j, 1)));
    }
    return s;
}

Record synth_record(const SynthConfig& config, const SignalShape& shape, int index,
                    const std::optional<AnomalySpec>& anomaly) {
    const Index T = config.length;
    const Index N = config.signals;
    auto rng = make_rng(config.seed, static_cast<std::uint64_t>(index), kBaseTag);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const double shift = config.jitter * (2.0 * unit(rng) - 1.0);
    const double scale = 0.95 + 0.1 * unit(rng);
    const double period = static_cast<double>(config.length);

    Record r;
    char id[32];
    std::snprintf(id, sizeof(id), "rec_%05d", index);
    r.sample_id = id;
    r.sample_rate_hz = config.sample_rate_hz;
    r.frames.resize(T, N);
    for (Index t = 0; t < T; ++t) {
        const double u = (static_cast<double>(t) + shift) / period;
        for (Index j = 0; j < N; ++j) {
            double v = shape.offset(j);
            for (int m = 0; m < 2; ++m) {
                v += scale * shape.amplitude(j, m) *
                     std::sin(2.0 * std::numbers::pi * shape.cycles(j, m) * u + shape.phase(j, m));
            }
            r.frames(t, j) = v + config.noise * shape.sigma(j) * gauss(rng);
        }
    }

    if (!anomaly) {
        return r;
    }

    auto arng = make_rng(config.seed, static_cast<std::uint64_t>(index), kAnomalyTag);
    std::uniform_real_distribution<double> aunit(0.0, 1.0);
    std::normal_distribution<double> agauss(0.0, 1.0);
    const AnomalySpec& a = *anomaly;
    const Index default_count = a.kind == AnomalyKind::spike ? 2 : 3;
    const std::vector<Index> features = a.features.empty() ? pick_features(arng, N, default_count) : a.features;
    for (Index j : features) {
        if (j < 0 || j >= N) throw InputError("anomaly feature index out of range");
    }
    auto away_from_zero = [&](Index j) { return shape.offset(j) >= 0.0 ? 1.0 : -1.0; };

    switch (a.kind) {
    case AnomalyKind::spike: {
        const Index width = std::max<Index>(1, T / 30);
        const Index lo = T / 6;
        const Index hi = std::max(lo, T - T / 6 - width);
        const Index start = std::min<Index>(T - width, lo + static_cast<Index>(aunit(arng) * static_cast<double>(hi - lo)));
        for (Index j : features) {
            for (Index t = std::max<Index>(0, start); t < std::min(T, start + width); ++t) {
                r.frames(t, j) += away_from_zero(j) * a.magnitude * shape.sigma(j);
            }
        }
        break;
    }
    case AnomalyKind::drift: {
        const Index start = T / 4 + static_cast<Index>(aunit(arng) * static_cast<double>(T / 4));
        const double span = static_cast<double>(std::max<Index>(1, T - start));
        for (Index j : features) {
            for (Index t = start; t < T; ++t) {
                r.frames(t, j) += away_from_zero(j) * a.magnitude * shape.sigma(j) * static_cast<double>(t - start + 1) / span;
            }
        }
        break;
    }
    case AnomalyKind::dropout: {
        const Index width = std::max<Index>(1, T / 10);
        const Index start = static_cast<Index>(aunit(arng) * static_cast<double>(std::max<Index>(0, T - width)));
        for (Index j : features) {
            for (Index t = start; t < std::min(T, start + width); ++t) {
                r.frames(t, j) = config.noise * shape.sigma(j) * agauss(arng);
            }
        }
        break;
    }
    }
    r.label = Label::anomalous;
    r.anomaly_type = to_string(a.kind);
    return r;
}

Dataset synth_generate(const SynthConfig& config) {
    config.validate();
    const SignalShape shape = make_shape(config.signals, config.shape_seed);
    Dataset d;
    d.signals = config.signals;
    d.sample_rate_hz = config.sample_rate_hz;
    d.records.reserve(static_cast<std::size_t>(config.num_normal + config.num_anomalous));
    for (int i = 0; i < config.num_normal; ++i) {
        d.records.push_back(synth_record(config, shape, i, std::nullopt));
    }
    for (int k = 0; k < config.num_anomalous; ++k) {
        const auto& name = config.anomaly_kinds[static_cast<std::size_t>(k) % config.anomaly_kinds.size()];
        d.records.push_back(synth_record(config, shape, config.num_normal + k, default_anomaly(parse_anomaly_kind(name))));
    }
    return d;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), 0x5eedu};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

SynthSplit synth_split(const SynthConfig& base, int train_normal, int test_normal, int test_anomalous) {
    SynthConfig train = base;
    train.num_normal = train_normal;
    train.num_anomalous = 0;
    train.seed = derive_seed(base.seed, 1);
    SynthConfig test = base;
    test.num_normal = test_normal;
    test.num_anomalous = test_anomalous;
    test.seed = derive_seed(base.seed, 2);
    return {synth_generate(train), synth_generate(test)};
}

} // namespace mafaae::data
