#include "mafaae/detection.hpp"
#include "mafaae/errors.hpp"
#include "mafaae/evaluation.hpp"
#include "mafaae/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace mafaae;
using namespace mafaae::detection;
using data::Frames;

namespace {

/// Untrained checkpoint normalized on `records`.
model::Checkpoint untrained(std::span<const data::Record> records, std::uint64_t seed = 1) {
    model::Checkpoint ck;
    ck.config = model::ModelConfig::for_signals(records.front().signals(), 150);
    ck.generator = model::init_generator(ck.config, seed);
    ck.discriminator = model::init_discriminator(ck.config, seed + 1);
    ck.norm = data::fit_normalization(records);
    return ck;
}

data::Dataset normal_data(int count, data::Index length, std::uint64_t seed = 0) {
    data::SynthConfig s;
    s.num_normal = count;
    s.length = length;
    s.seed = seed;
    return data::synth_generate(s);
}

} // namespace

TEST_CASE("L1 reconstruction error") {
    const Frames a = Frames::Zero(2, 3);
    CHECK(l1_error(a, a) == 0.0);
    CHECK(l1_error(a, Frames::Constant(2, 3, -0.5)) == 3.0);
    CHECK_THROWS_AS(l1_error(a, Frames::Zero(3, 2)), InputError);
}

TEST_CASE("calibration statistics") {
    const std::vector<double> e{2.0, 4.0, 6.0};
    const auto c = calibration_from_errors(e, model::EpsilonMode::zero);
    CHECK(c.mu_normal == doctest::Approx(4.0));
    CHECK(c.sigma_normal == doctest::Approx(std::sqrt(8.0 / 3.0)));
    CHECK(c.windows == 3);
    CHECK(std::is_sorted(c.scores.begin(), c.scores.end()));
    CHECK(c.scores.front() == doctest::Approx(-2.0 / std::sqrt(8.0 / 3.0)));

    const std::vector<double> same{1.5, 1.5, 1.5};
    CHECK(calibration_from_errors(same, model::EpsilonMode::zero).sigma_normal == kSigmaFloor);

    const std::vector<double> one{1.0};
    CHECK_THROWS_AS(calibration_from_errors(one, model::EpsilonMode::zero), InputError);
}

TEST_CASE("scores and the strict threshold") {
    CalibrationStats c;
    c.mu_normal = 10.0;
    c.sigma_normal = 2.0;
    CHECK(anomaly_score(10.0, c) == 0.0);
    CHECK(anomaly_score(16.0, c) == 3.0);
    CHECK(anomaly_score(8.0, c) == -1.0);
    CHECK_FALSE(classify(3.0, 3.0));
    CHECK(classify(3.0 + 1e-12, 3.0));
    CHECK_FALSE(classify(-1.0, 0.0));
}

TEST_CASE("threshold for a target false-positive rate") {
    std::vector<double> e;
    for (int i = 0; i < 101; ++i) e.push_back(static_cast<double>(i));
    const auto c = calibration_from_errors(e, model::EpsilonMode::zero);
    const double t = threshold_for_fpr(c, 0.1);
    const auto above = std::count_if(c.scores.begin(), c.scores.end(), [&](double s) { return classify(s, t); });
    CHECK(above == 10);
    CHECK_THROWS_AS(threshold_for_fpr(c, 0.0), InputError);
    CHECK_THROWS_AS(threshold_for_fpr(c, 1.0), InputError);
}

TEST_CASE("verdict count follows the window grid") {
    const data::WindowingConfig w{150, 50};
    CHECK(expected_verdicts(250, w) == 3);
    CHECK(expected_verdicts(150, w) == 1);
    CHECK(expected_verdicts(149, w) == 0);
    CHECK(expected_verdicts(0, w) == 0);
    for (data::Index t = 0; t < 700; t += 37) {
        CHECK(expected_verdicts(t, w) == data::window_count(t, w));
    }
}

TEST_CASE("streaming verdicts equal batch scores bit for bit") {
    const auto d = normal_data(3, 250);
    auto ck = untrained(d.records);
    for (const auto precision : {Precision::f32, Precision::f64}) {
        Scorer scorer(ck, precision);
        scorer.set_calibration(calibrate(scorer, d.records, {150, 50}));
        const auto& record = d.records[1];
        const auto windows = data::sliding_windows(record, {150, 50});

        StreamDetector detector(scorer, DetectorConfig{0.5, {150, 50}});
        std::vector<Verdict> verdicts;
        for (data::Index f = 0; f < record.length(); ++f) {
            const Eigen::VectorXd row = record.frames.row(f).transpose();
            if (auto v = detector.push(f, std::span<const double>(row.data(), row.size()))) verdicts.push_back(*v);
            if (f + 1 < 150) CHECK(verdicts.empty());
        }
        REQUIRE(verdicts.size() == 3);
        REQUIRE(windows.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(verdicts[i].window_start == static_cast<data::Index>(50 * i));
            CHECK(verdicts[i].window_start == windows[i].start);
            const double batch = scorer.score(windows[i].values);
            CHECK(verdicts[i].score == batch);
            CHECK(verdicts[i].is_anomaly == classify(batch, 0.5));
            CHECK(verdicts[i].inference_us >= 0.0);
        }
    }
}

TEST_CASE("run_stream reads frame lines and writes verdict lines") {
    const auto d = normal_data(2, 200);
    const auto ck = untrained(d.records);
    Scorer scorer(ck);
    scorer.set_calibration(calibrate(scorer, d.records, {150, 50}));

    std::ostringstream in;
    in.precision(17);
    in << "frame_idx";
    for (int s = 0; s < 12; ++s) in << ",sig_" << s;
    in << "\n\n";
    for (data::Index f = 0; f < 200; ++f) {
        in << f;
        for (int s = 0; s < 12; ++s) in << ',' << d.records[0].frames(f, s);
        in << '\n';
    }
    std::istringstream input(in.str());
    std::ostringstream out;
    StreamDetector detector(scorer, DetectorConfig{1.0, {150, 50}});
    CHECK(run_stream(input, detector, out) == 2);

    std::istringstream lines(out.str());
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("window_start").get<int>() == 50 * n);
        CHECK(j.contains("score"));
        CHECK(j.contains("is_anomaly"));
        CHECK(j.contains("inference_us"));
        ++n;
    }
    CHECK(n == 2);
}

TEST_CASE("stream input errors") {
    const auto d = normal_data(2, 150);
    const auto ck = untrained(d.records);
    Scorer scorer(ck);
    scorer.set_calibration(calibrate(scorer, d.records, {150, 50}));
    StreamDetector detector(scorer, DetectorConfig{0.0, {150, 50}});
    const std::vector<double> narrow(11, 0.0), row(12, 0.0);
    CHECK_THROWS_AS(detector.push(narrow), StreamError);
    CHECK_THROWS_AS(detector.push(5, row), StreamError);
    CHECK_NOTHROW(detector.push(0, row));
    CHECK_THROWS_AS(parse_frame_line("0,1,2", 12), StreamError);
    CHECK_THROWS_AS(parse_frame_line("x,1,2", 2), StreamError);
    CHECK_THROWS_AS(parse_frame_line("0,1,nope", 2), StreamError);
    const auto [idx, values] = parse_frame_line("7,1.5,-2", 2);
    CHECK(idx == 7);
    CHECK(values == std::vector<double>{1.5, -2.0});
}

TEST_CASE("scoring requires a matching calibration") {
    const auto d = normal_data(2, 150);
    const auto ck = untrained(d.records);
    Scorer zero(ck);
    CHECK_THROWS_AS(zero.score(d.records[0].frames), InputError);
    Scorer sampled(ck, Precision::f64, model::EpsilonMode::sample, 3);
    zero.set_calibration(calibrate(sampled, d.records, {150, 50}));
    CHECK_THROWS_AS(zero.score(d.records[0].frames), InputError);
    CHECK_THROWS_AS(calibrate(zero, std::span<const data::Record>(d.records.data(), 1), {150, 50}), InputError);
    CHECK_THROWS_AS(zero.window_error(Frames::Zero(150, 11)), InputError);
}

TEST_CASE("precision names") {
    CHECK(parse_precision("f32") == Precision::f32);
    CHECK(parse_precision("float64") == Precision::f64);
    CHECK(std::string(to_string(Precision::f32)) == "float32");
    CHECK_THROWS_AS(parse_precision("f16"), InputError);
}

TEST_CASE("a trained detector flags the spiked counterpart of a normal record") {
    data::SynthConfig s;
    s.num_normal = 40;
    s.seed = 11;
    const auto train = data::synth_generate(s);
    evaluation::PipelineOptions opt;
    opt.model = model::ModelConfig::for_signals(12, 150);
    opt.train.epochs = 8;
    const auto ck = evaluation::train_and_calibrate(train, opt);
    Scorer scorer(ck);
    scorer.set_calibration(*ck.calibration);

    const auto shape = data::make_shape(12, s.shape_seed);
    data::SynthConfig fresh = s;
    fresh.seed = 99;
    const auto normal = data::synth_record(fresh, shape, 0, std::nullopt);
    const auto spiked = data::synth_record(fresh, shape, 0, data::default_anomaly(data::AnomalyKind::spike));
    double normal_max = -1e300, spiked_max = -1e300;
    for (const auto& w : data::sliding_windows(normal, {150, 50})) normal_max = std::max(normal_max, scorer.score(w.values));
    for (const auto& w : data::sliding_windows(spiked, {150, 50})) spiked_max = std::max(spiked_max, scorer.score(w.values));
    CHECK(spiked_max > normal_max);
}
