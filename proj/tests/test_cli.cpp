#include "mafaae/checkpoint.hpp"
#include "mafaae/data.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

/// Exit status of the CLI run with `args`; stdout and stderr are discarded unless redirected in `args`.
int run(const std::string& args) {
    const std::string cmd = std::string(MAFAAE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int run_raw(const std::string& args) {
    const int status = std::system((std::string(MAFAAE_CLI_PATH) + " " + args).c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("mafaae_cli_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& f) const { return (path / f).string(); }
};

void write(const std::string& path, const std::string& body) { std::ofstream(path) << body; }

/// Small, fast run configuration.
const char* kSmallConfig = R"({
  "train": {"epochs": 2},
  "synth": {"train_normal": 8, "test_normal": 4, "test_anomalous": 3, "length": 250}
})";

/// Synthetic data plus a trained checkpoint in `dir`.
void prepare(const TempDir& dir) {
    write(dir / "cfg.json", kSmallConfig);
    REQUIRE(run("gen-data --config " + (dir / "cfg.json") + " --seed 3 --out-dir " + dir.path.string()) == 0);
    REQUIRE(run("train --config " + (dir / "cfg.json") + " --train " + (dir / "train.csv") + " --out " +
                (dir / "model.ck")) == 0);
}

} // namespace

TEST_CASE("gen-data is byte-reproducible per seed") {
    TempDir a("gen_a"), b("gen_b");
    write(a / "cfg.json", kSmallConfig);
    REQUIRE(run("gen-data --config " + (a / "cfg.json") + " --seed 7 --out-dir " + a.path.string()) == 0);
    REQUIRE(run("gen-data --config " + (a / "cfg.json") + " --seed 7 --out-dir " + b.path.string()) == 0);
    CHECK(slurp(a / "train.csv") == slurp(b / "train.csv"));
    CHECK(slurp(a / "test.csv") == slurp(b / "test.csv"));
    CHECK(slurp(a / "test.json") == slurp(b / "test.json"));
    const auto manifest = nlohmann::json::parse(slurp(a / "train.json"));
    CHECK(manifest.at("n_signals").get<int>() == 12);
    CHECK(mafaae::data::load_records(a / "train.csv").signals == 12);
}

TEST_CASE("input errors exit with status 2") {
    TempDir d("errors");
    write(d / "bad_kind.json", R"({"synth": {"anomaly_kinds": ["wobble"]}})");
    CHECK(run("gen-data --config " + (d / "bad_kind.json") + " --out-dir " + d.path.string()) == 2);
    write(d / "unknown.json", R"({"train": {"epochz": 3}})");
    CHECK(run("gen-data --config " + (d / "unknown.json") + " --out-dir " + d.path.string()) == 2);
    CHECK(run("no-such-command") == 2);

    prepare(d);
    CHECK(run("train --config " + (d / "cfg.json") + " --train " + (d / "test.csv") + " --out " + (d / "x.ck")) == 2);
    CHECK(run("detect --checkpoint " + (d / "model.ck") + " --input " + (d / "test.csv")) == 2);
}

TEST_CASE("a checkpoint without calibration cannot score") {
    TempDir d("uncal");
    prepare(d);
    auto ck = mafaae::model::load_checkpoint(d / "model.ck");
    ck.calibration.reset();
    mafaae::model::save_checkpoint(ck, d / "raw.ck");
    CHECK(run("eval --checkpoint " + (d / "raw.ck") + " --test " + (d / "test.csv")) == 2);
    CHECK(run("calibrate --checkpoint " + (d / "raw.ck") + " --data " + (d / "train.csv")) == 0);
    CHECK(run("eval --checkpoint " + (d / "raw.ck") + " --test " + (d / "test.csv")) == 0);
}

TEST_CASE("calibration needs at least two windows") {
    TempDir d("fewwin");
    prepare(d);
    auto data = mafaae::data::load_records(d / "train.csv");
    data.records.resize(1);
    data.records[0].frames.conservativeResize(160, Eigen::NoChange);
    mafaae::data::save_records(data, d / "one.csv");
    CHECK(run("calibrate --checkpoint " + (d / "model.ck") + " --data " + (d / "one.csv") + " --out " +
              (d / "o.ck")) == 2);
}

TEST_CASE("eval writes a per-type report") {
    TempDir d("eval");
    prepare(d);
    REQUIRE(run("eval --checkpoint " + (d / "model.ck") + " --test " + (d / "test.csv") + " --roc --out " +
                (d / "report.json")) == 0);
    const auto j = nlohmann::json::parse(slurp(d / "report.json"));
    CHECK(j.at("per_type").size() == 3);
    CHECK(j.contains("overall_mean"));
    CHECK(j.contains("roc_points"));
    CHECK(j.at("n_records").get<int>() == 7);
}

TEST_CASE("detect streams verdicts and rejects bad frames") {
    TempDir d("detect");
    prepare(d);
    const auto data = mafaae::data::load_records(d / "train.csv");
    std::ofstream frames(d / "frames.csv");
    frames.precision(17);
    for (mafaae::data::Index f = 0; f < 250; ++f) {
        frames << f;
        for (mafaae::data::Index s = 0; s < 12; ++s) frames << ',' << data.records[0].frames(f, s);
        frames << '\n';
    }
    frames.close();
    REQUIRE(run_raw("detect --checkpoint " + (d / "model.ck") + " --target-fpr 0.05 --input " + (d / "frames.csv") +
                    " >" + (d / "out.jsonl") + " 2>/dev/null") == 0);
    std::istringstream out(slurp(d / "out.jsonl"));
    std::string line;
    int n = 0;
    while (std::getline(out, line)) {
        CHECK(nlohmann::json::parse(line).at("window_start").get<int>() == 50 * n);
        ++n;
    }
    CHECK(n == 3);

    write(d / "narrow.csv", "0,1,2,3\n");
    CHECK(run("detect --checkpoint " + (d / "model.ck") + " --threshold 1 --input " + (d / "narrow.csv")) != 0);
}

TEST_CASE("train rejects data whose width differs from the configured model") {
    TempDir d("width");
    prepare(d);
    write(d / "wide.json", R"({"train": {"epochs": 1}, "model": {"signals": 5}})");
    CHECK(run("train --config " + (d / "wide.json") + " --train " + (d / "train.csv") + " --out " + (d / "w.ck")) ==
          2);
    CHECK(run("bench --checkpoint " + (d / "model.ck") + " --repetitions 10") == 2);
}
