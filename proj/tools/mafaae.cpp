// mafaae: generate data, train, calibrate, evaluate, stream-detect and benchmark.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.

#include "mafaae/checkpoint.hpp"
#include "mafaae/data.hpp"
#include "mafaae/detection.hpp"
#include "mafaae/errors.hpp"
#include "mafaae/evaluation.hpp"
#include "mafaae/run_config.hpp"
#include "mafaae/synth.hpp"
#include "mafaae/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <streambuf>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mafaae;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitInput = 2;

/// Flags shared by every command; unset values leave the config file's values alone.
struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> freq_downsample;
    std::optional<std::string> ablation;
    std::optional<int> epochs;
    std::optional<std::string> epsilon_mode;
    std::optional<std::string> precision;
    std::optional<double> threshold;
    std::optional<double> target_fpr;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "Run seed");
    cmd->add_option("--freq-downsample", f.freq_downsample, "Keep every n-th frame");
    cmd->add_option("--ablation", f.ablation, "none, no-sparsity or no-flow");
    cmd->add_option("--epochs", f.epochs, "Training epochs");
    cmd->add_option("--epsilon-mode", f.epsilon_mode, "zero or sample");
    cmd->add_option("--precision", f.precision, "Inference precision: f32 or f64");
}

void add_threshold(CLI::App* cmd, CommonFlags& f) {
    auto* t = cmd->add_option("--threshold", f.threshold, "Decision threshold on the anomaly score");
    auto* r = cmd->add_option("--target-fpr", f.target_fpr, "Derive the threshold from calibration scores");
    t->excludes(r);
}

/// Config file, then the checkpoint's recorded config (if any), then flags.
cli::RunConfig resolve_config(const CommonFlags& f, const json* recorded = nullptr) {
    cli::RunConfig c;
    if (!f.config_path.empty()) {
        c = cli::load_run_config(f.config_path);
    } else if (recorded && recorded->contains("run_config")) {
        c = cli::run_config_from_json(recorded->at("run_config"));
        c.threshold.reset();
        c.target_fpr.reset();
    }
    if (f.seed) c.apply_seed(*f.seed);
    if (f.freq_downsample) c.freq_downsample = *f.freq_downsample;
    if (f.ablation) c.ablation = evaluation::parse_ablation(*f.ablation);
    if (f.epochs) c.train.epochs = *f.epochs;
    if (f.epsilon_mode) c.epsilon_mode = detection::parse_epsilon_mode(*f.epsilon_mode);
    if (f.precision) c.precision = detection::parse_precision(*f.precision);
    if (f.threshold) c.threshold = f.threshold;
    if (f.target_fpr) c.target_fpr = f.target_fpr;
    c.validate();
    return c;
}

data::Dataset load_dataset(const fs::path& path, int factor) {
    data::Dataset d = data::load_records(path);
    if (factor > 1) {
        for (auto& r : d.records) r = data::downsample(r, factor);
        d.sample_rate_hz /= factor;
    }
    return d;
}

std::string file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return model::sha256_hex(ss.str());
}

void write_json(const json& j, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

void warn(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

model::Checkpoint load_calibrated(const std::string& path) {
    model::Checkpoint ck = model::load_checkpoint(path);
    if (!ck.calibration) throw InputError("checkpoint " + path + " is not calibrated; run `mafaae calibrate` first");
    return ck;
}

/// Input-only streambuf over a file descriptor.
class FdBuf : public std::streambuf {
public:
    explicit FdBuf(int fd) : fd_(fd) {}
    ~FdBuf() override { ::close(fd_); }

protected:
    int_type underflow() override {
        const ssize_t n = ::read(fd_, buf_, sizeof buf_);
        if (n <= 0) return traits_type::eof();
        setg(buf_, buf_, buf_ + n);
        return traits_type::to_int_type(buf_[0]);
    }

private:
    int fd_;
    char buf_[4096];
};

std::unique_ptr<FdBuf> connect_unix(const std::string& path) {
    sockaddr_un addr{};
    if (path.size() >= sizeof addr.sun_path) throw InputError("socket path too long: " + path);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
    addr.sun_family = AF_UNIX;
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
        const std::string err = std::strerror(errno);
        ::close(fd);
        throw InputError("cannot connect to " + path + ": " + err);
    }
    return std::make_unique<FdBuf>(fd);
}

// Commands -----------------------------------------------------------------------

struct GenDataArgs {
    std::string out_dir;
};

int cmd_gen_data(const CommonFlags& flags, const GenDataArgs& a) {
    const cli::RunConfig c = resolve_config(flags);
    fs::create_directories(a.out_dir);
    const auto split = data::synth_split(c.synth, c.train_normal, c.test_normal, c.test_anomalous);
    const json provenance = cli::to_json(c);
    data::save_records(split.train, fs::path(a.out_dir) / "train.csv", provenance);
    data::save_records(split.test, fs::path(a.out_dir) / "test.csv", provenance);
    std::cerr << "wrote " << split.train.records.size() << " training and " << split.test.records.size()
              << " test records to " << a.out_dir << '\n';
    return 0;
}

struct TrainArgs {
    std::string train_csv;
    std::string out;
    std::string log;
};

int cmd_train(const CommonFlags& flags, const TrainArgs& a) {
    const cli::RunConfig c = resolve_config(flags);
    const data::Dataset train = load_dataset(a.train_csv, c.freq_downsample);
    const auto [model_cfg, train_cfg] = c.resolve(train.signals);

    std::ofstream log_file;
    if (!a.log.empty()) {
        log_file.open(a.log, std::ios::binary);
        if (!log_file) throw std::runtime_error("cannot write " + a.log);
    }
    std::ostream& log = a.log.empty() ? std::cerr : log_file;
    const json run = cli::to_json(c);
    log << json{{"run_config", run}, {"model_config", model_cfg}}.dump() << '\n';

    evaluation::PipelineOptions options;
    options.model = model_cfg;
    options.train = train_cfg;
    options.epsilon_mode = c.epsilon_mode;
    options.precision = c.precision;
    options.metadata = {{"run_config", run}, {"train_data_sha256", file_digest(a.train_csv)}};
    options.on_epoch = [&](const training::EpochLog& e) { log << training::to_json_line(e).dump() << '\n'; };
    const model::Checkpoint ck = evaluation::train_and_calibrate(train, options);
    model::save_checkpoint(ck, a.out);
    std::cerr << "checkpoint " << a.out << " sha256 " << file_digest(a.out) << " mu_normal "
              << ck.calibration->mu_normal << " sigma_normal " << ck.calibration->sigma_normal << '\n';
    return 0;
}

struct CalibrateArgs {
    std::string checkpoint;
    std::string data_csv;
    std::string out;
};

int cmd_calibrate(const CommonFlags& flags, const CalibrateArgs& a) {
    model::Checkpoint ck = model::load_checkpoint(a.checkpoint);
    const cli::RunConfig c = resolve_config(flags, &ck.metadata);
    const data::Dataset normal = load_dataset(a.data_csv, c.freq_downsample);
    data::check_signal_count(normal, ck.config.signals);
    if (ck.calibration) warn("checkpoint already calibrated; overwriting");
    detection::Scorer scorer(ck, c.precision, c.epsilon_mode, c.seed);
    ck.calibration = detection::calibrate(scorer, normal.records, c.train.windowing);
    ck.metadata["calibration_data_sha256"] = file_digest(a.data_csv);
    ck.metadata["run_config"] = cli::to_json(c);
    const std::string out = a.out.empty() ? a.checkpoint : a.out;
    model::save_checkpoint(ck, out);
    std::cout << json{{"mu_normal", ck.calibration->mu_normal},
                      {"sigma_normal", ck.calibration->sigma_normal},
                      {"windows", ck.calibration->windows},
                      {"epsilon_mode", detection::to_string(ck.calibration->epsilon_mode)}}
                     .dump()
              << '\n';
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string test_csv;
    std::string out;
    std::string roc_csv;
    bool roc = false;
};

int cmd_eval(const CommonFlags& flags, const EvalArgs& a) {
    const model::Checkpoint ck = load_calibrated(a.checkpoint);
    const cli::RunConfig c = resolve_config(flags, &ck.metadata);
    const data::Dataset test = load_dataset(a.test_csv, c.freq_downsample);
    data::check_signal_count(test, ck.config.signals);
    detection::Scorer scorer(ck, c.precision, c.epsilon_mode, c.seed);
    const auto scoring = evaluation::score_records(test.records, scorer, c.train.windowing, warn);
    const auto summary = evaluation::per_type_auroc(scoring.records);
    json report = evaluation::evaluation_report(scoring, summary, a.roc);
    report["run_config"] = cli::to_json(c);
    report["checkpoint_sha256"] = file_digest(a.checkpoint);
    report["test_data_sha256"] = file_digest(a.test_csv);
    write_json(report, a.out);
    if (!a.roc_csv.empty()) {
        std::ofstream csv(a.roc_csv, std::ios::binary);
        if (!csv) throw std::runtime_error("cannot write " + a.roc_csv);
        csv << "fpr,tpr,threshold\n";
        for (const auto& p : evaluation::overall_roc(scoring.records)) {
            csv << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
        }
    }
    return 0;
}

struct DetectArgs {
    std::string checkpoint;
    std::string input;
    std::string socket;
};

int cmd_detect(const CommonFlags& flags, const DetectArgs& a) {
    const model::Checkpoint ck = load_calibrated(a.checkpoint);
    const cli::RunConfig c = resolve_config(flags, &ck.metadata);
    if (!c.threshold && !c.target_fpr) throw InputError("detect needs --threshold or --target-fpr");
    detection::Scorer scorer(ck, c.precision, c.epsilon_mode, c.seed);
    detection::DetectorConfig dc;
    dc.threshold = c.threshold ? *c.threshold : detection::threshold_for_fpr(scorer.calibration(), *c.target_fpr);
    dc.windowing = c.train.windowing;
    std::cerr << json{{"run_config", cli::to_json(c)}, {"threshold", dc.threshold}}.dump() << '\n';

    std::unique_ptr<FdBuf> sock_buf;
    std::ifstream file;
    std::unique_ptr<std::istream> sock_stream;
    std::istream* in = &std::cin;
    if (!a.socket.empty()) {
        sock_buf = connect_unix(a.socket);
        sock_stream = std::make_unique<std::istream>(sock_buf.get());
        in = sock_stream.get();
    } else if (!a.input.empty() && a.input != "-") {
        file.open(a.input);
        if (!file) throw InputError("cannot open " + a.input);
        in = &file;
    }

    detection::StreamDetector detector(scorer, dc, warn);
    if (c.freq_downsample == 1) {
        detection::run_stream(*in, detector, std::cout);
        return 0;
    }
    // Keep frames whose index is a multiple of the factor, renumbered.
    std::string line;
    std::stringstream kept;
    bool header = true;
    while (std::getline(*in, line)) {
        if (header && line.rfind("frame_idx", 0) == 0) continue;
        header = false;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto comma = line.find(',');
        const auto [idx, values] = detection::parse_frame_line(
            line, static_cast<data::Index>(std::count(line.begin(), line.end(), ',')));
        if (idx % c.freq_downsample != 0) continue;
        std::stringstream one;
        one << idx / c.freq_downsample << line.substr(comma) << '\n';
        detection::run_stream(one, detector, std::cout);
    }
    return 0;
}

struct BenchArgs {
    std::string checkpoint;
    std::string data_csv;
    std::string out;
    std::optional<int> repetitions;
    std::optional<int> warmup;
};

int cmd_bench(const CommonFlags& flags, const BenchArgs& a) {
    const model::Checkpoint ck = load_calibrated(a.checkpoint);
    cli::RunConfig c = resolve_config(flags, &ck.metadata);
    if (a.repetitions) c.bench_repetitions = *a.repetitions;
    if (a.warmup) c.bench_warmup = *a.warmup;
    c.validate();
    std::vector<data::Frames> windows;
    if (!a.data_csv.empty()) {
        const data::Dataset d = load_dataset(a.data_csv, c.freq_downsample);
        data::check_signal_count(d, ck.config.signals);
        for (const auto& r : d.records) {
            if (r.length() < c.train.windowing.length) continue;
            for (auto& w : data::sliding_windows(r, c.train.windowing)) windows.push_back(std::move(w.values));
        }
    } else {
        data::SynthConfig s = c.synth;
        s.signals = ck.config.signals;
        s.length = std::max(s.length, ck.config.window);
        s.num_normal = 4;
        for (const auto& r : data::synth_generate(s).records) {
            for (auto& w : data::sliding_windows(r, c.train.windowing)) windows.push_back(std::move(w.values));
        }
    }
    detection::Scorer scorer(ck, c.precision, c.epsilon_mode, c.seed);
    const auto report = evaluation::bench_latency(scorer, windows, c.train.windowing, c.bench_repetitions, c.bench_warmup);
    json j = evaluation::to_json(report);
    j["run_config"] = cli::to_json(c);
    write_json(j, a.out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse MAF-AAE streaming anomaly detector"};
    app.require_subcommand(1);
    CommonFlags flags;

    auto* gen = app.add_subcommand("gen-data", "Write synthetic train.csv and test.csv with manifests");
    GenDataArgs gen_args;
    add_common(gen, flags);
    gen->add_option("--out-dir", gen_args.out_dir, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Train on normal records and calibrate on their windows");
    TrainArgs train_args;
    add_common(train, flags);
    train->add_option("--train", train_args.train_csv, "Training CSV (normal records only)")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--out", train_args.out, "Checkpoint path")->required();
    train->add_option("--log", train_args.log, "Training log (JSON lines); default stderr");

    auto* calibrate = app.add_subcommand("calibrate", "Recompute calibration statistics from normal records");
    CalibrateArgs cal_args;
    add_common(calibrate, flags);
    calibrate->add_option("--checkpoint", cal_args.checkpoint)->required()->check(CLI::ExistingFile);
    calibrate->add_option("--data", cal_args.data_csv, "Normal records")->required()->check(CLI::ExistingFile);
    calibrate->add_option("--out", cal_args.out, "Output checkpoint; default overwrites the input");

    auto* eval = app.add_subcommand("eval", "Per-type AUROC on a labelled test set");
    EvalArgs eval_args;
    add_common(eval, flags);
    eval->add_option("--checkpoint", eval_args.checkpoint)->required()->check(CLI::ExistingFile);
    eval->add_option("--test", eval_args.test_csv)->required()->check(CLI::ExistingFile);
    eval->add_option("--out", eval_args.out, "Report path; default stdout");
    eval->add_flag("--roc", eval_args.roc, "Include ROC points in the report");
    eval->add_option("--roc-csv", eval_args.roc_csv, "Also write ROC points as CSV");

    auto* detect = app.add_subcommand("detect", "Score a frame stream; one JSON verdict per window");
    DetectArgs det_args;
    add_common(detect, flags);
    add_threshold(detect, flags);
    detect->add_option("--checkpoint", det_args.checkpoint)->required()->check(CLI::ExistingFile);
    auto* input = detect->add_option("--input", det_args.input, "Frame file; default stdin");
    detect->add_option("--socket", det_args.socket, "Unix-domain socket to read frames from")->excludes(input);

    auto* bench = app.add_subcommand("bench", "Single-window inference latency");
    BenchArgs bench_args;
    add_common(bench, flags);
    bench->add_option("--checkpoint", bench_args.checkpoint)->required()->check(CLI::ExistingFile);
    bench->add_option("--data", bench_args.data_csv, "Windows to time; default synthetic");
    bench->add_option("--out", bench_args.out, "Report path; default stdout");
    bench->add_option("--repetitions", bench_args.repetitions, "Timed runs (>= 100)");
    bench->add_option("--warmup", bench_args.warmup, "Untimed runs before timing");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(flags, gen_args);
        if (train->parsed()) return cmd_train(flags, train_args);
        if (calibrate->parsed()) return cmd_calibrate(flags, cal_args);
        if (eval->parsed()) return cmd_eval(flags, eval_args);
        if (detect->parsed()) return cmd_detect(flags, det_args);
        if (bench->parsed()) return cmd_bench(flags, bench_args);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitInput;
}
