#include "mafaae/data.hpp"

#include "mafaae/errors.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace mafaae::data {

namespace {

std::string line_error(std::size_t line, const std::string& what) {
    return "line " + std::to_string(line) + ": " + what;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t begin = 0;
    while (true) {
        const std::size_t comma = line.find(',', begin);
        if (comma == std::string_view::npos) {
            cells.push_back(line.substr(begin));
            break;
        }
        cells.push_back(line.substr(begin, comma - begin));
        begin = comma + 1;
    }
    return cells;
}

void append_double(std::string& out, double value) {
    char buf[32];
    const auto result = std::to_chars(buf, buf + sizeof(buf), value);
    out.append(buf, result.ptr);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

const char* to_string(Label label) { return label == Label::normal ? "normal" : "anomalous"; }

void WindowingConfig::validate() const {
    if (length < 1) {
        throw InputError("window length must be >= 1");
    }
    if (stride < 1 || stride > length) {
        throw InputError("window stride must be in [1, window length]");
    }
}

std::filesystem::path manifest_path(const std::filesystem::path& csv) {
    std::filesystem::path p = csv;
    p.replace_extension(".json");
    return p;
}

Dataset parse_records(const std::string& text, double sample_rate_hz) {
    Dataset dataset;
    dataset.sample_rate_hz = sample_rate_hz;

    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;

    if (!std::getline(in, line)) {
        throw InputError("empty dataset file");
    }
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_commas(line);
    const char* fixed[] = {"sample_id", "frame_idx", "label", "anomaly_type"};
    if (header.size() < 5) {
        throw InputError(line_error(line_no, "header needs sample_id,frame_idx,label,anomaly_type and >= 1 signal"));
    }
    for (std::size_t i = 0; i < 4; ++i) {
        if (header[i] != fixed[i]) {
            throw InputError(line_error(line_no, std::string("missing column ") + fixed[i]));
        }
    }
    const Index signals = static_cast<Index>(header.size() - 4);
    for (Index j = 0; j < signals; ++j) {
        if (header[4 + j] != "sig_" + std::to_string(j)) {
            throw InputError(line_error(line_no, "expected column sig_" + std::to_string(j)));
        }
    }
    dataset.signals = signals;

    std::unordered_set<std::string> finished;
    std::vector<double> values;
    Record current;
    bool open = false;

    auto close_current = [&] {
        if (!open) return;
        const Index rows = static_cast<Index>(values.size()) / signals;
        current.frames = Eigen::Map<const Frames>(values.data(), rows, signals);
        current.sample_rate_hz = sample_rate_hz;
        finished.insert(current.sample_id);
        dataset.records.push_back(std::move(current));
        current = Record{};
        values.clear();
        open = false;
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_commas(line);
        if (cells.size() != header.size()) {
            throw InputError(line_error(line_no, "expected " + std::to_string(header.size()) + " cells, got " +
                                                     std::to_string(cells.size())));
        }
        const std::string sample_id(cells[0]);
        if (sample_id.empty()) {
            throw InputError(line_error(line_no, "empty sample_id"));
        }
        if (!open || sample_id != current.sample_id) {
            close_current();
            if (finished.count(sample_id) != 0) {
                throw InputError(line_error(line_no, "rows of sample " + sample_id + " are not contiguous"));
            }
            current.sample_id = sample_id;
            open = true;
            if (cells[2] == "normal") {
                current.label = Label::normal;
            } else if (cells[2] == "anomalous") {
                current.label = Label::anomalous;
            } else {
                throw InputError(line_error(line_no, "label must be normal or anomalous"));
            }
            if (!cells[3].empty()) {
                current.anomaly_type = std::string(cells[3]);
            }
            if ((current.label == Label::normal) != !current.anomaly_type.has_value()) {
                throw InputError(line_error(line_no, "label and anomaly_type disagree for " + sample_id));
            }
        } else if (cells[2] != to_string(current.label) || cells[3] != current.anomaly_type.value_or("")) {
            throw InputError(line_error(line_no, "label changes within sample " + sample_id));
        }

        long long frame_idx = -1;
        const auto fi = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), frame_idx);
        const long long expected = static_cast<long long>(values.size()) / signals;
        if (fi.ec != std::errc() || fi.ptr != cells[1].data() + cells[1].size() || frame_idx != expected) {
            throw InputError(line_error(line_no, "frame_idx must be " + std::to_string(expected)));
        }
        for (Index j = 0; j < signals; ++j) {
            const std::string_view cell = cells[4 + j];
            double v = 0.0;
            const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (r.ec != std::errc() || r.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
                throw InputError(line_error(line_no, "non-numeric value in sig_" + std::to_string(j)));
            }
            values.push_back(v);
        }
    }
    close_current();
    return dataset;
}

Dataset load_records(const std::filesystem::path& csv) {
    double rate = 100.0;
    std::optional<Index> manifest_signals;
    const auto mpath = manifest_path(csv);
    if (std::filesystem::exists(mpath)) {
        nlohmann::json manifest;
        try {
            manifest = nlohmann::json::parse(read_file(mpath));
        } catch (const nlohmann::json::exception& e) {
            throw InputError("invalid manifest " + mpath.string() + ": " + e.what());
        }
        if (manifest.value("schema_version", 0) != kSchemaVersion) {
            throw InputError("unsupported dataset schema_version in " + mpath.string());
        }
        rate = manifest.at("sample_rate_hz").get<double>();
        manifest_signals = manifest.at("n_signals").get<Index>();
    }
    Dataset dataset = parse_records(read_file(csv), rate);
    if (manifest_signals && *manifest_signals != dataset.signals) {
        throw InputError("manifest n_signals does not match CSV columns");
    }
    return dataset;
}

std::string format_records(const Dataset& dataset) {
    std::string out = "sample_id,frame_idx,label,anomaly_type";
    for (Index j = 0; j < dataset.signals; ++j) {
        out += ",sig_" + std::to_string(j);
    }
    out += '\n';
    for (const Record& r : dataset.records) {
        if (r.sample_id.find_first_of(",\n\r") != std::string::npos) {
            throw InputError("sample_id may not contain commas or newlines: " + r.sample_id);
        }
        if (r.signals() != dataset.signals) {
            throw InputError("record " + r.sample_id + " has inconsistent signal count");
        }
        const std::string prefix = r.sample_id;
        const std::string type = r.anomaly_type.value_or("");
        for (Index t = 0; t < r.length(); ++t) {
            out += prefix;
            out += ',';
            out += std::to_string(t);
            out += ',';
            out += to_string(r.label);
            out += ',';
            out += type;
            for (Index j = 0; j < r.signals(); ++j) {
                out += ',';
                append_double(out, r.frames(t, j));
            }
            out += '\n';
        }
    }
    return out;
}

void save_records(const Dataset& dataset, const std::filesystem::path& csv, const nlohmann::json& provenance) {
    const std::string body = format_records(dataset);
    {
        std::ofstream out(csv, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + csv.string());
        out << body;
    }
    nlohmann::json manifest = {
        {"schema_version", kSchemaVersion},
        {"n_signals", dataset.signals},
        {"sample_rate_hz", dataset.sample_rate_hz},
        {"n_records", dataset.records.size()},
    };
    if (!provenance.is_null()) manifest["config"] = provenance;
    std::ofstream mout(manifest_path(csv), std::ios::binary);
    if (!mout) throw std::runtime_error("cannot write " + manifest_path(csv).string());
    mout << manifest.dump(2) << '\n';
}

NormStats fit_normalization(std::span<const Record> records) {
    if (records.empty()) {
        throw InputError("fit_normalization: no training records");
    }
    const Index n = records.front().signals();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
    double frames = 0.0;
    for (const Record& r : records) {
        if (r.signals() != n) {
            throw InputError("fit_normalization: inconsistent signal count");
        }
        sum += r.frames.colwise().sum().transpose();
        frames += static_cast<double>(r.length());
    }
    if (frames == 0.0) {
        throw InputError("fit_normalization: records contain no frames");
    }
    NormStats stats;
    stats.mean = sum / frames;
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(n);
    for (const Record& r : records) {
        sq += (r.frames.rowwise() - stats.mean.transpose()).array().square().colwise().sum().matrix().transpose();
    }
    stats.std = (sq / frames).array().sqrt().max(kNormStdFloor).matrix();
    return stats;
}

Record apply_normalization(const Record& record, const NormStats& stats) {
    if (stats.signals() != record.signals()) {
        throw InputError("apply_normalization: stats have " + std::to_string(stats.signals()) +
                         " signals, record has " + std::to_string(record.signals()));
    }
    Record out = record;
    for (Index t = 0; t < out.length(); ++t) {
        for (Index j = 0; j < out.signals(); ++j) {
            out.frames(t, j) = (record.frames(t, j) - stats.mean(j)) / stats.std(j);
        }
    }
    return out;
}

Record invert_normalization(const Record& record, const NormStats& stats) {
    if (stats.signals() != record.signals()) {
        throw InputError("invert_normalization: dimension mismatch");
    }
    Record out = record;
    for (Index t = 0; t < out.length(); ++t) {
        for (Index j = 0; j < out.signals(); ++j) {
            out.frames(t, j) = record.frames(t, j) * stats.std(j) + stats.mean(j);
        }
    }
    return out;
}

Record downsample(const Record& record, int factor) {
    if (factor < 1) {
        throw InputError("downsample factor must be >= 1");
    }
    Record out = record;
    const Index kept = (record.length() + factor - 1) / factor;
    out.frames.resize(kept, record.signals());
    for (Index i = 0; i < kept; ++i) {
        out.frames.row(i) = record.frames.row(i * factor);
    }
    out.sample_rate_hz = record.sample_rate_hz / factor;
    return out;
}

Index window_count(Index length, const WindowingConfig& config) {
    if (length < config.length) return 0;
    return (length - config.length) / config.stride + 1;
}

std::vector<Window> sliding_windows(const Record& record, const WindowingConfig& config) {
    config.validate();
    if (record.length() < config.length) {
        throw InputError("record shorter than window: " + record.sample_id);
    }
    const Index count = window_count(record.length(), config);
    std::vector<Window> windows;
    windows.reserve(static_cast<std::size_t>(count));
    for (Index k = 0; k < count; ++k) {
        const Index start = k * config.stride;
        windows.push_back(Window{start, record.frames.middleRows(start, config.length)});
    }
    return windows;
}

void check_signal_count(const Dataset& dataset, Index signals) {
    if (dataset.signals != signals) {
        throw InputError("dataset has " + std::to_string(dataset.signals) + " signals, model expects " +
                         std::to_string(signals));
    }
}

} // namespace mafaae::data
