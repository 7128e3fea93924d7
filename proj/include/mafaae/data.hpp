#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mafaae::data {

using Index = Eigen::Index;
/// Time-major frame matrix: row = time step, column = signal.
using Frames = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Label { normal, anomalous };

const char* to_string(Label label);

/// One task execution.
struct Record {
    std::string sample_id;
    Frames frames;
    Label label = Label::normal;
    std::optional<std::string> anomaly_type;
    double sample_rate_hz = 100.0;

    Index length() const { return frames.rows(); }
    Index signals() const { return frames.cols(); }
};

struct Dataset {
    std::vector<Record> records;
    Index signals = 0;
    double sample_rate_hz = 100.0;
};

inline constexpr int kSchemaVersion = 1;
inline constexpr double kNormStdFloor = 1e-8;

struct NormStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;

    Index signals() const { return mean.size(); }
};

struct WindowingConfig {
    Index length = 150;
    Index stride = 50;

    void validate() const;
};

struct Window {
    Index start = 0;
    Frames values;
};

/// Manifest sidecar path for a dataset CSV: `train.csv` -> `train.json`.
std::filesystem::path manifest_path(const std::filesystem::path& csv);

/// Parses a dataset CSV (and its manifest, if present).
/// Throws InputError with the offending line number on malformed input.
Dataset load_records(const std::filesystem::path& csv);

/// Writes the CSV and its manifest with round-trip-exact float formatting.
/// `provenance`, when not null, is stored in the manifest under "config".
void save_records(const Dataset& dataset, const std::filesystem::path& csv,
                  const nlohmann::json& provenance = nullptr);

/// Serialized CSV body, exactly as save_records writes it.
std::string format_records(const Dataset& dataset);
Dataset parse_records(const std::string& text, double sample_rate_hz);

/// Per-feature population mean/std over every frame of every record.
NormStats fit_normalization(std::span<const Record> records);
Record apply_normalization(const Record& record, const NormStats& stats);
Record invert_normalization(const Record& record, const NormStats& stats);

/// Keeps frames 0, n, 2n, ... and divides the sample rate by n.
Record downsample(const Record& record, int factor);

/// Number of full windows in a record of length T; 0 when T < window length.
Index window_count(Index length, const WindowingConfig& config);

/// Full windows starting at 0, stride, 2*stride, ...; trailing partial frames are dropped.
std::vector<Window> sliding_windows(const Record& record, const WindowingConfig& config);

/// Throws InputError unless every record has `signals` columns.
void check_signal_count(const Dataset& dataset, Index signals);

} // namespace mafaae::data
