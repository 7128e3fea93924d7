#pragma once

// Checkpoint container:
//
//   "MAFAAECK"                      8 bytes
//   format version                  u32 little-endian
//   header length                   u64 little-endian
//   header                          UTF-8 JSON (config, normalization, calibration,
//                                   metadata, array table)
//   arrays                          float64 little-endian, row-major, in table order
//   digest                          32-byte SHA-256 of everything above

#include "mafaae/calibration.hpp"
#include "mafaae/data.hpp"
#include "mafaae/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace mafaae::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    GeneratorParams generator;
    DiscriminatorParams discriminator;
    data::NormStats norm;
    double sample_rate_hz = 100.0;
    std::optional<detection::CalibrationStats> calibration;
    /// Resolved run configuration and provenance; echoed verbatim.
    nlohmann::json metadata = nlohmann::json::object();
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws InputError on bad magic, version mismatch, digest mismatch or malformed content.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

} // namespace mafaae::model
