#include "mafaae/checkpoint.hpp"

#include "mafaae/errors.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mafaae::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "MAFAAECK";
constexpr std::size_t kDigestSize = 32;

std::array<unsigned char, kDigestSize> sha256(std::string_view bytes) {
    std::array<unsigned char, kDigestSize> out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != kDigestSize) {
        throw std::runtime_error("SHA-256 computation failed");
    }
    return out;
}

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t& pos) {
    if (pos + sizeof(T) > bytes.size()) {
        throw InputError("checkpoint truncated");
    }
    T value;
    std::memcpy(&value, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

nlohmann::json array_table(const numerics::ParamSet& set) {
    nlohmann::json table = nlohmann::json::array();
    for (const auto& p : set) {
        table.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"decay", p.decay}});
    }
    return table;
}

void put_arrays(std::string& out, const numerics::ParamSet& set) {
    for (const auto& p : set) {
        for (Index r = 0; r < p.value.rows(); ++r) {
            for (Index c = 0; c < p.value.cols(); ++c) {
                put<double>(out, p.value(r, c));
            }
        }
    }
}

numerics::ParamSet get_arrays(const nlohmann::json& table, std::string_view bytes, std::size_t& pos) {
    numerics::ParamSet set;
    for (const auto& entry : table) {
        numerics::ParamArray p;
        p.name = entry.at("name").get<std::string>();
        p.decay = entry.at("decay").get<bool>();
        const auto rows = entry.at("rows").get<Index>();
        const auto cols = entry.at("cols").get<Index>();
        if (rows < 0 || cols < 0) throw InputError("checkpoint: negative array shape");
        p.value.resize(rows, cols);
        for (Index r = 0; r < rows; ++r) {
            for (Index c = 0; c < cols; ++c) {
                p.value(r, c) = get<double>(bytes, pos);
            }
        }
        set.push_back(std::move(p));
    }
    return set;
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

} // namespace

std::string sha256_hex(std::string_view bytes) {
    static const char* digits = "0123456789abcdef";
    std::string hex;
    for (unsigned char b : sha256(bytes)) {
        hex += digits[b >> 4];
        hex += digits[b & 0xf];
    }
    return hex;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
    nlohmann::json header = {
        {"format_version", kCheckpointVersion},
        {"model_config", ck.config},
        {"norm_stats", {{"mean", to_vector(ck.norm.mean)}, {"std", to_vector(ck.norm.std)}}},
        {"sample_rate_hz", ck.sample_rate_hz},
        {"metadata", ck.metadata},
        {"generator_arrays", array_table(ck.generator.arrays)},
        {"discriminator_arrays", array_table(ck.discriminator.arrays)},
        {"dtype", "float64"},
        {"mask_rule", "degree-cycle"},
    };
    if (ck.calibration) {
        header["calibration"] = *ck.calibration;
    }
    const std::string text = header.dump();

    std::string out(kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out += text;
    put_arrays(out, ck.generator.arrays);
    put_arrays(out, ck.discriminator.arrays);
    const auto digest = sha256(out);
    out.append(reinterpret_cast<const char*>(digest.data()), digest.size());
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    if (bytes.size() < kMagic.size() + 12 + kDigestSize || bytes.substr(0, kMagic.size()) != kMagic) {
        throw InputError("not a checkpoint file");
    }
    const std::string_view body = bytes.substr(0, bytes.size() - kDigestSize);
    const auto digest = sha256(body);
    if (std::memcmp(digest.data(), bytes.data() + body.size(), kDigestSize) != 0) {
        throw InputError("checkpoint digest mismatch (corrupted file)");
    }
    std::size_t pos = kMagic.size();
    const auto version = get<std::uint32_t>(body, pos);
    if (version != kCheckpointVersion) {
        throw InputError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointVersion) + ")");
    }
    const auto header_len = get<std::uint64_t>(body, pos);
    if (pos + header_len > body.size()) {
        throw InputError("checkpoint truncated");
    }
    Checkpoint ck;
    try {
        const auto header = nlohmann::json::parse(body.substr(pos, header_len));
        pos += header_len;
        ck.config = header.at("model_config").get<ModelConfig>();
        ck.norm.mean = from_vector(header.at("norm_stats").at("mean").get<std::vector<double>>());
        ck.norm.std = from_vector(header.at("norm_stats").at("std").get<std::vector<double>>());
        ck.sample_rate_hz = header.at("sample_rate_hz").get<double>();
        ck.metadata = header.at("metadata");
        if (header.contains("calibration")) {
            ck.calibration = header.at("calibration").get<detection::CalibrationStats>();
        }
        ck.generator.arrays = get_arrays(header.at("generator_arrays"), body, pos);
        ck.discriminator.arrays = get_arrays(header.at("discriminator_arrays"), body, pos);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed checkpoint header: ") + e.what());
    }
    if (pos != body.size()) {
        throw InputError("checkpoint has trailing bytes");
    }
    if (ck.norm.mean.size() != ck.config.signals || ck.norm.std.size() != ck.config.signals) {
        throw InputError("checkpoint normalization stats do not match signal count");
    }
    check_generator(ck.config, ck.generator);
    check_discriminator(ck.config, ck.discriminator);
    return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(checkpoint);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open checkpoint " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

} // namespace mafaae::model
