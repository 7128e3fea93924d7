#pragma once

#include "mafaae/model.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <vector>

namespace mafaae::detection {

inline constexpr double kSigmaFloor = 1e-8;

/// Statistics of L1 reconstruction errors over normal windows.
struct CalibrationStats {
    double mu_normal = 0.0;
    double sigma_normal = 1.0;
    /// Epsilon mode the statistics were computed in; detection must match it.
    model::EpsilonMode epsilon_mode = model::EpsilonMode::zero;
    std::size_t windows = 0;
    /// Sorted anomaly scores of the calibration windows, for quantile thresholds.
    std::vector<double> scores;
};

void to_json(nlohmann::json& j, const CalibrationStats& c);
void from_json(const nlohmann::json& j, CalibrationStats& c);

const char* to_string(model::EpsilonMode mode);
model::EpsilonMode parse_epsilon_mode(const std::string& name);

} // namespace mafaae::detection
