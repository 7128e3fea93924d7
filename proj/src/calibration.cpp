#include "mafaae/calibration.hpp"

#include "mafaae/errors.hpp"

namespace mafaae::detection {

const char* to_string(model::EpsilonMode mode) { return mode == model::EpsilonMode::zero ? "zero" : "sample"; }

model::EpsilonMode parse_epsilon_mode(const std::string& name) {
    if (name == "zero") return model::EpsilonMode::zero;
    if (name == "sample") return model::EpsilonMode::sample;
    throw InputError("epsilon mode must be zero or sample, got " + name);
}

void to_json(nlohmann::json& j, const CalibrationStats& c) {
    j = nlohmann::json{
        {"mu_normal", c.mu_normal},
        {"sigma_normal", c.sigma_normal},
        {"epsilon_mode", to_string(c.epsilon_mode)},
        {"windows", c.windows},
        {"scores", c.scores},
    };
}

void from_json(const nlohmann::json& j, CalibrationStats& c) {
    c.mu_normal = j.at("mu_normal").get<double>();
    c.sigma_normal = j.at("sigma_normal").get<double>();
    c.epsilon_mode = parse_epsilon_mode(j.at("epsilon_mode").get<std::string>());
    c.windows = j.at("windows").get<std::size_t>();
    c.scores = j.value("scores", std::vector<double>{});
    if (!(c.sigma_normal >= kSigmaFloor)) {
        throw InputError("calibration sigma_normal below floor");
    }
}

} // namespace mafaae::detection
