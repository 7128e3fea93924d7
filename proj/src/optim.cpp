#include "mafaae/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mafaae::numerics {

OptimizerState OptimizerState::for_params(const ParamSet& params, double learning_rate, AdamWConfig config) {
    OptimizerState state;
    state.learning_rate = learning_rate;
    state.config = config;
    for (const auto& p : params) {
        state.first_moment.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        state.second_moment.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
    return state;
}

void adamw_step(ParamSet& params, const GradientMap& grads, OptimizerState& state) {
    if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size()) {
        throw std::invalid_argument("adamw_step: parameter/gradient/state count mismatch");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Matrix& p = params[k].value;
        if (grads[k].rows() != p.rows() || grads[k].cols() != p.cols() ||
            state.first_moment[k].rows() != p.rows() || state.first_moment[k].cols() != p.cols()) {
            throw std::invalid_argument("adamw_step: shape mismatch for " + params[k].name);
        }
    }

    ++state.step;
    const AdamWConfig& c = state.config;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    const double lr = state.learning_rate;

    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k].value.array();
        auto m = state.first_moment[k].array();
        auto v = state.second_moment[k].array();
        const auto g = grads[k].array();
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g.square();
        const double decay = params[k].decay ? c.weight_decay : 0.0;
        p -= lr * ((m / correction1) / ((v / correction2).sqrt() + c.epsilon) + decay * p);
    }
}

double lr_schedule(int epoch, const ScheduleConfig& config) {
    if (!std::is_sorted(config.milestones.begin(), config.milestones.end()) ||
        std::adjacent_find(config.milestones.begin(), config.milestones.end()) != config.milestones.end()) {
        throw std::invalid_argument("lr_schedule: milestones must be strictly increasing");
    }
    const auto passed = std::upper_bound(config.milestones.begin(), config.milestones.end(), epoch) -
                        config.milestones.begin();
    return config.initial_lr * std::pow(config.gamma, static_cast<double>(passed));
}

} // namespace mafaae::numerics
