#pragma once

#include "mafaae/autodiff.hpp"

#include <cstdint>
#include <vector>

namespace mafaae::numerics {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-2;
};

/// Moment accumulators for one parameter set.
struct OptimizerState {
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::uint64_t step = 0;
    double learning_rate = 1e-3;
    AdamWConfig config;

    static OptimizerState for_params(const ParamSet& params, double learning_rate, AdamWConfig config = {});
};

/// One AdamW update with bias correction and decoupled weight decay.
/// Arrays with `decay == false` are not decayed.
void adamw_step(ParamSet& params, const GradientMap& grads, OptimizerState& state);

struct ScheduleConfig {
    double initial_lr = 3e-3;
    double gamma = 0.1;
    std::vector<int> milestones{2, 12};
};

/// Multi-step decay: initial_lr * gamma^(number of milestones <= epoch).
double lr_schedule(int epoch, const ScheduleConfig& config);

} // namespace mafaae::numerics
