#pragma once

#include <span>
#include <vector>

namespace mafaae::numerics {

double mean(std::span<const double> values);

/// Population standard deviation (divides by n).
double population_std(std::span<const double> values);

/// Inclusive linear-interpolation quantile of ascending `sorted` values:
/// position q * (n - 1), interpolated between neighbours. q in [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);

} // namespace mafaae::numerics
