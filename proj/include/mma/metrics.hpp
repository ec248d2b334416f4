#pragma once

#include <optional>
#include <string>
#include <vector>

namespace mma {

/// Mean of the counts whose attack succeeded; absent when nothing succeeded.
std::optional<double> compute_aqn(const std::vector<double>& counts, const std::vector<bool>& success);

/// Fraction of successes; throws std::invalid_argument on an empty list.
double compute_asr(const std::vector<bool>& success);

/// Fixed-precision rendering; an absent value prints as "-".
std::string format_metric(std::optional<double> value, int precision = 4);

}  // namespace mma
