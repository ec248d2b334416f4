#include "mma/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace mma {

std::optional<double> compute_aqn(const std::vector<double>& counts, const std::vector<bool>& success) {
  if (counts.size() != success.size()) throw std::invalid_argument("compute_aqn: lists differ in length");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!success[i]) continue;
    sum += counts[i];
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

double compute_asr(const std::vector<bool>& success) {
  if (success.empty()) throw std::invalid_argument("compute_asr: no attempts");
  std::size_t n = 0;
  for (bool s : success) n += s ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(success.size());
}

std::string format_metric(std::optional<double> value, int precision) {
  if (!value) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, *value);
  return buf;
}

}  // namespace mma
