#pragma once

// Test-side central-difference oracle, kept independent of the library's own
// gradient checker. Differentiates a scalar function of a flat value vector.

#include <cmath>
#include <functional>
#include <vector>

namespace testsupport {

inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double step = 1e-5) {
  std::vector<double> grad(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// max_i |a_i - b_i| scaled by the larger infinity norm; zero-vs-zero counts
// as agreement.
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, mag = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    mag = std::max({mag, std::abs(a[i]), std::abs(b[i])});
  }
  if (mag < 1e-7) return diff;
  return diff / mag;
}

}  // namespace testsupport
