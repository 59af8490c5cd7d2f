#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>

#include "dhac/error.hpp"

namespace dhac {

/// Certainty equivalent of exponential utility with its delta-method standard error.
struct UtilityEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  double lambda = 0.0;
};

/// U = -(1/lambda) log mean exp(-lambda x).
///
/// Samples are centred on their mean first, which makes cash invariance hold
/// to rounding and keeps the small-lambda limit accurate (expm1/log1p). A max
/// shift guards the exponential for large lambda.
inline UtilityEstimate utility(std::span<const double> x, double lambda) {
  require(lambda > 0.0 && std::isfinite(lambda), "utility: lambda must be positive");
  require(!x.empty(), "utility: no samples");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) {
    require(std::isfinite(v), "utility: samples must be finite");
    mean += v;
  }
  mean /= n;

  double shift = -std::numeric_limits<double>::infinity();
  for (double v : x) shift = std::max(shift, -lambda * (v - mean));

  UtilityEstimate u;
  u.n = x.size();
  u.lambda = lambda;
  double log_m = 0.0;  // log mean exp(-lambda (x - mean))
  double sum_w = 0.0, sum_w2 = 0.0;
  if (shift < 1.0) {
    double acc = 0.0;
    for (double v : x) {
      const double e = std::expm1(-lambda * (v - mean));
      acc += e;
      sum_w += 1.0 + e;
      sum_w2 += (1.0 + e) * (1.0 + e);
    }
    log_m = std::log1p(acc / n);
  } else {
    for (double v : x) {
      const double w = std::exp(-lambda * (v - mean) - shift);
      sum_w += w;
      sum_w2 += w * w;
    }
    if (!(sum_w > 0.0) || !std::isfinite(sum_w)) {
      throw DivergenceError("utility: exponential moments overflow");
    }
    log_m = shift + std::log(sum_w / n);
  }
  u.value = mean - log_m / lambda;

  // se(U) = sd(w) / (sqrt(n) * lambda * mean(w)), invariant to the shift.
  const double mw = sum_w / n;
  const double var_w = std::max(sum_w2 / n - mw * mw, 0.0) * n / std::max(n - 1.0, 1.0);
  u.std_error = std::sqrt(var_w / n) / (lambda * mw);
  return u;
}

}  // namespace dhac
