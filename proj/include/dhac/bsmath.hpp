#pragma once
// Closed-form Black-Scholes pricing and the Greeks that make up the portfolio
// feature vector. All time derivatives are taken with respect to calendar
// time t (tau = T - t), so a long call at zero rate has theta <= 0.

#include <cmath>
#include <numbers>

#include "dhac/error.hpp"

namespace dhac::bs {

inline double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
}

/// Standard normal CDF through erfc, accurate to double precision in both tails.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct BsInputs {
  double spot = 1.0;
  double strike = 1.0;
  double vol = 0.2;
  double tau = 0.0;
  double rate = 0.0;
  bool is_call = true;
};

struct GreekVector {
  double price = 0.0;
  double delta = 0.0;
  double gamma = 0.0;
  double vega = 0.0;
  double theta = 0.0;
  double vanna = 0.0;
  double charm = 0.0;
  double vomma = 0.0;

  GreekVector& operator+=(const GreekVector& o) {
    price += o.price; delta += o.delta; gamma += o.gamma; vega += o.vega;
    theta += o.theta; vanna += o.vanna; charm += o.charm; vomma += o.vomma;
    return *this;
  }
  GreekVector& operator*=(double a) {
    price *= a; delta *= a; gamma *= a; vega *= a;
    theta *= a; vanna *= a; charm *= a; vomma *= a;
    return *this;
  }
  friend GreekVector operator+(GreekVector a, const GreekVector& b) { return a += b; }
  friend GreekVector operator*(double s, GreekVector g) { return g *= s; }
  friend bool operator==(const GreekVector&, const GreekVector&) = default;
};

/// Prices and Greeks of one unit of a European option.
///
/// At tau == 0 the option is worth its intrinsic value, delta is the exercise
/// indicator (one half exactly at the money) and every higher Greek is zero.
inline GreekVector greeks(const BsInputs& in) {
  require(in.spot > 0.0 && std::isfinite(in.spot), "greeks: spot must be positive");
  require(in.strike > 0.0 && std::isfinite(in.strike), "greeks: strike must be positive");
  require(in.tau >= 0.0, "greeks: tau must be non-negative");

  GreekVector g;
  if (in.tau == 0.0) {
    const double sign = in.is_call ? 1.0 : -1.0;
    const double m = sign * (in.spot - in.strike);
    g.price = m > 0.0 ? m : 0.0;
    if (m > 0.0) {
      g.delta = sign;
    } else if (m == 0.0) {
      g.delta = 0.5 * sign;
    }
    return g;
  }
  require(in.vol > 0.0 && std::isfinite(in.vol), "greeks: vol must be positive when tau > 0");

  const double S = in.spot, K = in.strike, sigma = in.vol, tau = in.tau, r = in.rate;
  const double sqrt_tau = std::sqrt(tau);
  const double sd = sigma * sqrt_tau;
  const double d1 = (std::log(S / K) + (r + 0.5 * sigma * sigma) * tau) / sd;
  const double d2 = d1 - sd;
  const double pdf = norm_pdf(d1);
  const double df = std::exp(-r * tau);

  g.gamma = pdf / (S * sd);
  g.vega = S * pdf * sqrt_tau;
  g.vanna = -pdf * d2 / sigma;
  g.vomma = g.vega * d1 * d2 / sigma;
  // d(delta)/dt with tau = T - t; identical for calls and puts without dividends.
  g.charm = -pdf * (r / sd - d2 / (2.0 * tau));
  const double decay = -S * pdf * sigma / (2.0 * sqrt_tau);

  if (in.is_call) {
    const double nd2 = norm_cdf(d2);
    g.price = S * norm_cdf(d1) - K * df * nd2;
    g.delta = norm_cdf(d1);
    g.theta = decay - r * K * df * nd2;
  } else {
    const double nmd2 = norm_cdf(-d2);
    g.price = K * df * nmd2 - S * norm_cdf(-d1);
    g.delta = norm_cdf(d1) - 1.0;
    g.theta = decay + r * K * df * nmd2;
  }
  return g;
}

}  // namespace dhac::bs
