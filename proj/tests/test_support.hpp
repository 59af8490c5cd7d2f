#pragma once
// Independent oracles shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "dhac/bsmath.hpp"
#include "dhac/nn.hpp"

namespace dhac::testing {

template <class F>
double simpson(F&& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * ((i % 2) ? 4.0 : 2.0);
  return s * h / 3.0;
}

struct GreekFdReport {
  double worst = 0.0;
  const char* worst_name = "";
};

/// Relative error of each Greek against central differences. First-order
/// Greeks difference the price, second-order ones difference the matching
/// first-order Greek. The denominator is floored at 1% of the Greek's
/// at-the-money magnitude so values that vanish in the wings are measured
/// against a meaningful scale.
inline GreekFdReport greek_fd_errors(const bs::BsInputs& in) {
  const double hs = 1e-5 * in.spot, hv = 1e-5 * in.vol, ht = 1e-5 * in.tau;
  auto at = [&](double ds, double dv, double dt) {
    auto x = in;
    x.spot += ds;
    x.vol += dv;
    x.tau -= dt;  // calendar time moves opposite to time-to-maturity
    return bs::greeks(x);
  };
  auto atm = in;
  atm.strike = in.spot;
  const auto scale = bs::greeks(atm);

  struct Item {
    const char* name;
    double analytic, fd, scale;
  };
  const auto g = bs::greeks(in);
  const Item items[] = {
      {"delta", g.delta, (at(hs, 0, 0).price - at(-hs, 0, 0).price) / (2 * hs), 1.0},
      {"vega", g.vega, (at(0, hv, 0).price - at(0, -hv, 0).price) / (2 * hv), scale.vega},
      {"theta", g.theta, (at(0, 0, ht).price - at(0, 0, -ht).price) / (2 * ht), std::abs(scale.theta)},
      {"gamma", g.gamma, (at(hs, 0, 0).delta - at(-hs, 0, 0).delta) / (2 * hs), scale.gamma},
      {"vanna", g.vanna, (at(0, hv, 0).delta - at(0, -hv, 0).delta) / (2 * hv),
       scale.vega / (in.spot * in.vol)},
      {"charm", g.charm, (at(0, 0, ht).delta - at(0, 0, -ht).delta) / (2 * ht), 1.0 / in.tau},
      {"vomma", g.vomma, (at(0, hv, 0).vega - at(0, -hv, 0).vega) / (2 * hv), scale.vega / in.vol},
  };
  GreekFdReport r;
  for (const auto& it : items) {
    const double denom = std::max(std::abs(it.analytic), 1e-2 * it.scale);
    const double err = std::abs(it.fd - it.analytic) / denom;
    if (err > r.worst) {
      r.worst = err;
      r.worst_name = it.name;
    }
  }
  return r;
}

/// Worst relative error of backprop parameter and input gradients against
/// central differences of sum(upstream .* forward(x)).
inline double mlp_gradient_check(nn::Mlp net, const nn::Batch& x, const nn::Batch& upstream,
                                 double h = 1e-5) {
  nn::ForwardCache cache;
  nn::forward(net, x, &cache);
  const auto bw = nn::backward(net, cache, upstream);
  auto objective = [&](const nn::Mlp& m, const nn::Batch& in) {
    return (nn::forward(m, in).array() * upstream.array()).sum();
  };
  std::vector<std::pair<double, double>> pairs;
  auto compare = [&](double analytic, double fd) { pairs.emplace_back(analytic, fd); };
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    for (Eigen::Index k = 0; k < net.weights[l].size(); ++k) {
      double& w = net.weights[l].data()[k];
      const double w0 = w;
      w = w0 + h;
      const double up = objective(net, x);
      w = w0 - h;
      const double dn = objective(net, x);
      w = w0;
      compare(bw.params.weights[l].data()[k], (up - dn) / (2 * h));
    }
    for (Eigen::Index k = 0; k < net.biases[l].size(); ++k) {
      double& b = net.biases[l][k];
      const double b0 = b;
      b = b0 + h;
      const double up = objective(net, x);
      b = b0 - h;
      const double dn = objective(net, x);
      b = b0;
      compare(bw.params.biases[l][k], (up - dn) / (2 * h));
    }
  }
  nn::Batch xp = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double x0 = xp(i, j);
      xp(i, j) = x0 + h;
      const double up = objective(net, xp);
      xp(i, j) = x0 - h;
      const double dn = objective(net, xp);
      xp(i, j) = x0;
      compare(bw.input(i, j), (up - dn) / (2 * h));
    }
  }
  // Entries far below the largest gradient are judged against 1e-4 of it.
  double scale = 0.0;
  for (const auto& [a, f] : pairs) scale = std::max(scale, std::abs(a));
  double worst = 0.0;
  for (const auto& [a, f] : pairs) {
    const double denom = std::max({std::abs(a), std::abs(f), 1e-4 * scale, 1e-12});
    worst = std::max(worst, std::abs(a - f) / denom);
  }
  return worst;
}

}  // namespace dhac::testing
