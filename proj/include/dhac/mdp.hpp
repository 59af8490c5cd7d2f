#pragma once
// Hedging environment: portfolio features built from Black-Scholes Greeks,
// proportional transaction costs, realized-cashflow rewards and terminal
// liquidation at book value.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dhac/bsmath.hpp"
#include "dhac/error.hpp"
#include "dhac/heston.hpp"
#include "dhac/nn.hpp"

namespace dhac::mdp {

struct EnvConfig {
  heston::HestonParams heston{};
  std::size_t n_steps = 30;
  double dt = 1.0 / 30.0;
  double cost_rate = 0.002;
  double notional = -100.0;
  std::vector<double> strikes{0.9, 0.925, 0.95, 0.975, 1.0, 1.025, 1.05, 1.075, 1.1};
  double vol_floor = 1e-4;
  double feature_clip = 10.0;
  // log10(lambda) is encoded as (log10(lambda) - center) / scale.
  double log_lambda_center = -2.0;
  double log_lambda_scale = 2.0;

  double maturity() const { return static_cast<double>(n_steps) * dt; }

  void validate() const {
    heston.validate();
    require(n_steps > 0, "env: n_steps must be positive");
    require(dt > 0.0, "env: dt must be positive");
    require(cost_rate >= 0.0, "env: cost_rate must be non-negative");
    require(!strikes.empty(), "env: strike grid is empty");
    for (double k : strikes) require(k > 0.0, "env: strikes must be positive");
    require(vol_floor > 0.0, "env: vol_floor must be positive");
    require(feature_clip > 0.0, "env: feature_clip must be positive");
    require(log_lambda_scale > 0.0, "env: log_lambda_scale must be positive");
  }
};

struct MarketState {
  std::size_t t = 0;
  double spot = 1.0;
  double variance = 0.0;
  double tau_remaining = 0.0;
};

struct PortfolioState {
  double option_strike = 1.0;
  double option_notional = 0.0;
  double option_tau = 0.0;
  double hedge_units = 0.0;
};

/// Book value followed by the seven portfolio Greeks.
struct LmrVector {
  double book_value = 0.0;
  double delta = 0.0;
  double gamma = 0.0;
  double vega = 0.0;
  double theta = 0.0;
  double vanna = 0.0;
  double charm = 0.0;
  double vomma = 0.0;

  static constexpr std::size_t kSize = 8;

  std::array<double, kSize> to_array() const {
    return {book_value, delta, gamma, vega, theta, vanna, charm, vomma};
  }
  LmrVector& operator+=(const LmrVector& o) {
    book_value += o.book_value; delta += o.delta; gamma += o.gamma; vega += o.vega;
    theta += o.theta; vanna += o.vanna; charm += o.charm; vomma += o.vomma;
    return *this;
  }
  friend LmrVector operator+(LmrVector a, const LmrVector& b) { return a += b; }
  friend LmrVector operator*(double s, LmrVector v) {
    v.book_value *= s; v.delta *= s; v.gamma *= s; v.vega *= s;
    v.theta *= s; v.vanna *= s; v.charm *= s; v.vomma *= s;
    return v;
  }
  friend bool operator==(const LmrVector&, const LmrVector&) = default;
};

inline double implied_vol(double variance, double floor) {
  return std::max(std::sqrt(std::max(variance, 0.0)), floor);
}

/// Features of `units` of the underlying: it carries only book value and delta.
inline LmrVector underlying_lmr(double units, double spot) {
  LmrVector v;
  v.book_value = units * spot;
  v.delta = units;
  return v;
}

/// Features of the option leg (notional times the per-unit Black-Scholes Greeks).
inline LmrVector option_lmr(double strike, double notional, double tau, double spot,
                            double variance, double vol_floor) {
  if (notional == 0.0) return {};
  const auto g = bs::greeks({spot, strike, implied_vol(variance, vol_floor), tau, 0.0, true});
  return notional * LmrVector{g.price, g.delta, g.gamma, g.vega, g.theta, g.vanna, g.charm, g.vomma};
}

inline LmrVector lmr(const PortfolioState& z, const MarketState& m, double vol_floor = 1e-4) {
  require(m.spot > 0.0, "lmr: spot must be positive");
  require(std::isfinite(z.hedge_units), "lmr: hedge units must be finite");
  return option_lmr(z.option_strike, z.option_notional, z.option_tau, m.spot, m.variance,
                    vol_floor) +
         underlying_lmr(z.hedge_units, m.spot);
}

inline double trade_cost(double action, double spot, double cost_rate) {
  return cost_rate * std::abs(action) * spot;
}

struct StepResult {
  double reward = 0.0;
  PortfolioState next;
};

/// One trading step before expiry: pay for the trade and its cost. The option
/// produces no cashflow before maturity.
inline StepResult step(const PortfolioState& z, const MarketState& m, double action,
                       double cost_rate) {
  require(std::isfinite(action), "step: action must be finite");
  StepResult r;
  r.reward = -action * m.spot - trade_cost(action, m.spot, cost_rate);
  r.next = z;
  r.next.hedge_units += action;
  return r;
}

/// Cashflow at maturity: the option settles and the hedge is liquidated at
/// mid minus costs.
inline double terminal_reward(const PortfolioState& z, const MarketState& m, double cost_rate) {
  const double payoff = z.option_notional * std::max(m.spot - z.option_strike, 0.0);
  return payoff + z.hedge_units * m.spot - trade_cost(z.hedge_units, m.spot, cost_rate);
}

// ---------------------------------------------------------------------------
// Observations

enum Feature : int {
  kBookValue = 0,
  kDelta,
  kGamma,
  kVega,
  kTheta,
  kVanna,
  kCharm,
  kVomma,
  kStrike,
  kTau,
  kSpot,
  kImpliedVol,
  kLogLambda,
  kNumFeatures
};

inline constexpr std::array<const char*, kNumFeatures> kFeatureNames{
    "book_value", "delta", "gamma",  "vega", "theta",       "vanna",     "charm",
    "vomma",      "strike", "tau",   "spot", "implied_vol", "log_lambda"};

inline double encode_lambda(double lambda, const EnvConfig& env) {
  return (std::log10(lambda) - env.log_lambda_center) / env.log_lambda_scale;
}

using RawObservation = std::array<double, kNumFeatures>;

inline RawObservation observe(const LmrVector& book, double strike, double tau, double spot,
                              double variance, double lambda, const EnvConfig& env) {
  const auto l = book.to_array();
  RawObservation o{};
  std::copy(l.begin(), l.end(), o.begin());
  o[kStrike] = strike;
  o[kTau] = tau;
  o[kSpot] = spot;
  o[kImpliedVol] = implied_vol(variance, env.vol_floor);
  o[kLogLambda] = encode_lambda(lambda, env);
  return o;
}

/// Frozen per-feature affine normalization followed by a symmetric clip.
struct Normalizer {
  std::vector<double> mean = std::vector<double>(kNumFeatures, 0.0);
  std::vector<double> std = std::vector<double>(kNumFeatures, 1.0);
  double clip = 10.0;

  /// Normalized n x d batch. `slope`, if given, receives d(normalized)/d(raw).
  nn::Batch apply(const nn::Batch& raw, nn::Batch* slope = nullptr) const {
    require(static_cast<std::size_t>(raw.cols()) == mean.size(), "normalizer: width mismatch");
    nn::Batch out(raw.rows(), raw.cols());
    if (slope) slope->resize(raw.rows(), raw.cols());
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      for (Eigen::Index j = 0; j < raw.cols(); ++j) {
        const double z = (raw(i, j) - mean[j]) / std[j];
        const bool clipped = z > clip || z < -clip;
        out(i, j) = std::clamp(z, -clip, clip);
        if (slope) (*slope)(i, j) = clipped ? 0.0 : 1.0 / std[j];
      }
    }
    return out;
  }

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

inline constexpr double kStdFloor = 1e-8;

struct FeatureStats {
  Normalizer normalizer;
  std::vector<std::string> degenerate;  // features whose std hit the floor
};

/// Column means and standard deviations of `rows`; columns listed in `fixed`
/// keep the identity transform.
inline FeatureStats fit_feature_stats(const nn::Batch& rows, const std::vector<int>& fixed = {},
                                      double clip = 10.0) {
  require(rows.rows() > 1, "fit_feature_stats: need at least two rows");
  FeatureStats fs;
  const auto d = static_cast<std::size_t>(rows.cols());
  fs.normalizer.mean.assign(d, 0.0);
  fs.normalizer.std.assign(d, 1.0);
  fs.normalizer.clip = clip;
  for (std::size_t j = 0; j < d; ++j) {
    if (std::find(fixed.begin(), fixed.end(), static_cast<int>(j)) != fixed.end()) continue;
    const auto col = rows.col(static_cast<Eigen::Index>(j));
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / static_cast<double>(rows.rows() - 1);
    double sd = std::sqrt(var);
    if (!(sd > kStdFloor)) {
      sd = kStdFloor;
      fs.degenerate.push_back(j < kFeatureNames.size() ? kFeatureNames[j] : std::to_string(j));
    }
    fs.normalizer.mean[j] = mean;
    fs.normalizer.std[j] = sd;
  }
  return fs;
}

/// Strike index for path `i` of a seeded uniform assignment over the grid.
inline std::vector<double> assign_strikes(std::size_t n, const std::vector<double>& grid,
                                          std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
  std::vector<double> out(n);
  for (auto& k : out) k = grid[pick(eng)];
  return out;
}

// ---------------------------------------------------------------------------
// Batched episodes

/// A policy maps a batch of raw observations (n x kNumFeatures) to trades.
using Policy = std::function<Eigen::VectorXd(const nn::Batch&)>;

/// Risk aversion per (path, step); lets evaluation switch lambda mid-episode.
using LambdaSchedule = std::function<double(std::size_t path, std::size_t t)>;

struct Rollout {
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  std::vector<double> pnl;      // sum of all rewards per path
  std::vector<double> actions;  // [n_paths x n_steps]
  std::vector<double> rewards;  // [n_paths x n_steps], last step includes liquidation
  std::vector<double> hedges;   // [n_paths x (n_steps + 1)], position after each trade
  std::vector<double> initial_book_value;

  double action(std::size_t i, std::size_t t) const { return actions[i * n_steps + t]; }
  double hedge(std::size_t i, std::size_t t) const { return hedges[i * (n_steps + 1) + t]; }
};

/// Observations of the option leg alone (no hedge) for every path at step t.
inline nn::Batch option_observations(const heston::PathSet& paths,
                                     const std::vector<std::size_t>& idx,
                                     const std::vector<double>& strikes,
                                     const std::vector<double>& lambdas, std::size_t t,
                                     const EnvConfig& env) {
  const std::size_t n = idx.size();
  nn::Batch obs(static_cast<Eigen::Index>(n), kNumFeatures);
  const double tau = static_cast<double>(env.n_steps - t) * env.dt;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = paths.spot(idx[i], t);
    const double v = paths.variance(idx[i], t);
    const LmrVector book = option_lmr(strikes[i], env.notional, tau, s, v, env.vol_floor);
    const auto o = observe(book, strikes[i], tau, s, v, lambdas[i], env);
    for (int j = 0; j < kNumFeatures; ++j) obs(static_cast<Eigen::Index>(i), j) = o[j];
  }
  return obs;
}

/// Adds `hedge[i]` units of the underlying to row i; only book value and delta move.
inline nn::Batch with_hedge(nn::Batch obs, const Eigen::Ref<const Eigen::VectorXd>& hedge) {
  obs.col(kBookValue).array() += hedge.array() * obs.col(kSpot).array();
  obs.col(kDelta) += hedge;
  return obs;
}

/// Raw observations for every path at step t with the given hedge positions.
inline nn::Batch observe_batch(const heston::PathSet& paths, const std::vector<std::size_t>& idx,
                               const std::vector<double>& strikes,
                               const std::vector<double>& hedge, const std::vector<double>& lambdas,
                               std::size_t t, const EnvConfig& env) {
  return with_hedge(option_observations(paths, idx, strikes, lambdas, t, env),
                    Eigen::Map<const Eigen::VectorXd>(hedge.data(), static_cast<Eigen::Index>(hedge.size())));
}

/// Runs `policy` on the selected paths from an empty hedge book and returns the
/// realized cashflows. Every path holds one short call on its strike.
inline Rollout rollout(const heston::PathSet& paths, const std::vector<std::size_t>& idx,
                       const std::vector<double>& strikes, const LambdaSchedule& lambda,
                       const Policy& policy, const EnvConfig& env) {
  require(paths.n_steps == env.n_steps, "rollout: path set and environment disagree on steps");
  require(idx.size() == strikes.size(), "rollout: one strike per path required");
  const std::size_t n = idx.size();
  const std::size_t T = env.n_steps;
  Rollout r;
  r.n_paths = n;
  r.n_steps = T;
  r.pnl.assign(n, 0.0);
  r.actions.assign(n * T, 0.0);
  r.rewards.assign(n * T, 0.0);
  r.hedges.assign(n * (T + 1), 0.0);
  r.initial_book_value.assign(n, 0.0);
  std::vector<double> hedge(n, 0.0), lam(n);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < n; ++i) lam[i] = lambda(i, t);
    const nn::Batch obs = observe_batch(paths, idx, strikes, hedge, lam, t, env);
    if (t == 0) {
      for (std::size_t i = 0; i < n; ++i) r.initial_book_value[i] = obs(static_cast<Eigen::Index>(i), kBookValue);
    }
    const Eigen::VectorXd a = policy(obs);
    require(static_cast<std::size_t>(a.size()) == n, "rollout: policy returned wrong batch size");
    for (std::size_t i = 0; i < n; ++i) {
      const MarketState m{t, paths.spot(idx[i], t), paths.variance(idx[i], t),
                          static_cast<double>(T - t) * env.dt};
      PortfolioState z{strikes[i], env.notional, m.tau_remaining, hedge[i]};
      auto res = step(z, m, a[static_cast<Eigen::Index>(i)], env.cost_rate);
      double reward = res.reward;
      if (t + 1 == T) {
        const MarketState mt{T, paths.spot(idx[i], T), paths.variance(idx[i], T), 0.0};
        res.next.option_tau = 0.0;
        reward += terminal_reward(res.next, mt, env.cost_rate);
      }
      hedge[i] = res.next.hedge_units;
      r.actions[i * T + t] = a[static_cast<Eigen::Index>(i)];
      r.rewards[i * T + t] = reward;
      r.hedges[i * (T + 1) + t + 1] = hedge[i];
      r.pnl[i] += reward;
    }
  }
  return r;
}

/// Trade that flattens the book's delta: the Black-Scholes delta hedge.
inline Policy delta_hedge() {
  return [](const nn::Batch& obs) -> Eigen::VectorXd { return -obs.col(kDelta); };
}

/// Normalization statistics of the states visited by the delta hedge across
/// all strikes of the grid (assigned uniformly per path).
inline FeatureStats fit_normalization(const heston::PathSet& paths, const EnvConfig& env,
                                      std::uint64_t seed, std::size_t max_paths = 20000) {
  env.validate();
  const std::size_t n = std::min(paths.n_paths, max_paths);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const auto strikes = assign_strikes(n, env.strikes, seed);
  const std::size_t T = env.n_steps;
  nn::Batch rows(static_cast<Eigen::Index>(n * T), kNumFeatures);
  std::vector<double> hedge(n, 0.0), lam(n, 1e-2);
  for (std::size_t t = 0; t < T; ++t) {
    const nn::Batch obs = observe_batch(paths, idx, strikes, hedge, lam, t, env);
    rows.middleRows(static_cast<Eigen::Index>(t * n), static_cast<Eigen::Index>(n)) = obs;
    for (std::size_t i = 0; i < n; ++i) hedge[i] -= obs(static_cast<Eigen::Index>(i), kDelta);
  }
  return fit_feature_stats(rows, {kLogLambda}, env.feature_clip);
}

/// One CSV row per (path, step) of a rollout.
inline void write_episode_log(std::ostream& os, const heston::PathSet& paths,
                              const std::vector<std::size_t>& idx, const Rollout& r) {
  os << "path,t,spot,variance,action,reward,hedge_units\n";
  for (std::size_t i = 0; i < r.n_paths; ++i) {
    for (std::size_t t = 0; t < r.n_steps; ++t) {
      os << idx[i] << ',' << t << ',' << paths.spot(idx[i], t) << ','
         << paths.variance(idx[i], t) << ',' << r.action(i, t) << ','
         << r.rewards[i * r.n_steps + t] << ',' << r.hedge(i, t + 1) << '\n';
    }
  }
}

}  // namespace dhac::mdp
