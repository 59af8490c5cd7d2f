#pragma once
// Evaluation of trained policies and critics: utility of realized PnL, critic
// RMSE, indifference prices, hedge surfaces, dynamic risk-aversion schedules
// and PnL distributions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dhac/agent.hpp"
#include "dhac/baselines.hpp"
#include "dhac/error.hpp"
#include "dhac/heston.hpp"
#include "dhac/mdp.hpp"
#include "dhac/utility.hpp"

namespace dhac::eval {

// ---------------------------------------------------------------------------
// Statistics

inline double quantile(std::vector<double> x, double q) {
  require(!x.empty(), "quantile: no samples");
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

inline double mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double stddev(const std::vector<double>& x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

/// Ranks with ties averaged, starting at 1.
inline std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() > 1, "spearman: need two equal-length samples");
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Rollout helpers

/// First `steps` steps of a path set.
inline heston::PathSet first_steps(const heston::PathSet& p, std::size_t steps) {
  require(steps > 0 && steps <= p.n_steps, "first_steps: step count out of range");
  if (steps == p.n_steps) return p;
  heston::PathSet out = p;
  out.n_steps = steps;
  out.spots.resize(p.n_paths * (steps + 1));
  out.variances.resize(p.n_paths * (steps + 1));
  for (std::size_t i = 0; i < p.n_paths; ++i) {
    for (std::size_t t = 0; t <= steps; ++t) {
      out.spots[i * (steps + 1) + t] = p.spot(i, t);
      out.variances[i * (steps + 1) + t] = p.variance(i, t);
    }
  }
  return out;
}

inline mdp::EnvConfig with_steps(mdp::EnvConfig env, std::size_t steps) {
  env.n_steps = steps;
  return env;
}

inline std::vector<std::size_t> all_paths(const heston::PathSet& p) {
  std::vector<std::size_t> idx(p.n_paths);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

/// Rollout of `policy` on every path with one strike and a lambda schedule.
inline mdp::Rollout run_policy(const mdp::EnvConfig& env, const heston::PathSet& paths,
                               const mdp::Policy& policy, double strike,
                               const std::function<double(std::size_t)>& lambda_at) {
  const auto idx = all_paths(paths);
  return mdp::rollout(paths, idx, std::vector<double>(idx.size(), strike),
                      [&](std::size_t, std::size_t t) { return lambda_at(t); }, policy, env);
}

inline mdp::Rollout run_policy(const mdp::EnvConfig& env, const heston::PathSet& paths,
                               const mdp::Policy& policy, double strike, double lambda) {
  return run_policy(env, paths, policy, strike, [lambda](std::size_t) { return lambda; });
}

/// Raw observation of the initial state: fresh book, spot s0, variance v0.
inline nn::Batch initial_observation(const mdp::EnvConfig& env, double strike, double lambda,
                                     std::size_t steps) {
  const double tau = static_cast<double>(steps) * env.dt;
  const auto& p = env.heston;
  const auto book = mdp::option_lmr(strike, env.notional, tau, p.s0, p.v0, env.vol_floor);
  const auto o = mdp::observe(book, strike, tau, p.s0, p.v0, lambda, env);
  nn::Batch raw(1, mdp::kNumFeatures);
  for (int j = 0; j < mdp::kNumFeatures; ++j) raw(0, j) = o[j];
  return raw;
}

inline double initial_value(const agent::ActorCritic& m, double strike, double lambda,
                            std::size_t steps) {
  return agent::values(m, m.critic, initial_observation(m.env, strike, lambda, steps))[0];
}

inline double initial_hedge(const agent::ActorCritic& m, double strike, double lambda) {
  return agent::actions(m, initial_observation(m.env, strike, lambda, m.env.n_steps))[0];
}

// ---------------------------------------------------------------------------
// Critic validation

struct CriticCheck {
  double strike = 0.0;
  double lambda = 0.0;
  double value = 0.0;    // critic at s0
  double utility = 0.0;  // realized by the policy on the test paths
  double std_error = 0.0;
};

struct RmseReport {
  double rmse = 0.0;
  double bias = 0.0;  // mean(value - utility)
  std::vector<CriticCheck> rows;
};

using InitialValue = std::function<double(double strike, double lambda)>;

/// Compares predicted initial values with realized utility for random
/// portfolios: strike ~ U[0.9, 1.1], lambda ~ U[lambda_lo, lambda_hi].
inline RmseReport validate_critic(const mdp::EnvConfig& env, const mdp::Policy& policy,
                                  const InitialValue& value, const heston::PathSet& paths,
                                  std::size_t n_portfolios, std::uint64_t seed,
                                  double lambda_lo = 1e-4, double lambda_hi = 1.0) {
  require(n_portfolios > 0, "validate_critic: need at least one portfolio");
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> uk(0.9, 1.1), ul(lambda_lo, lambda_hi);
  RmseReport rep;
  double se = 0.0;
  for (std::size_t j = 0; j < n_portfolios; ++j) {
    CriticCheck c;
    c.strike = uk(eng);
    c.lambda = ul(eng);
    const auto r = run_policy(env, paths, policy, c.strike, c.lambda);
    const auto u = utility(r.pnl, c.lambda);
    c.value = value(c.strike, c.lambda);
    c.utility = u.value;
    c.std_error = u.std_error;
    se += (c.value - c.utility) * (c.value - c.utility);
    rep.bias += c.value - c.utility;
    rep.rows.push_back(c);
  }
  rep.rmse = std::sqrt(se / static_cast<double>(n_portfolios));
  rep.bias /= static_cast<double>(n_portfolios);
  return rep;
}

inline RmseReport validate_critic(const agent::ActorCritic& m, const heston::PathSet& paths,
                                  std::size_t n_portfolios, std::uint64_t seed) {
  return validate_critic(
      m.env, agent::as_policy(m),
      [&](double k, double l) { return initial_value(m, k, l, m.env.n_steps); }, paths, n_portfolios,
      seed);
}

// ---------------------------------------------------------------------------
// Surfaces

struct PriceCell {
  double strike = 0.0;
  std::size_t maturity_steps = 0;
  double maturity = 0.0;  // years
  double lambda = 0.0;
  double price = 0.0;      // -V(s0)
  double reference = 0.0;  // |notional| times the Heston call price
  double realized = 0.0;   // -U of the policy's realized PnL
  double realized_se = 0.0;
};

/// Indifference prices of the short call. Maturities beyond the path horizon
/// get no realized column (NaN).
inline std::vector<PriceCell> price_surface(const agent::ActorCritic& m, const heston::PathSet& paths,
                                            const std::vector<double>& strikes,
                                            const std::vector<std::size_t>& maturities,
                                            const std::vector<double>& lambdas) {
  std::vector<PriceCell> out;
  const auto policy = agent::as_policy(m);
  for (std::size_t steps : maturities) {
    require(steps > 0, "price_surface: maturities must be positive");
    const bool realize = steps <= paths.n_steps;
    heston::PathSet sub;
    if (realize) sub = first_steps(paths, steps);
    const auto env = with_steps(m.env, steps);
    for (double k : strikes) {
      const double ref =
          std::abs(m.env.notional) * heston::call_price_cf(m.env.heston, k, static_cast<double>(steps) * m.env.dt);
      for (double l : lambdas) {
        PriceCell c;
        c.strike = k;
        c.maturity_steps = steps;
        c.maturity = static_cast<double>(steps) * m.env.dt;
        c.lambda = l;
        c.price = -initial_value(m, k, l, steps);
        c.reference = ref;
        c.realized = c.realized_se = std::numeric_limits<double>::quiet_NaN();
        if (realize) {
          const auto u = utility(run_policy(env, sub, policy, k, l).pnl, l);
          c.realized = -u.value;
          c.realized_se = u.std_error;
        }
        out.push_back(c);
      }
    }
  }
  return out;
}

struct HedgeCell {
  double strike = 0.0;
  double lambda = 0.0;
  double hedge = 0.0;        // initial trade of the policy
  double delta_hedge = 0.0;  // initial trade of the delta hedge
};

inline std::vector<HedgeCell> hedge_surface(const agent::ActorCritic& m, const std::vector<double>& strikes,
                                            const std::vector<double>& lambdas) {
  std::vector<HedgeCell> out;
  for (double k : strikes) {
    for (double l : lambdas) {
      const auto raw = initial_observation(m.env, k, l, m.env.n_steps);
      out.push_back({k, l, agent::actions(m, raw)[0], baselines::delta_hedge_policy(raw)[0]});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dynamic risk aversion

/// Piecewise-constant schedule: lambda = values[j] from steps[j] on.
struct Schedule {
  std::string name;
  std::vector<std::size_t> steps;
  std::vector<double> values;

  double at(std::size_t t) const {
    double l = values.front();
    for (std::size_t j = 0; j < steps.size(); ++j) {
      if (t >= steps[j]) l = values[j];
    }
    return l;
  }
};

inline std::vector<Schedule> paper_schedules() {
  return {{"pi1", {0}, {0.005}}, {"pi2", {0, 5, 20}, {0.005, 0.1, 1.0}}, {"pi3", {0, 15}, {0.01, 1e-4}}};
}

struct ScheduleStep {
  std::size_t t = 0;
  double lambda = 0.0;
  double hedge_q25 = 0.0, hedge_median = 0.0, hedge_q75 = 0.0;  // position after the trade at t
  double trade_median_abs = 0.0;
  double delta_hedge_median = 0.0;  // delta hedge position on the same paths
};

inline std::vector<ScheduleStep> run_schedule(const agent::ActorCritic& m, const heston::PathSet& paths,
                                              const Schedule& schedule, double strike) {
  const auto r = run_policy(m.env, paths, agent::as_policy(m), strike,
                            [&](std::size_t t) { return schedule.at(t); });
  const auto d = run_policy(m.env, paths, baselines::delta_hedge_policy, strike, schedule.at(0));
  std::vector<ScheduleStep> out;
  std::vector<double> h(r.n_paths), dh(r.n_paths), a(r.n_paths);
  for (std::size_t t = 0; t < r.n_steps; ++t) {
    for (std::size_t i = 0; i < r.n_paths; ++i) {
      h[i] = r.hedge(i, t + 1);
      dh[i] = d.hedge(i, t + 1);
      a[i] = std::abs(r.action(i, t));
    }
    out.push_back({t, schedule.at(t), quantile(h, 0.25), quantile(h, 0.5), quantile(h, 0.75),
                   quantile(a, 0.5), quantile(dh, 0.5)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// PnL distributions

struct PnlSummary {
  double lambda = 0.0;
  double mean = 0.0;
  double std = 0.0;
  double q05 = 0.0;
  UtilityEstimate utility;
  double price = 0.0;  // -V(s0) at this lambda
  std::vector<double> samples;
};

inline std::vector<PnlSummary> pnl_distribution(const agent::ActorCritic& m, const heston::PathSet& paths,
                                                double strike, const std::vector<double>& lambdas) {
  std::vector<PnlSummary> out;
  for (double l : lambdas) {
    PnlSummary s;
    s.lambda = l;
    s.samples = run_policy(m.env, paths, agent::as_policy(m), strike, l).pnl;
    s.mean = mean(s.samples);
    s.std = stddev(s.samples);
    s.q05 = quantile(s.samples, 0.05);
    s.utility = utility(s.samples, l);
    s.price = -initial_value(m, strike, l, m.env.n_steps);
    out.push_back(std::move(s));
  }
  return out;
}

struct HistogramBin {
  double lo = 0.0, hi = 0.0;
  std::vector<std::size_t> counts;  // one per distribution
};

/// Common-edge histogram of several distributions.
inline std::vector<HistogramBin> histogram(const std::vector<PnlSummary>& dists, std::size_t bins) {
  require(bins > 0 && !dists.empty(), "histogram: need bins and data");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& d : dists) {
    for (double x : d.samples) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const double w = (hi - lo) / static_cast<double>(bins);
  std::vector<HistogramBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lo = lo + w * static_cast<double>(b);
    out[b].hi = b + 1 == bins ? hi : lo + w * static_cast<double>(b + 1);
    out[b].counts.assign(dists.size(), 0);
  }
  for (std::size_t j = 0; j < dists.size(); ++j) {
    for (double x : dists[j].samples) {
      const auto b = std::min(static_cast<std::size_t>((x - lo) / w), bins - 1);
      ++out[b].counts[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policy comparison

struct Table1Row {
  double strike = 0.0;
  UtilityEstimate delta_hedge;
  UtilityEstimate vanilla;  // n == 0 when no vanilla policy was supplied
  UtilityEstimate actor_critic;
};

inline std::vector<Table1Row> table1(const agent::ActorCritic& m,
                                     const std::map<double, const agent::ActorCritic*>& vanilla,
                                     const heston::PathSet& paths, const std::vector<double>& strikes,
                                     double lambda) {
  std::vector<Table1Row> out;
  for (double k : strikes) {
    Table1Row row;
    row.strike = k;
    row.delta_hedge = utility(run_policy(m.env, paths, baselines::delta_hedge_policy, k, lambda).pnl, lambda);
    row.actor_critic = utility(run_policy(m.env, paths, agent::as_policy(m), k, lambda).pnl, lambda);
    if (auto it = vanilla.find(k); it != vanilla.end() && it->second) {
      row.vanilla = utility(run_policy(m.env, paths, agent::as_policy(*it->second), k, lambda).pnl, lambda);
    }
    out.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

struct Meta {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string version;
};

inline std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Leading comment lines carried by every CSV artifact.
inline void write_meta(std::ostream& os, const Meta& meta) {
  os << "# config_hash=" << hex(meta.config_hash) << "\n# seed=" << meta.seed
     << "\n# version=" << meta.version << '\n';
}

inline void write_csv(std::ostream& os, const std::vector<CriticCheck>& rows) {
  os << "strike,lambda,value,utility,std_error\n";
  for (const auto& r : rows) {
    os << r.strike << ',' << r.lambda << ',' << r.value << ',' << r.utility << ',' << r.std_error << '\n';
  }
}

inline void write_csv(std::ostream& os, const std::vector<PriceCell>& rows) {
  os << "strike,maturity_steps,maturity,lambda,value,reference,realized,realized_se\n";
  for (const auto& r : rows) {
    os << r.strike << ',' << r.maturity_steps << ',' << r.maturity << ',' << r.lambda << ',' << r.price
       << ',' << r.reference << ',' << r.realized << ',' << r.realized_se << '\n';
  }
}

inline void write_csv(std::ostream& os, const std::vector<HedgeCell>& rows) {
  os << "strike,lambda,value,delta_hedge\n";
  for (const auto& r : rows) os << r.strike << ',' << r.lambda << ',' << r.hedge << ',' << r.delta_hedge << '\n';
}

inline void write_csv(std::ostream& os, const std::string& name, const std::vector<ScheduleStep>& rows,
                      bool header = true) {
  if (header) os << "schedule,t,lambda,hedge_q25,hedge_median,hedge_q75,trade_median_abs,delta_hedge_median\n";
  for (const auto& r : rows) {
    os << name << ',' << r.t << ',' << r.lambda << ',' << r.hedge_q25 << ',' << r.hedge_median << ','
       << r.hedge_q75 << ',' << r.trade_median_abs << ',' << r.delta_hedge_median << '\n';
  }
}

inline void write_csv(std::ostream& os, const std::vector<PnlSummary>& rows) {
  os << "lambda,mean,std,q05,utility,utility_se,price\n";
  for (const auto& r : rows) {
    os << r.lambda << ',' << r.mean << ',' << r.std << ',' << r.q05 << ',' << r.utility.value << ','
       << r.utility.std_error << ',' << r.price << '\n';
  }
}

inline void write_csv(std::ostream& os, const std::vector<HistogramBin>& bins,
                      const std::vector<PnlSummary>& dists) {
  os << "lo,hi";
  for (const auto& d : dists) os << ",count_lambda_" << d.lambda;
  os << '\n';
  for (const auto& b : bins) {
    os << b.lo << ',' << b.hi;
    for (auto c : b.counts) os << ',' << c;
    os << '\n';
  }
}

inline void write_csv(std::ostream& os, const std::vector<Table1Row>& rows) {
  os << "strike,delta_hedge,delta_hedge_se,vanilla,vanilla_se,actor_critic,actor_critic_se\n";
  for (const auto& r : rows) {
    os << r.strike << ',' << r.delta_hedge.value << ',' << r.delta_hedge.std_error << ',';
    if (r.vanilla.n) os << r.vanilla.value << ',' << r.vanilla.std_error;
    else os << ',';
    os << ',' << r.actor_critic.value << ',' << r.actor_critic.std_error << '\n';
  }
}

}  // namespace dhac::eval
