#pragma once
// Multi-risk-aversion actor-critic trained against the exponential-utility
// Bellman equation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dhac/error.hpp"
#include "dhac/heston.hpp"
#include "dhac/mdp.hpp"
#include "dhac/nn.hpp"
#include "dhac/rng.hpp"
#include "dhac/utility.hpp"

namespace dhac::agent {

enum class CriticScaling { kNone, kInverseLambda };

struct AgentConfig {
  double lambda_min = 1e-4;
  double lambda_max = 1.0;
  double actor_lr = 1e-3;
  double critic_lr = 1e-4;
  std::size_t batch_size = 256;
  std::size_t n_episodes = 5000;
  double tau = 0.001;
  std::uint64_t seed = 1;
  double clip = 0.0;  // gradient-norm bound, 0 disables
  std::vector<int> hidden{64, 64, 64};
  // kInverseLambda divides the critic's per-sample gradient by lambda so that
  // every risk level moves the critic at the squared-error rate.
  CriticScaling critic_scaling = CriticScaling::kInverseLambda;
  // Subtract the detached critic value of s_t inside the actor exponent.
  bool actor_baseline = true;
  double exp_clamp = 30.0;
  std::size_t metrics_every = 50;
  std::size_t divergence_patience = 5;

  void validate() const {
    require(lambda_min > 0.0 && lambda_min <= lambda_max, "agent: need 0 < lambda_min <= lambda_max");
    require(actor_lr > 0.0 && critic_lr > 0.0, "agent: learning rates must be positive");
    require(batch_size > 0, "agent: batch_size must be positive");
    require(tau > 0.0 && tau <= 1.0, "agent: tau must lie in (0, 1]");
    require(clip >= 0.0, "agent: clip must be non-negative");
    require(!hidden.empty(), "agent: need at least one hidden layer");
    for (int h : hidden) require(h > 0, "agent: hidden widths must be positive");
    require(exp_clamp > 0.0, "agent: exp_clamp must be positive");
    require(divergence_patience > 0, "agent: divergence_patience must be positive");
  }
};

/// log10(lambda) uniform on [log10(lambda_min), log10(lambda_max)].
inline std::vector<double> sample_lambdas(std::size_t n, const AgentConfig& cfg,
                                          std::mt19937_64& eng) {
  cfg.validate();
  std::vector<double> out(n, cfg.lambda_min);
  if (cfg.lambda_min == cfg.lambda_max) return out;
  std::uniform_real_distribution<double> u(std::log10(cfg.lambda_min), std::log10(cfg.lambda_max));
  for (auto& l : out) l = std::clamp(std::pow(10.0, u(eng)), cfg.lambda_min, cfg.lambda_max);
  return out;
}

inline double critic_target(double reward, double next_value, bool terminal) {
  return terminal ? reward : reward + next_value;
}

struct LossResult {
  double loss = 0.0;
  Eigen::VectorXd grad;  // per-sample derivative of the summand (not divided by n)
  std::size_t clamped = 0;
};

namespace detail {
inline double clamped_exp(double x, double limit, std::size_t& clamped) {
  if (x > limit) {
    ++clamped;
    x = limit;
  }
  return std::exp(x);
}

inline void check_lengths(Eigen::Index a, Eigen::Index b, Eigen::Index c, const char* who) {
  require(a == b && b == c && a > 0, std::string(who) + ": inputs must be non-empty and equal length");
}
}  // namespace detail

/// mean[(1/lambda) exp(-lambda (y - V)) - V]; grad is d(summand)/dV = exp(-lambda (y - V)) - 1.
inline LossResult critic_loss(const Eigen::VectorXd& values, const Eigen::VectorXd& targets,
                              const Eigen::VectorXd& lambdas, double exp_clamp = 30.0) {
  detail::check_lengths(values.size(), targets.size(), lambdas.size(), "critic_loss");
  LossResult r;
  r.grad.resize(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double l = lambdas[i];
    require(l > 0.0, "critic_loss: lambda must be positive");
    const double z = -l * (targets[i] - values[i]);
    // expm1 keeps the small-lambda gradient accurate.
    const double e = z > exp_clamp ? detail::clamped_exp(z, exp_clamp, r.clamped) : std::exp(z);
    r.grad[i] = z > exp_clamp ? e - 1.0 : std::expm1(z);
    r.loss += e / l - values[i];
  }
  r.loss /= static_cast<double>(values.size());
  return r;
}

/// mean[(1/lambda) exp(-lambda (X - b))] with X = r + V(s'); grad is d(summand)/dX.
/// The baseline b defaults to zero.
inline LossResult actor_loss(const Eigen::VectorXd& rewards, const Eigen::VectorXd& next_values,
                             const Eigen::VectorXd& lambdas, const Eigen::VectorXd& baseline = {},
                             double exp_clamp = 30.0) {
  detail::check_lengths(rewards.size(), next_values.size(), lambdas.size(), "actor_loss");
  require(baseline.size() == 0 || baseline.size() == rewards.size(), "actor_loss: baseline length");
  LossResult r;
  r.grad.resize(rewards.size());
  for (Eigen::Index i = 0; i < rewards.size(); ++i) {
    const double l = lambdas[i];
    require(l > 0.0, "actor_loss: lambda must be positive");
    const double b = baseline.size() ? baseline[i] : 0.0;
    const double e = detail::clamped_exp(-l * (rewards[i] + next_values[i] - b), exp_clamp, r.clamped);
    r.loss += e / l;
    r.grad[i] = -e;
  }
  r.loss /= static_cast<double>(rewards.size());
  return r;
}

// ---------------------------------------------------------------------------
// Model

struct ActorCritic {
  std::string kind = "actor_critic";  // or "vanilla"
  mdp::EnvConfig env;
  AgentConfig config;
  mdp::Normalizer normalizer;
  nn::Mlp actor;
  nn::Mlp critic;
  nn::Mlp target;
  nn::AdamState actor_opt;
  nn::AdamState critic_opt;
  std::size_t episodes_done = 0;
  std::uint64_t config_hash = 0;
  // Vanilla policies are trained for one contract and risk level.
  double fixed_strike = 0.0;
  double fixed_lambda = 0.0;
};

inline std::vector<int> layer_sizes(const AgentConfig& cfg) {
  std::vector<int> s{mdp::kNumFeatures};
  s.insert(s.end(), cfg.hidden.begin(), cfg.hidden.end());
  s.push_back(1);
  return s;
}

/// Fresh model whose zero output layers make the actor the delta hedge and the
/// critic the book value.
inline ActorCritic make_model(const mdp::EnvConfig& env, const AgentConfig& cfg,
                              const mdp::Normalizer& normalizer) {
  env.validate();
  cfg.validate();
  ActorCritic m;
  m.env = env;
  m.config = cfg;
  m.normalizer = normalizer;
  const auto sizes = layer_sizes(cfg);
  m.actor = nn::make_mlp(sizes, substream_seed(cfg.seed, 0xA));
  m.critic = nn::make_mlp(sizes, substream_seed(cfg.seed, 0xC));
  m.target = m.critic;
  m.actor_opt = nn::make_adam(m.actor, cfg.actor_lr);
  m.critic_opt = nn::make_adam(m.critic, cfg.critic_lr);
  return m;
}

/// Trades for a batch of raw observations: -delta + network adjustment.
inline Eigen::VectorXd actions(const ActorCritic& m, const nn::Batch& raw) {
  return -raw.col(mdp::kDelta) + nn::forward(m.actor, m.normalizer.apply(raw)).col(0);
}

/// Value of a batch of raw observations under `net`: book value + network.
inline Eigen::VectorXd values(const ActorCritic& m, const nn::Mlp& net, const nn::Batch& raw) {
  return raw.col(mdp::kBookValue) + nn::forward(net, m.normalizer.apply(raw)).col(0);
}

inline mdp::Policy as_policy(const ActorCritic& m) {
  return [&m](const nn::Batch& raw) -> Eigen::VectorXd { return actions(m, raw); };
}

// ---------------------------------------------------------------------------
// Training

inline constexpr int kLambdaBuckets = 10;

struct EpisodeStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double actor_grad_norm = 0.0;
  double critic_grad_norm = 0.0;
  std::size_t clamped = 0;
  std::size_t clipped = 0;
  std::vector<double> pnl;
  std::vector<double> lambdas;
};

inline void write_metrics_header(std::ostream& os) {
  os << "episode,steps,actor_loss,critic_loss,actor_grad_norm,critic_grad_norm,clamped,clipped";
  for (int b = 0; b < kLambdaBuckets; ++b) os << ",u_bucket" << b;
  os << '\n';
}

/// Utility of realized episode PnL per decile of the log-lambda range,
/// evaluated at each bucket's geometric centre. Empty buckets give NaN.
inline std::vector<double> bucket_utilities(const std::vector<double>& pnl,
                                            const std::vector<double>& lambdas,
                                            const AgentConfig& cfg) {
  const double lo = std::log10(cfg.lambda_min), hi = std::log10(cfg.lambda_max);
  std::vector<std::vector<double>> buckets(kLambdaBuckets);
  for (std::size_t i = 0; i < pnl.size(); ++i) {
    int b = hi > lo ? static_cast<int>((std::log10(lambdas[i]) - lo) / (hi - lo) * kLambdaBuckets) : 0;
    buckets[static_cast<std::size_t>(std::clamp(b, 0, kLambdaBuckets - 1))].push_back(pnl[i]);
  }
  std::vector<double> out(kLambdaBuckets, std::numeric_limits<double>::quiet_NaN());
  for (int b = 0; b < kLambdaBuckets; ++b) {
    if (buckets[b].empty()) continue;
    const double centre = std::pow(10.0, lo + (hi - lo) * (b + 0.5) / kLambdaBuckets);
    out[b] = utility(buckets[b], centre).value;
  }
  return out;
}

namespace detail {

inline double smooth_sign(double a) { return a / std::sqrt(a * a + 1e-12); }

inline bool apply_update(nn::Mlp& net, nn::Gradients& g, nn::AdamState& opt, double clip,
                         double& norm, std::size_t& clipped) {
  norm = nn::grad_norm(g);
  if (!std::isfinite(norm)) return false;
  if (clip > 0.0 && nn::clip_grad_norm(g, clip)) ++clipped;
  nn::adam_step(net, g, opt);
  return true;
}

}  // namespace detail

/// Lockstep batch at one step: the state before trading and what the market
/// does next.
struct StepInputs {
  nn::Batch raw;               // observations at t including the current hedge
  nn::Batch next_option_obs;   // option-only observations at t+1; empty when terminal
  Eigen::VectorXd hedge;       // position before the trade
  Eigen::VectorXd spot;        // S_t
  Eigen::VectorXd next_spot;   // S_{t+1}
  Eigen::VectorXd strikes;
  Eigen::VectorXd lambdas;
  bool terminal = false;
};

/// Cashflow of the trade and everything that only depends on the trade.
struct StepOutcome {
  Eigen::VectorXd actions;
  Eigen::VectorXd reward;      // trade cashflow, plus settlement when terminal
  nn::Batch next_raw;          // observations at t+1 (non-terminal only)
  nn::Batch next_x;            // normalized next_raw
  nn::Batch next_slope;        // d(next_x)/d(next_raw)
  nn::ForwardCache actor_cache;
};

inline StepOutcome step_outcome(const ActorCritic& m, const StepInputs& in) {
  const auto& env = m.env;
  StepOutcome o;
  o.actions = -in.raw.col(mdp::kDelta) +
              nn::forward(m.actor, m.normalizer.apply(in.raw), &o.actor_cache).col(0);
  o.reward = -o.actions.cwiseProduct(in.spot) - env.cost_rate * o.actions.cwiseAbs().cwiseProduct(in.spot);
  const Eigen::VectorXd hn = in.hedge + o.actions;
  if (in.terminal) {
    for (Eigen::Index i = 0; i < hn.size(); ++i) {
      const double s = in.next_spot[i];
      o.reward[i] += env.notional * std::max(s - in.strikes[i], 0.0) + hn[i] * s - env.cost_rate * std::abs(hn[i]) * s;
    }
  } else {
    o.next_raw = mdp::with_hedge(in.next_option_obs, hn);
    o.next_x = m.normalizer.apply(o.next_raw, &o.next_slope);
  }
  return o;
}

struct ActorGradient {
  LossResult loss;
  nn::Gradients grad;
};

/// Gradient of mean[(1/lambda) exp(-lambda (r(a) + V(s'(a)) - b))] with
/// respect to the actor parameters, holding the critic fixed. `baseline` is
/// b per sample (empty for none).
inline ActorGradient actor_gradient(const ActorCritic& m, const StepInputs& in, const StepOutcome& o,
                                    const Eigen::VectorXd& baseline) {
  const auto& env = m.env;
  const auto N = o.actions.size();
  auto sgn = [](double a) { return detail::smooth_sign(a); };
  Eigen::VectorXd dx = -in.spot - env.cost_rate * o.actions.unaryExpr(sgn).cwiseProduct(in.spot);
  Eigen::VectorXd next_value(N);
  if (in.terminal) {
    const Eigen::VectorXd hn = in.hedge + o.actions;
    dx += in.next_spot - env.cost_rate * hn.unaryExpr(sgn).cwiseProduct(in.next_spot);
    next_value.setZero();
  } else {
    nn::ForwardCache cache;
    next_value = o.next_raw.col(mdp::kBookValue) + nn::forward(m.critic, o.next_x, &cache).col(0);
    const nn::Batch gin = nn::backward(m.critic, cache, nn::Batch::Ones(N, 1), false).input;
    // One more unit moves book value by S' and delta by one.
    dx += in.next_spot +
          gin.col(mdp::kBookValue).cwiseProduct(o.next_slope.col(mdp::kBookValue)).cwiseProduct(in.next_spot) +
          gin.col(mdp::kDelta).cwiseProduct(o.next_slope.col(mdp::kDelta));
  }
  ActorGradient g;
  g.loss = actor_loss(o.reward, next_value, in.lambdas, baseline, m.config.exp_clamp);
  const nn::Batch up = g.loss.grad.cwiseProduct(dx) / static_cast<double>(N);
  g.grad = nn::backward(m.actor, o.actor_cache, up).params;
  return g;
}

/// Runs one lockstep episode over `batch_size` trajectories drawn from
/// `paths`: at every step a critic update, an actor update against the
/// updated critic, then the soft target update.
inline EpisodeStats train_episode(ActorCritic& m, const heston::PathSet& paths,
                                  std::size_t& bad_steps) {
  const auto& env = m.env;
  const auto& cfg = m.config;
  const std::size_t T = env.n_steps;
  const std::size_t n = cfg.batch_size;
  const auto N = static_cast<Eigen::Index>(n);

  std::mt19937_64 eng(substream_seed(cfg.seed, 0x100000 + m.episodes_done));
  std::uniform_int_distribution<std::size_t> pick_path(0, paths.n_paths - 1);
  std::uniform_int_distribution<std::size_t> pick_strike(0, env.strikes.size() - 1);
  std::vector<std::size_t> idx(n);
  std::vector<double> strikes(n);
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = pick_path(eng);
    strikes[i] = env.strikes[pick_strike(eng)];
  }
  const auto lam_vec = sample_lambdas(n, cfg, eng);

  EpisodeStats st;
  st.lambdas = lam_vec;
  StepInputs in;
  in.lambdas = Eigen::Map<const Eigen::VectorXd>(lam_vec.data(), N);
  in.strikes = Eigen::Map<const Eigen::VectorXd>(strikes.data(), N);
  in.hedge = Eigen::VectorXd::Zero(N);
  in.spot.resize(N);
  in.next_spot.resize(N);
  Eigen::VectorXd pnl = Eigen::VectorXd::Zero(N);
  nn::Batch opt_obs = mdp::option_observations(paths, idx, strikes, lam_vec, 0, env);

  for (std::size_t t = 0; t < T; ++t) {
    in.terminal = t + 1 == T;
    for (std::size_t i = 0; i < n; ++i) {
      in.spot[static_cast<Eigen::Index>(i)] = paths.spot(idx[i], t);
      in.next_spot[static_cast<Eigen::Index>(i)] = paths.spot(idx[i], t + 1);
    }
    in.raw = mdp::with_hedge(opt_obs, in.hedge);
    in.next_option_obs = in.terminal ? nn::Batch() : mdp::option_observations(paths, idx, strikes, lam_vec, t + 1, env);
    const auto out = step_outcome(m, in);

    Eigen::VectorXd y = out.reward;
    if (!in.terminal) y += out.next_raw.col(mdp::kBookValue) + nn::forward(m.target, out.next_x).col(0);

    // Critic.
    const nn::Batch x = m.normalizer.apply(in.raw);
    nn::ForwardCache critic_cache;
    const Eigen::VectorXd v = in.raw.col(mdp::kBookValue) + nn::forward(m.critic, x, &critic_cache).col(0);
    const auto cl = critic_loss(v, y, in.lambdas, cfg.exp_clamp);
    nn::Batch up = cl.grad / static_cast<double>(n);
    if (cfg.critic_scaling == CriticScaling::kInverseLambda) up.col(0).array() /= in.lambdas.array();
    auto cg = nn::backward(m.critic, critic_cache, up).params;
    double cnorm = 0.0;
    bool ok = std::isfinite(cl.loss) && detail::apply_update(m.critic, cg, m.critic_opt, cfg.clip, cnorm, st.clipped);

    // Actor, against the updated critic.
    Eigen::VectorXd base;
    if (cfg.actor_baseline) base = in.raw.col(mdp::kBookValue) + nn::forward(m.critic, x).col(0);
    auto ag = actor_gradient(m, in, out, base);
    double anorm = 0.0;
    ok = ok && std::isfinite(ag.loss.loss) &&
         detail::apply_update(m.actor, ag.grad, m.actor_opt, cfg.clip, anorm, st.clipped);

    nn::soft_update(m.target, m.critic, cfg.tau);

    if (!ok || !out.actions.allFinite()) {
      if (++bad_steps >= cfg.divergence_patience) {
        throw DivergenceError("train: non-finite losses for " + std::to_string(bad_steps) +
                              " consecutive steps at episode " + std::to_string(m.episodes_done));
      }
    } else {
      bad_steps = 0;
    }
    st.actor_loss += ag.loss.loss / static_cast<double>(T);
    st.critic_loss += cl.loss / static_cast<double>(T);
    st.actor_grad_norm += anorm / static_cast<double>(T);
    st.critic_grad_norm += cnorm / static_cast<double>(T);
    st.clamped += cl.clamped + ag.loss.clamped;

    pnl += out.reward;
    in.hedge += out.actions;
    if (!in.terminal) opt_obs = std::move(in.next_option_obs);
  }
  st.pnl.assign(pnl.data(), pnl.data() + N);
  ++m.episodes_done;
  return st;
}

/// Trains `n_episodes` more episodes. Episode k always draws the same paths,
/// strikes and risk levels, so a resumed run continues the same sequence.
inline void train(ActorCritic& m, const heston::PathSet& paths, std::size_t n_episodes,
                  std::ostream* metrics = nullptr) {
  m.env.validate();
  m.config.validate();
  require(paths.n_steps == m.env.n_steps, "train: path set and environment disagree on steps");
  require(std::abs(paths.dt - m.env.dt) <= 1e-12 * m.env.dt, "train: path set and environment disagree on dt");
  require(paths.n_paths > 0, "train: empty path set");
  std::size_t bad_steps = 0;
  std::size_t steps = m.episodes_done * m.env.n_steps;
  const std::size_t end = m.episodes_done + n_episodes;
  while (m.episodes_done < end) {
    const auto st = train_episode(m, paths, bad_steps);
    steps += m.env.n_steps;
    const bool report = m.config.metrics_every > 0 &&
                        (m.episodes_done % m.config.metrics_every == 0 || m.episodes_done == end);
    if (metrics && report) {
      *metrics << m.episodes_done << ',' << steps << ',' << st.actor_loss << ',' << st.critic_loss
               << ',' << st.actor_grad_norm << ',' << st.critic_grad_norm << ',' << st.clamped << ','
               << st.clipped;
      for (double u : bucket_utilities(st.pnl, st.lambdas, m.config)) {
        *metrics << ',';
        if (std::isfinite(u)) *metrics << u;
      }
      *metrics << '\n' << std::flush;
    }
  }
}

}  // namespace dhac::agent
