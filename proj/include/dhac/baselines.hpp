#pragma once
// Reference policies: the Black-Scholes delta hedge and vanilla deep hedging,
// i.e. episodic policy search for one contract at one risk level.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

#include "dhac/agent.hpp"
#include "dhac/error.hpp"
#include "dhac/mdp.hpp"
#include "dhac/nn.hpp"
#include "dhac/rng.hpp"
#include "dhac/utility.hpp"

namespace dhac::baselines {

/// Trade that makes the book delta-neutral.
inline Eigen::VectorXd delta_hedge_policy(const nn::Batch& raw) { return -raw.col(mdp::kDelta); }

struct VanillaConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 1000;
  double lr = 1e-3;
  std::uint64_t seed = 7;
  double clip = 0.0;

  void validate() const {
    require(epochs > 0, "vanilla: epochs must be positive");
    require(batch_size > 1, "vanilla: batch_size must exceed one");
    require(lr > 0.0, "vanilla: lr must be positive");
    require(clip >= 0.0, "vanilla: clip must be non-negative");
  }
};

struct VanillaBatch {
  double utility = 0.0;
  nn::Gradients grad;  // gradient of -utility
};

/// Utility of terminal PnL on one minibatch and its exact gradient with
/// respect to the actor parameters. The hedge position feeds back into the
/// next observation, so the gradient runs backward through the whole episode.
inline VanillaBatch vanilla_batch_gradient(const agent::ActorCritic& m, const heston::PathSet& paths,
                                           const std::vector<std::size_t>& idx, double strike,
                                           double lambda) {
  const auto& env = m.env;
  const std::size_t T = env.n_steps;
  const auto N = static_cast<Eigen::Index>(idx.size());
  const std::vector<double> strikes(idx.size(), strike), lams(idx.size(), lambda);

  std::vector<nn::ForwardCache> caches(T);
  std::vector<nn::Batch> slopes(T);
  std::vector<Eigen::VectorXd> spot(T + 1, Eigen::VectorXd(N)), act(T);
  for (std::size_t t = 0; t <= T; ++t) {
    for (Eigen::Index i = 0; i < N; ++i) spot[t][i] = paths.spot(idx[static_cast<std::size_t>(i)], t);
  }
  Eigen::VectorXd h = Eigen::VectorXd::Zero(N), pnl = Eigen::VectorXd::Zero(N);
  for (std::size_t t = 0; t < T; ++t) {
    const nn::Batch raw = mdp::with_hedge(mdp::option_observations(paths, idx, strikes, lams, t, env), h);
    const nn::Batch x = m.normalizer.apply(raw, &slopes[t]);
    act[t] = -raw.col(mdp::kDelta) + nn::forward(m.actor, x, &caches[t]).col(0);
    pnl -= act[t].cwiseProduct(spot[t]) + env.cost_rate * act[t].cwiseAbs().cwiseProduct(spot[t]);
    h += act[t];
  }
  for (Eigen::Index i = 0; i < N; ++i) {
    pnl[i] += env.notional * std::max(spot[T][i] - strike, 0.0) + h[i] * spot[T][i] -
              env.cost_rate * std::abs(h[i]) * spot[T][i];
  }
  const std::vector<double> pv(pnl.data(), pnl.data() + N);
  VanillaBatch out;
  out.utility = utility(pv, lambda).value;

  // d(-U)/dPnL_i = -w_i / sum(w), w_i = exp(-lambda PnL_i) up to a common shift.
  const double shift = (-lambda * pnl).maxCoeff();
  Eigen::VectorXd g = (-lambda * pnl).array() - shift;
  g = g.array().exp();
  g = -g / g.sum();

  auto sgn = [](double a) { return agent::detail::smooth_sign(a); };
  out.grad = nn::zeros_like(m.actor);
  // Adjoint of the hedge position, pre-multiplied by g.
  Eigen::VectorXd hbar = g.cwiseProduct(spot[T] - env.cost_rate * h.unaryExpr(sgn).cwiseProduct(spot[T]));
  for (std::size_t t = T; t-- > 0;) {
    const Eigen::VectorXd abar =
        g.cwiseProduct(-spot[t] - env.cost_rate * act[t].unaryExpr(sgn).cwiseProduct(spot[t])) + hbar;
    const auto bw = nn::backward(m.actor, caches[t], abar);
    for (std::size_t l = 0; l < out.grad.n_layers(); ++l) {
      out.grad.weights[l] += bw.params.weights[l];
      out.grad.biases[l] += bw.params.biases[l];
    }
    // a_t = -delta_option - h_t + net(x(h_t)); x moves by (S_t, 1) in (book value, delta).
    const Eigen::VectorXd through_net =
        bw.input.col(mdp::kBookValue).cwiseProduct(slopes[t].col(mdp::kBookValue)).cwiseProduct(spot[t]) +
        bw.input.col(mdp::kDelta).cwiseProduct(slopes[t].col(mdp::kDelta));
    hbar += through_net - abar;
  }
  return out;
}

struct VanillaResult {
  double initial_utility = 0.0;  // first epoch, first minibatch
  double final_utility = 0.0;    // mean over the last epoch's minibatches
};

/// Trains `m.actor` for one strike and risk level. `m` becomes a "vanilla"
/// model; its critic is left untouched.
inline VanillaResult train_vanilla(agent::ActorCritic& m, const heston::PathSet& paths, double strike,
                                   double lambda, const VanillaConfig& cfg,
                                   std::ostream* metrics = nullptr) {
  cfg.validate();
  require(strike > 0.0, "vanilla: strike must be positive");
  require(lambda > 0.0, "vanilla: lambda must be positive");
  require(paths.n_steps == m.env.n_steps, "vanilla: path set and environment disagree on steps");
  require(paths.n_paths >= cfg.batch_size, "vanilla: fewer paths than one batch");
  m.kind = "vanilla";
  m.fixed_strike = strike;
  m.fixed_lambda = lambda;
  m.actor_opt = nn::make_adam(m.actor, cfg.lr);

  std::vector<std::size_t> order(paths.n_paths);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t per_epoch = paths.n_paths / cfg.batch_size;
  VanillaResult res;
  std::size_t bad = 0;
  if (metrics) *metrics << "epoch,utility\n";
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::mt19937_64 eng(substream_seed(cfg.seed, e));
    std::shuffle(order.begin(), order.end(), eng);
    double sum_u = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch_size),
                                         order.begin() + static_cast<std::ptrdiff_t>((b + 1) * cfg.batch_size));
      auto vb = vanilla_batch_gradient(m, paths, idx, strike, lambda);
      if (e == 0 && b == 0) res.initial_utility = vb.utility;
      const double norm = nn::grad_norm(vb.grad);
      if (!std::isfinite(vb.utility) || !std::isfinite(norm)) {
        if (++bad >= m.config.divergence_patience) {
          throw DivergenceError("vanilla: non-finite objective in epoch " + std::to_string(e));
        }
        continue;
      }
      bad = 0;
      if (cfg.clip > 0.0) nn::clip_grad_norm(vb.grad, cfg.clip);
      nn::adam_step(m.actor, vb.grad, m.actor_opt);
      sum_u += vb.utility;
    }
    res.final_utility = sum_u / static_cast<double>(per_epoch);
    if (metrics) *metrics << e + 1 << ',' << res.final_utility << '\n';
  }
  m.episodes_done += cfg.epochs;
  return res;
}

}  // namespace dhac::baselines
