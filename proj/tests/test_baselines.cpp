#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

#include "dhac/baselines.hpp"
#include "dhac/eval.hpp"

using namespace dhac;
using Catch::Approx;

namespace {

mdp::EnvConfig small_env() {
  mdp::EnvConfig env;
  env.heston.v0 = 0.008;
  return env;
}

agent::AgentConfig small_config() {
  agent::AgentConfig c;
  c.batch_size = 16;
  c.hidden = {8, 8};
  return c;
}

double se_of_mean(const std::vector<double>& x) {
  return eval::stddev(x) / std::sqrt(static_cast<double>(x.size()));
}

}  // namespace

TEST_CASE("delta hedge of a delta-neutral book is no trade") {
  nn::Batch raw = nn::Batch::Zero(3, mdp::kNumFeatures);
  raw(0, mdp::kBookValue) = 5.0;
  raw(1, mdp::kGamma) = -2.0;
  const auto a = baselines::delta_hedge_policy(raw);
  CHECK(a == Eigen::VectorXd::Zero(3));
}

TEST_CASE("delta hedge of a short at-the-money call") {
  mdp::EnvConfig env;
  const double tau = 30.0 / 365.0;
  const auto book = mdp::option_lmr(1.0, -100.0, tau, 1.0, 0.04, env.vol_floor);
  const auto o = mdp::observe(book, 1.0, tau, 1.0, 0.04, 0.1, env);
  nn::Batch raw(1, mdp::kNumFeatures);
  for (int j = 0; j < mdp::kNumFeatures; ++j) raw(0, j) = o[j];
  const auto a = baselines::delta_hedge_policy(raw);
  CHECK(a[0] == Approx(51.144).margin(0.01));
  const auto after = mdp::with_hedge(raw, a);
  CHECK(after(0, mdp::kDelta) == 0.0);
}

TEST_CASE("vanilla gradient matches finite differences of the utility") {
  const auto env = small_env();
  const auto paths = heston::simulate(env.heston, 64, env.n_steps, env.dt, 21);
  const auto stats = mdp::fit_normalization(paths, env, 1);
  auto m = agent::make_model(env, small_config(), stats.normalizer);
  std::mt19937_64 eng(3);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (std::size_t l = 0; l < m.actor.n_layers(); ++l) {
    for (Eigen::Index k = 0; k < m.actor.weights[l].size(); ++k) m.actor.weights[l].data()[k] = u(eng);
    for (Eigen::Index k = 0; k < m.actor.biases[l].size(); ++k) m.actor.biases[l][k] = u(eng);
  }
  std::vector<std::size_t> idx(24);
  std::iota(idx.begin(), idx.end(), 10);
  const double strike = 1.025, lambda = 0.3;
  const auto vb = baselines::vanilla_batch_gradient(m, paths, idx, strike, lambda);

  auto objective = [&](const agent::ActorCritic& mm) {
    return -baselines::vanilla_batch_gradient(mm, paths, idx, strike, lambda).utility;
  };
  std::vector<std::pair<double, double>> pairs;
  const double h = 1e-4;
  for (std::size_t l = 0; l < m.actor.n_layers(); ++l) {
    for (Eigen::Index k = 0; k < m.actor.weights[l].size(); k += 5) {
      auto mm = m;
      mm.actor.weights[l].data()[k] += h;
      const double up = objective(mm);
      mm.actor.weights[l].data()[k] -= 2 * h;
      pairs.emplace_back(vb.grad.weights[l].data()[k], (up - objective(mm)) / (2 * h));
    }
    for (Eigen::Index k = 0; k < m.actor.biases[l].size(); ++k) {
      auto mm = m;
      mm.actor.biases[l][k] += h;
      const double up = objective(mm);
      mm.actor.biases[l][k] -= 2 * h;
      pairs.emplace_back(vb.grad.biases[l][k], (up - objective(mm)) / (2 * h));
    }
  }
  double scale = 0.0, worst = 0.0;
  for (const auto& [a, f] : pairs) scale = std::max(scale, std::abs(a));
  REQUIRE(scale > 0.0);
  for (const auto& [a, f] : pairs) {
    worst = std::max(worst, std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-4 * scale}));
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("vanilla training starts at the delta hedge and does not get worse") {
  const auto env = small_env();
  const auto paths = heston::simulate(env.heston, 1024, env.n_steps, env.dt, 22);
  const auto stats = mdp::fit_normalization(paths, env, 1);
  auto m = agent::make_model(env, small_config(), stats.normalizer);
  const double strike = 1.0, lambda = 0.1;

  std::vector<std::size_t> first(128);
  std::iota(first.begin(), first.end(), 0);
  const auto at_start = baselines::vanilla_batch_gradient(m, paths, first, strike, lambda);
  const auto delta_first = eval::run_policy(env, eval::first_steps(paths, env.n_steps), baselines::delta_hedge_policy,
                                            strike, lambda);
  std::vector<double> pnl_first(delta_first.pnl.begin(), delta_first.pnl.begin() + 128);
  CHECK(at_start.utility == Approx(utility(pnl_first, lambda).value).epsilon(1e-12));

  baselines::VanillaConfig vc;
  vc.epochs = 5;
  vc.batch_size = 128;
  const auto res = baselines::train_vanilla(m, paths, strike, lambda, vc);
  CHECK(m.kind == "vanilla");
  CHECK(m.fixed_strike == strike);
  CHECK(std::isfinite(res.final_utility));
  const double u_delta = utility(delta_first.pnl, lambda).value;
  const double u_trained = utility(eval::run_policy(env, paths, agent::as_policy(m), strike, lambda).pnl, lambda).value;
  CHECK(u_trained >= u_delta - 0.05);
}

TEST_CASE("without costs every policy earns minus the option price on average") {
  auto env = small_env();
  env.cost_rate = 0.0;
  const auto paths = heston::simulate(env.heston, 20000, env.n_steps, env.dt, 77);
  const double strike = 1.0;
  const double target = env.notional * heston::call_price_cf(env.heston, strike, env.maturity());

  const auto hedged = eval::run_policy(env, paths, baselines::delta_hedge_policy, strike, 1e-6);
  CHECK(std::abs(eval::mean(hedged.pnl) - target) <= 3 * se_of_mean(hedged.pnl));

  const auto naked = eval::run_policy(
      env, paths, [](const nn::Batch& o) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(o.rows()); }, strike,
      1e-6);
  CHECK(std::abs(eval::mean(naked.pnl) - target) <= 3 * se_of_mean(naked.pnl));

  // A short risk-neutral vanilla run must keep the no-arbitrage mean.
  const auto train = heston::simulate(env.heston, 1024, env.n_steps, env.dt, 78);
  const auto stats = mdp::fit_normalization(train, env, 1);
  auto m = agent::make_model(env, small_config(), stats.normalizer);
  baselines::VanillaConfig vc;
  vc.epochs = 3;
  vc.batch_size = 256;
  baselines::train_vanilla(m, train, strike, 1e-6, vc);
  const auto trained = eval::run_policy(env, paths, agent::as_policy(m), strike, 1e-6);
  CHECK(std::abs(eval::mean(trained.pnl) - target) <= 3 * se_of_mean(trained.pnl));
}

TEST_CASE("vanilla config validation") {
  baselines::VanillaConfig vc;
  vc.batch_size = 1;
  CHECK_THROWS_AS(vc.validate(), ValidationError);
}
