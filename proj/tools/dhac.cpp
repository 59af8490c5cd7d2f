// dhac: simulate Heston paths, train the multi-risk-aversion actor-critic and
// evaluate it.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "dhac/pipeline.hpp"

using namespace dhac;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Options {
  std::string config_file;
  std::string profile_name;
  std::vector<std::string> overrides;
  std::size_t threads = 0;
  std::string checkpoint;
  std::string out_dir;

  // simulate
  std::size_t n_paths = 0;
  std::string role = "train";
  std::string out_file;
  // train
  std::size_t episodes = 0;
  bool fresh = false;
  // eval
  std::string which;
  // price / hedge
  double strike = 1.0;
  double lambda = 0.1;
  std::size_t maturity_steps = 0;
  double hedge_units = 0.0;
  double spot = std::nan("");
  double variance = std::nan("");
  std::size_t step = 0;
};

config::RunConfig resolve(const Options& o) {
  config::RunConfig c = o.config_file.empty() ? config::desk_profile() : config::load(o.config_file);
  if (!o.profile_name.empty()) {
    const auto keep = c.workdir;
    c = config::profile(o.profile_name);
    if (!o.config_file.empty()) c.workdir = keep;
  }
  for (const auto& s : o.overrides) {
    auto [k, v] = config::split_assignment(s);
    config::set(c, k, v);
  }
  if (o.threads) c.threads = o.threads;
  c.validate();
  return c;
}

fs::path out_dir(const Options& o, const config::RunConfig& c) {
  fs::path d = o.out_dir.empty() ? pipeline::workdir(c) / "out" : fs::path(o.out_dir);
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw IoError("cannot create output directory " + d.string());
  return d;
}

agent::ActorCritic load_model(const Options& o, const config::RunConfig& c) {
  const fs::path file = o.checkpoint.empty() ? pipeline::checkpoint_file(c) : fs::path(o.checkpoint);
  if (!fs::exists(file)) throw IoError("missing checkpoint " + file.string() + " (run `dhac train` first)");
  return io::load_checkpoint(file.string());
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write " + p.string());
  os.precision(17);
  return os;
}

void write_summary(const fs::path& p, const config::RunConfig& c, std::uint64_t seed, json body) {
  body["meta"] = {{"config_hash", eval::hex(config::hash(c))}, {"seed", seed}, {"version", pipeline::version()}};
  auto os = open_out(p);
  os << body.dump(2) << '\n';
}

json utility_json(const UtilityEstimate& u) {
  return {{"value", u.value}, {"std_error", u.std_error}, {"n", u.n}, {"lambda", u.lambda}};
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Options& o, config::RunConfig c) {
  auto role = pipeline::PathRole::kTrain;
  if (o.role == "test") role = pipeline::PathRole::kTest;
  else if (o.role == "table1") role = pipeline::PathRole::kTable1;
  else if (o.role != "train") throw ValidationError("simulate: --role must be train, test or table1");
  if (o.n_paths) {
    if (role == pipeline::PathRole::kTrain) c.eval.train_paths = o.n_paths;
    if (role == pipeline::PathRole::kTest) c.eval.test_paths = o.n_paths;
    if (role == pipeline::PathRole::kTable1) c.eval.table1_paths = o.n_paths;
  }
  const auto spec = pipeline::path_spec(c, role);
  const auto ps = heston::simulate(c.env.heston, spec.n_paths, spec.n_steps, c.env.dt, spec.seed,
                                   c.eval.substeps, static_cast<int>(c.threads));
  const fs::path file = o.out_file.empty() ? pipeline::path_cache_file(c, spec) : fs::path(o.out_file);
  heston::write_path_cache(ps, file.string());

  // Moment checks at maturity: spot martingale and CIR mean of the variance.
  const std::size_t T = ps.n_steps;
  const double n = static_cast<double>(ps.n_paths);
  double ms = 0, ms2 = 0, mv = 0, mv2 = 0;
  for (std::size_t i = 0; i < ps.n_paths; ++i) {
    ms += ps.spot(i, T);
    ms2 += ps.spot(i, T) * ps.spot(i, T);
    mv += ps.variance(i, T);
    mv2 += ps.variance(i, T) * ps.variance(i, T);
  }
  ms /= n;
  mv /= n;
  const double se_s = std::sqrt(std::max(ms2 / n - ms * ms, 0.0) / n);
  const double se_v = std::sqrt(std::max(mv2 / n - mv * mv, 0.0) / n);
  const auto& p = c.env.heston;
  const double horizon = static_cast<double>(T) * c.env.dt;
  const double spot_target = p.s0 * std::exp(p.mu * horizon);
  const double var_target = p.theta + (p.v0 - p.theta) * std::exp(-p.kappa * horizon);
  const bool ok_s = std::abs(ms - spot_target) <= 3 * se_s;
  const bool ok_v = std::abs(mv - var_target) <= 3 * se_v;
  std::cout << "wrote " << file.string() << " (" << ps.n_paths << " x " << T + 1 << ")\n"
            << "mean S_T " << ms << " expected " << spot_target << " se " << se_s << (ok_s ? " ok" : " FAIL") << '\n'
            << "mean v_T " << mv << " expected " << var_target << " se " << se_v << (ok_v ? " ok" : " FAIL") << '\n';
  return ok_s && ok_v ? 0 : 3;
}

int cmd_train(const Options& o, const config::RunConfig& c) {
  const fs::path file = o.checkpoint.empty() ? pipeline::checkpoint_file(c) : fs::path(o.checkpoint);
  if (o.fresh && fs::exists(file)) fs::remove(file);
  std::size_t target = c.agent.n_episodes;
  if (o.episodes) {
    std::size_t done = 0;
    if (fs::exists(file)) done = io::load_checkpoint(file.string()).episodes_done;
    target = done + o.episodes;
  }
  const auto m = pipeline::train_to(c, target, &std::cerr, 250, file);
  std::cout << "checkpoint " << file.string() << " episodes " << m.episodes_done << '\n'
            << "metrics " << pipeline::metrics_file(c).string() << '\n';
  return 0;
}

int cmd_eval(const Options& o, const config::RunConfig& c) {
  const auto m = load_model(o, c);
  const auto dir = out_dir(o, c);
  const auto& e = c.eval;
  const auto meta = pipeline::meta(c, e.test_seed);
  if (o.which == "rmse") {
    const auto test = pipeline::paths_for(c, pipeline::PathRole::kTest, &std::cerr);
    const auto rep = eval::validate_critic(m, eval::first_steps(test, c.env.n_steps), e.rmse_portfolios, e.rmse_seed);
    auto os = open_out(dir / "rmse.csv");
    eval::write_meta(os, meta);
    eval::write_csv(os, rep.rows);
    write_summary(dir / "rmse.json", c, e.rmse_seed, {{"rmse", rep.rmse}, {"bias", rep.bias}, {"portfolios", rep.rows.size()}});
    std::cout << "rmse " << rep.rmse << " bias " << rep.bias << '\n';
  } else if (o.which == "prices") {
    const auto test = pipeline::paths_for(c, pipeline::PathRole::kTest, &std::cerr);
    const auto cells = eval::price_surface(m, test, e.price_strikes, e.price_maturities, e.price_lambdas);
    auto os = open_out(dir / "prices.csv");
    eval::write_meta(os, meta);
    eval::write_csv(os, cells);
    std::cout << "wrote " << (dir / "prices.csv").string() << '\n';
  } else if (o.which == "hedges") {
    const auto cells = eval::hedge_surface(m, e.hedge_strikes, e.hedge_lambdas);
    auto os = open_out(dir / "hedges.csv");
    eval::write_meta(os, meta);
    eval::write_csv(os, cells);
    json spear = json::object();
    for (double k : e.hedge_strikes) {
      std::vector<double> l, h;
      for (const auto& cell : cells) {
        if (cell.strike == k) {
          l.push_back(cell.lambda);
          h.push_back(std::abs(cell.hedge));
        }
      }
      spear[std::to_string(k)] = eval::spearman(l, h);
    }
    write_summary(dir / "hedges.json", c, e.test_seed, {{"spearman_abs_hedge_vs_lambda", spear}});
    std::cout << "wrote " << (dir / "hedges.csv").string() << '\n';
  } else if (o.which == "pnl") {
    const auto test = eval::first_steps(pipeline::paths_for(c, pipeline::PathRole::kTest, &std::cerr), c.env.n_steps);
    const auto d = eval::pnl_distribution(m, test, e.pnl_strike, e.pnl_lambdas);
    auto os = open_out(dir / "pnl.csv");
    eval::write_meta(os, meta);
    eval::write_csv(os, d);
    auto hs = open_out(dir / "pnl_hist.csv");
    eval::write_meta(hs, meta);
    eval::write_csv(hs, eval::histogram(d, e.pnl_bins), d);
    std::cout << "wrote " << (dir / "pnl.csv").string() << '\n';
  } else if (o.which == "schedule") {
    const auto test = eval::first_steps(pipeline::paths_for(c, pipeline::PathRole::kTest, &std::cerr), c.env.n_steps);
    auto os = open_out(dir / "schedule.csv");
    eval::write_meta(os, meta);
    bool header = true;
    for (const auto& s : eval::paper_schedules()) {
      eval::write_csv(os, s.name, eval::run_schedule(m, test, s, e.schedule_strike), header);
      header = false;
    }
    std::cout << "wrote " << (dir / "schedule.csv").string() << '\n';
  } else if (o.which == "table1") {
    const auto paths = pipeline::paths_for(c, pipeline::PathRole::kTable1, &std::cerr);
    std::vector<agent::ActorCritic> vanilla;
    vanilla.reserve(e.table1_strikes.size());
    std::map<double, const agent::ActorCritic*> vmap;
    for (double k : e.table1_strikes) {
      vanilla.push_back(pipeline::vanilla_for(c, k, e.table1_lambda, &std::cerr));
      vmap[k] = &vanilla.back();
    }
    const auto rows = eval::table1(m, vmap, paths, e.table1_strikes, e.table1_lambda);
    auto os = open_out(dir / "table1.csv");
    eval::write_meta(os, pipeline::meta(c, e.table1_seed));
    eval::write_csv(os, rows);
    json jr = json::array();
    for (const auto& r : rows) {
      jr.push_back({{"strike", r.strike}, {"delta_hedge", utility_json(r.delta_hedge)},
                    {"vanilla", utility_json(r.vanilla)}, {"actor_critic", utility_json(r.actor_critic)}});
    }
    write_summary(dir / "table1.json", c, e.table1_seed, {{"lambda", e.table1_lambda}, {"rows", jr}});
    std::cout << "strike  delta_hedge  vanilla  actor_critic\n";
    for (const auto& r : rows) {
      std::cout << r.strike << "  " << r.delta_hedge.value << "  " << r.vanilla.value << "  "
                << r.actor_critic.value << '\n';
    }
  } else {
    throw ValidationError("eval: --which must be one of rmse, prices, hedges, pnl, schedule, table1");
  }
  return 0;
}

nn::Batch query_observation(const Options& o, const agent::ActorCritic& m) {
  const auto& env = m.env;
  require(o.step < env.n_steps || (o.maturity_steps && o.step < o.maturity_steps), "query: step beyond maturity");
  const std::size_t steps = o.maturity_steps ? o.maturity_steps : env.n_steps;
  const double tau = static_cast<double>(steps - o.step) * env.dt;
  const double s = std::isnan(o.spot) ? env.heston.s0 : o.spot;
  const double v = std::isnan(o.variance) ? env.heston.v0 : o.variance;
  require(s > 0.0 && v >= 0.0, "query: spot must be positive and variance non-negative");
  const auto book = mdp::option_lmr(o.strike, env.notional, tau, s, v, env.vol_floor) + mdp::underlying_lmr(o.hedge_units, s);
  const auto raw = mdp::observe(book, o.strike, tau, s, v, o.lambda, env);
  nn::Batch x(1, mdp::kNumFeatures);
  for (int j = 0; j < mdp::kNumFeatures; ++j) x(0, j) = raw[j];
  return x;
}

int cmd_price(const Options& o, const config::RunConfig& c) {
  const auto m = load_model(o, c);
  require(o.lambda > 0.0 && o.strike > 0.0, "price: strike and lambda must be positive");
  std::cout << -agent::values(m, m.critic, query_observation(o, m))[0] << '\n';
  return 0;
}

int cmd_hedge(const Options& o, const config::RunConfig& c) {
  const auto m = load_model(o, c);
  require(o.lambda > 0.0 && o.strike > 0.0, "hedge: strike and lambda must be positive");
  std::cout << agent::actions(m, query_observation(o, m))[0] << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Risk-averse actor-critic deep hedging"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pipeline::version());
  Options o;
  app.add_option("-c,--config", o.config_file, "Configuration file (key = value)");
  app.add_option("-p,--profile", o.profile_name, "Built-in profile: desk, paper or smoke");
  app.add_option("-s,--set", o.overrides, "Override a configuration key, e.g. --set agent.batch_size=128");
  app.add_option("-t,--threads", o.threads, "Worker threads for path simulation");
  app.add_option("--checkpoint", o.checkpoint, "Checkpoint file (default: derived from the config in the work directory)");
  app.add_option("--out-dir", o.out_dir, "Directory for evaluation artifacts");

  auto* sim = app.add_subcommand("simulate", "Simulate Heston paths into a cache file");
  sim->add_option("--n-paths", o.n_paths, "Number of paths (default from config)");
  sim->add_option("--role", o.role, "Which path set: train, test or table1")->check(CLI::IsMember({"train", "test", "table1"}));
  sim->add_option("-o,--out", o.out_file, "Output file (default: the work directory cache)");

  auto* train = app.add_subcommand("train", "Train (or resume) the actor-critic");
  train->add_option("--episodes", o.episodes, "Train this many more episodes instead of up to agent.n_episodes");
  train->add_flag("--fresh", o.fresh, "Discard an existing checkpoint first");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--which", o.which, "rmse, prices, hedges, pnl, schedule or table1")
      ->required()
      ->check(CLI::IsMember({"rmse", "prices", "hedges", "pnl", "schedule", "table1"}));

  auto* price = app.add_subcommand("price", "Indifference price of the short call");
  auto* hedge = app.add_subcommand("hedge", "Trade chosen by the policy");
  for (auto* q : {price, hedge}) {
    q->add_option("--strike", o.strike, "Strike")->required();
    q->add_option("--lambda", o.lambda, "Risk aversion")->required();
    q->add_option("--maturity-steps", o.maturity_steps, "Option maturity in steps (default: horizon)");
    q->add_option("--step", o.step, "Current step");
    q->add_option("--spot", o.spot, "Spot (default s0)");
    q->add_option("--variance", o.variance, "Instantaneous variance (default v0)");
    q->add_option("--hedge-units", o.hedge_units, "Current hedge position");
  }
  app.fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const auto c = resolve(o);
    if (*sim) return cmd_simulate(o, c);
    if (*train) return cmd_train(o, c);
    if (*ev) return cmd_eval(o, c);
    if (*price) return cmd_price(o, c);
    if (*hedge) return cmd_hedge(o, c);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "numerical divergence: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
