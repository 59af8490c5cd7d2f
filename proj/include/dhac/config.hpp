#pragma once
// Run configuration: `key = value` text files, built-in profiles and a stable
// hash of everything that affects results.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dhac/agent.hpp"
#include "dhac/baselines.hpp"
#include "dhac/error.hpp"
#include "dhac/mdp.hpp"

namespace dhac::config {

struct EvalConfig {
  std::size_t train_paths = 20000;
  std::uint64_t train_seed = 11;
  int substeps = 1;
  std::size_t test_paths = 4000;
  std::uint64_t test_seed = 22;
  std::size_t table1_paths = 20000;
  std::uint64_t table1_seed = 23;
  std::vector<double> table1_strikes{0.9, 0.95, 1.0, 1.05, 1.1};
  double table1_lambda = 0.1;
  std::size_t rmse_portfolios = 100;
  std::uint64_t rmse_seed = 33;
  std::vector<double> price_strikes{0.9, 0.925, 0.95, 0.975, 1.0, 1.025, 1.05, 1.075, 1.1};
  std::vector<std::size_t> price_maturities{30};
  std::vector<double> price_lambdas{1e-4, 1e-2, 1e-1, 1.0};
  std::vector<double> hedge_strikes{0.9, 0.925, 0.95, 0.975, 1.0, 1.025, 1.05, 1.075, 1.1};
  std::vector<double> hedge_lambdas{1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0};
  double pnl_strike = 1.0;
  std::vector<double> pnl_lambdas{1e-4, 1e-2, 1e-1, 1.0};
  std::size_t pnl_bins = 60;
  double schedule_strike = 1.1;
};

struct RunConfig {
  std::string profile = "desk";
  mdp::EnvConfig env;
  agent::AgentConfig agent;
  baselines::VanillaConfig vanilla;
  EvalConfig eval;
  std::string workdir = "dhac_work";
  std::size_t threads = 1;

  void validate() const {
    env.validate();
    agent.validate();
    vanilla.validate();
    require(eval.train_paths > 1 && eval.test_paths > 1 && eval.table1_paths > 1, "eval: path counts must exceed one");
    require(eval.substeps > 0, "eval: substeps must be positive");
    require(!eval.price_maturities.empty(), "eval: price_maturities is empty");
    for (auto m : eval.price_maturities) require(m > 0, "eval: maturities must be positive");
    require(threads > 0, "threads must be positive");
  }
};

inline mdp::EnvConfig paper_env() {
  mdp::EnvConfig e;
  e.heston = {0.0, 8.0, 0.00625, 1.0, -0.7, 1.0, 0.008};
  e.n_steps = 30;
  e.dt = 1.0 / 30.0;
  return e;
}

inline RunConfig desk_profile() {
  RunConfig c;
  c.profile = "desk";
  c.env = paper_env();
  c.agent.batch_size = 256;
  c.agent.n_episodes = 5000;
  c.agent.hidden = {64, 64, 64};
  // About 160x fewer critic updates than the full run; a slow critic leaves
  // the actor chasing a stale value surface.
  c.agent.critic_lr = 1e-3;
  c.vanilla.epochs = 30;
  c.vanilla.batch_size = 1000;
  return c;
}

inline RunConfig paper_profile() {
  RunConfig c = desk_profile();
  c.profile = "paper";
  c.agent.batch_size = 2048;
  c.agent.n_episodes = 100000;
  c.agent.hidden = {256, 256, 256};
  c.agent.critic_lr = 1e-4;
  c.agent.metrics_every = 500;
  c.vanilla.epochs = 1000;
  c.vanilla.batch_size = 2000;
  c.eval.train_paths = 200000;
  c.eval.test_paths = 10000;
  c.eval.table1_paths = 20000;
  return c;
}

inline RunConfig smoke_profile() {
  RunConfig c = desk_profile();
  c.profile = "smoke";
  c.agent.batch_size = 16;
  c.agent.n_episodes = 10;
  c.agent.hidden = {8, 8, 8};
  c.agent.metrics_every = 5;
  c.vanilla.epochs = 2;
  c.vanilla.batch_size = 64;
  c.eval.train_paths = 512;
  c.eval.test_paths = 256;
  c.eval.table1_paths = 256;
  c.eval.table1_strikes = {0.95, 1.0};
  c.eval.rmse_portfolios = 5;
  c.eval.price_strikes = {0.95, 1.0, 1.05};
  c.eval.hedge_strikes = {0.95, 1.0, 1.05};
  c.eval.hedge_lambdas = {1e-4, 1e-2, 1.0};
  c.eval.pnl_bins = 10;
  return c;
}

inline RunConfig profile(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  if (name == "smoke") return smoke_profile();
  throw ValidationError("unknown profile '" + name + "' (expected desk, paper or smoke)");
}

// ---------------------------------------------------------------------------
// Text values

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ValidationError("config: bad value for " + key + ": '" + text + "'");
  return v;
}

template <class T>
std::string format_number(T v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
struct Codec {
  static T parse(const std::string& key, const std::string& s) { return parse_number<T>(key, s); }
  static std::string format(const T& v) { return format_number(v); }
};

template <>
struct Codec<bool> {
  static bool parse(const std::string& key, const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ValidationError("config: " + key + " must be true or false");
  }
  static std::string format(bool v) { return v ? "true" : "false"; }
};

template <>
struct Codec<std::string> {
  static std::string parse(const std::string&, const std::string& s) { return s; }
  static std::string format(const std::string& v) { return v; }
};

template <>
struct Codec<agent::CriticScaling> {
  static agent::CriticScaling parse(const std::string& key, const std::string& s) {
    if (s == "inverse_lambda") return agent::CriticScaling::kInverseLambda;
    if (s == "none") return agent::CriticScaling::kNone;
    throw ValidationError("config: " + key + " must be inverse_lambda or none");
  }
  static std::string format(agent::CriticScaling v) {
    return v == agent::CriticScaling::kNone ? "none" : "inverse_lambda";
  }
};

template <class T>
struct Codec<std::vector<T>> {
  static std::vector<T> parse(const std::string& key, const std::string& s) {
    std::vector<T> out;
    for (const auto& item : split_list(s)) out.push_back(Codec<T>::parse(key, item));
    return out;
  }
  static std::string format(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + Codec<T>::format(v[i]);
    return out;
  }
};

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool hashed = true;
};

template <class Access>
Field field(std::string key, Access access, bool hashed = true) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  return {key,
          [access, key](RunConfig& c, const std::string& s) { access(c) = Codec<T>::parse(key, s); },
          [access](const RunConfig& c) { return Codec<T>::format(access(const_cast<RunConfig&>(c))); },
          hashed};
}

#define DHAC_FIELD(key, member, ...) field(key, [](RunConfig& c) -> auto& { return c.member; }, ##__VA_ARGS__)

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all{
      DHAC_FIELD("heston.mu", env.heston.mu),
      DHAC_FIELD("heston.kappa", env.heston.kappa),
      DHAC_FIELD("heston.theta", env.heston.theta),
      DHAC_FIELD("heston.xi", env.heston.xi),
      DHAC_FIELD("heston.rho", env.heston.rho),
      DHAC_FIELD("heston.s0", env.heston.s0),
      DHAC_FIELD("heston.v0", env.heston.v0),
      DHAC_FIELD("env.n_steps", env.n_steps),
      DHAC_FIELD("env.dt", env.dt),
      DHAC_FIELD("env.cost_rate", env.cost_rate),
      DHAC_FIELD("env.notional", env.notional),
      DHAC_FIELD("env.strikes", env.strikes),
      DHAC_FIELD("env.vol_floor", env.vol_floor),
      DHAC_FIELD("env.feature_clip", env.feature_clip),
      DHAC_FIELD("env.log_lambda_center", env.log_lambda_center),
      DHAC_FIELD("env.log_lambda_scale", env.log_lambda_scale),
      DHAC_FIELD("agent.lambda_min", agent.lambda_min),
      DHAC_FIELD("agent.lambda_max", agent.lambda_max),
      DHAC_FIELD("agent.actor_lr", agent.actor_lr),
      DHAC_FIELD("agent.critic_lr", agent.critic_lr),
      DHAC_FIELD("agent.batch_size", agent.batch_size),
      DHAC_FIELD("agent.n_episodes", agent.n_episodes),
      DHAC_FIELD("agent.tau", agent.tau),
      DHAC_FIELD("agent.seed", agent.seed),
      DHAC_FIELD("agent.clip", agent.clip),
      DHAC_FIELD("agent.hidden", agent.hidden),
      DHAC_FIELD("agent.critic_scaling", agent.critic_scaling),
      DHAC_FIELD("agent.actor_baseline", agent.actor_baseline),
      DHAC_FIELD("agent.exp_clamp", agent.exp_clamp),
      DHAC_FIELD("agent.metrics_every", agent.metrics_every, false),
      DHAC_FIELD("agent.divergence_patience", agent.divergence_patience),
      DHAC_FIELD("vanilla.epochs", vanilla.epochs),
      DHAC_FIELD("vanilla.batch_size", vanilla.batch_size),
      DHAC_FIELD("vanilla.lr", vanilla.lr),
      DHAC_FIELD("vanilla.seed", vanilla.seed),
      DHAC_FIELD("vanilla.clip", vanilla.clip),
      DHAC_FIELD("eval.train_paths", eval.train_paths),
      DHAC_FIELD("eval.train_seed", eval.train_seed),
      DHAC_FIELD("eval.substeps", eval.substeps),
      DHAC_FIELD("eval.test_paths", eval.test_paths),
      DHAC_FIELD("eval.test_seed", eval.test_seed),
      DHAC_FIELD("eval.table1_paths", eval.table1_paths),
      DHAC_FIELD("eval.table1_seed", eval.table1_seed),
      DHAC_FIELD("eval.table1_strikes", eval.table1_strikes),
      DHAC_FIELD("eval.table1_lambda", eval.table1_lambda),
      DHAC_FIELD("eval.rmse_portfolios", eval.rmse_portfolios),
      DHAC_FIELD("eval.rmse_seed", eval.rmse_seed),
      DHAC_FIELD("eval.price_strikes", eval.price_strikes),
      DHAC_FIELD("eval.price_maturities", eval.price_maturities),
      DHAC_FIELD("eval.price_lambdas", eval.price_lambdas),
      DHAC_FIELD("eval.hedge_strikes", eval.hedge_strikes),
      DHAC_FIELD("eval.hedge_lambdas", eval.hedge_lambdas),
      DHAC_FIELD("eval.pnl_strike", eval.pnl_strike),
      DHAC_FIELD("eval.pnl_lambdas", eval.pnl_lambdas),
      DHAC_FIELD("eval.pnl_bins", eval.pnl_bins),
      DHAC_FIELD("eval.schedule_strike", eval.schedule_strike),
      DHAC_FIELD("io.workdir", workdir, false),
      DHAC_FIELD("threads", threads, false),
  };
  return all;
}

#undef DHAC_FIELD

}  // namespace detail

/// Applies one `key = value` assignment. Unknown keys are an error.
inline void set(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) {
      f.set(c, value);
      return;
    }
  }
  throw ValidationError("config: unknown key '" + key + "'");
}

/// Splits "key=value".
inline std::pair<std::string, std::string> split_assignment(const std::string& line) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ValidationError("config: expected key = value, got '" + line + "'");
  return {detail::trim(std::string_view(line).substr(0, eq)), detail::trim(std::string_view(line).substr(eq + 1))};
}

/// Parses a config text. A `profile` line selects the starting profile and
/// must come before any other key; without one the desk profile is used.
inline RunConfig parse(std::istream& is, const std::string& origin = "<config>") {
  RunConfig c = desk_profile();
  std::string line;
  int lineno = 0;
  bool any = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    try {
      auto [key, value] = split_assignment(line);
      if (key == "profile") {
        if (any) throw ValidationError("config: profile must precede other keys");
        c = profile(value);
      } else {
        set(c, key, value);
      }
      any = true;
    } catch (const ValidationError& e) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

inline RunConfig load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  return parse(is, path);
}

/// Canonical text of every key, in registry order.
inline std::string dump(const RunConfig& c, bool hashed_only = false) {
  std::string out = hashed_only ? "" : "profile = " + c.profile + "\n";
  for (const auto& f : detail::fields()) {
    if (hashed_only && !f.hashed) continue;
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the settings that affect numerical results (not paths or threads).
inline std::uint64_t hash(const RunConfig& c) { return fnv1a(dump(c, true)); }

/// Hash restricted to keys starting with one of `prefixes`.
inline std::uint64_t hash_of(const RunConfig& c, std::initializer_list<std::string_view> prefixes) {
  std::string text;
  for (const auto& f : detail::fields()) {
    for (auto p : prefixes) {
      if (f.hashed && f.key.starts_with(p)) {
        text += f.key + " = " + f.get(c) + "\n";
        break;
      }
    }
  }
  return fnv1a(text);
}

/// Settings that determine a trained actor-critic.
inline std::uint64_t training_hash(const RunConfig& c) {
  return hash_of(c, {"heston.", "env.", "agent.", "eval.train_", "eval.substeps"});
}

/// Settings that determine a vanilla policy (strike and risk level come separately).
inline std::uint64_t vanilla_hash(const RunConfig& c) {
  return hash_of(c, {"heston.", "env.", "agent.hidden", "agent.seed", "vanilla.", "eval.train_", "eval.substeps"});
}

}  // namespace dhac::config
