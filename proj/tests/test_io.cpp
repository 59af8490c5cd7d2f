#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "dhac/config.hpp"
#include "dhac/eval.hpp"
#include "dhac/io.hpp"

using namespace dhac;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "dhac_test_io";
  fs::create_directories(dir);
  return dir / name;
}

agent::ActorCritic trained_smoke_model() {
  auto c = config::smoke_profile();
  const auto paths = heston::simulate(c.env.heston, c.eval.train_paths, c.env.n_steps, c.env.dt, c.eval.train_seed);
  auto m = agent::make_model(c.env, c.agent, mdp::fit_normalization(paths, c.env, c.agent.seed).normalizer);
  agent::train(m, paths, c.agent.n_episodes);
  return m;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

}  // namespace

TEST_CASE("doubles survive the binary encoding bit for bit") {
  const std::vector<double> v{0.0, -0.0, 1.0 / 3.0, 1e-308, 5e-324, std::numeric_limits<double>::max(),
                              std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  const auto back = io::detail::unpack(io::detail::base64_decode(io::detail::base64_encode(io::detail::pack(v.data(), v.size()))));
  REQUIRE(back.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::bit_cast<std::uint64_t>(back[i]) == std::bit_cast<std::uint64_t>(v[i]));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK(std::isnan(io::detail::unpack(io::detail::base64_decode(io::detail::base64_encode(io::detail::pack(&nan, 1))))[0]));
}

TEST_CASE("smoke training round-trips through a checkpoint") {
  const auto m = trained_smoke_model();
  const auto file = scratch("smoke.json");
  io::save_checkpoint(m, file.string());
  const auto back = io::load_checkpoint(file.string());

  CHECK(back.kind == m.kind);
  CHECK(back.episodes_done == m.episodes_done);
  CHECK(back.config_hash == m.config_hash);
  CHECK(back.actor == m.actor);
  CHECK(back.critic == m.critic);
  CHECK(back.target == m.target);
  CHECK(back.actor_opt.m == m.actor_opt.m);
  CHECK(back.actor_opt.v == m.actor_opt.v);
  CHECK(back.critic_opt.m == m.critic_opt.m);
  CHECK(back.normalizer == m.normalizer);
  CHECK(back.config.hidden == m.config.hidden);
  CHECK(back.config.critic_scaling == m.config.critic_scaling);
  CHECK(back.env.strikes == m.env.strikes);
  CHECK(back.env.heston == m.env.heston);

  // Probe grid over strikes, risk levels and maturities.
  for (double k : {0.9, 1.0, 1.1}) {
    for (double l : {1e-4, 1e-2, 1.0}) {
      for (std::size_t steps : {std::size_t{1}, std::size_t{15}, std::size_t{30}}) {
        const auto raw = eval::initial_observation(m.env, k, l, steps);
        const double a = agent::actions(m, raw)[0], v = agent::values(m, m.critic, raw)[0];
        CHECK(std::isfinite(a));
        CHECK(std::isfinite(v));
        CHECK(agent::actions(back, raw)[0] == a);
        CHECK(agent::values(back, back.critic, raw)[0] == v);
      }
    }
  }
}

TEST_CASE("resuming from a checkpoint continues the same run") {
  auto c = config::smoke_profile();
  const auto paths = heston::simulate(c.env.heston, c.eval.train_paths, c.env.n_steps, c.env.dt, 5);
  auto m = agent::make_model(c.env, c.agent, mdp::fit_normalization(paths, c.env, 1).normalizer);
  auto straight = m;
  agent::train(m, paths, 4);
  const auto file = scratch("resume.json");
  io::save_checkpoint(m, file.string());
  auto resumed = io::load_checkpoint(file.string());
  agent::train(resumed, paths, 4);
  agent::train(straight, paths, 8);
  CHECK(resumed.actor == straight.actor);
  CHECK(resumed.critic == straight.critic);
  CHECK(resumed.target == straight.target);
}

TEST_CASE("bad checkpoints are rejected") {
  CHECK_THROWS_AS(io::load_checkpoint(scratch("missing.json").string()), IoError);

  const auto garbage = scratch("garbage.json");
  write_text(garbage, "{ not json");
  CHECK_THROWS_AS(io::load_checkpoint(garbage.string()), IoError);

  auto m = trained_smoke_model();
  auto j = io::to_json(m);
  j["version"] = 99;
  const auto wrong = scratch("wrong_version.json");
  write_text(wrong, j.dump());
  CHECK_THROWS_AS(io::load_checkpoint(wrong.string()), IoError);

  j = io::to_json(m);
  j.erase("critic");
  const auto partial = scratch("partial.json");
  write_text(partial, j.dump());
  CHECK_THROWS_AS(io::load_checkpoint(partial.string()), IoError);
}

TEST_CASE("config files") {
  std::istringstream text(
      "profile = smoke   # start small\n"
      "\n"
      "agent.batch_size = 32\n"
      "env.strikes = 0.9, 1.0, 1.1\n"
      "agent.critic_scaling = none\n"
      "agent.actor_baseline = false\n");
  const auto c = config::parse(text);
  CHECK(c.profile == "smoke");
  CHECK(c.agent.batch_size == 32);
  CHECK(c.agent.hidden == std::vector<int>{8, 8, 8});
  CHECK(c.env.strikes == std::vector<double>{0.9, 1.0, 1.1});
  CHECK(c.agent.critic_scaling == agent::CriticScaling::kNone);
  CHECK_FALSE(c.agent.actor_baseline);

  std::istringstream unknown("agent.bogus = 1\n");
  CHECK_THROWS_AS(config::parse(unknown), ValidationError);
  std::istringstream late("agent.batch_size = 4\nprofile = smoke\n");
  CHECK_THROWS_AS(config::parse(late), ValidationError);
  std::istringstream bad_number("agent.batch_size = many\n");
  CHECK_THROWS_AS(config::parse(bad_number), ValidationError);
  std::istringstream bad_profile("profile = huge\n");
  CHECK_THROWS_AS(config::parse(bad_profile), ValidationError);
  CHECK_THROWS_AS(config::load(scratch("no_such.conf").string()), IoError);
}

TEST_CASE("config dump parses back to the same configuration") {
  for (const char* name : {"smoke", "desk", "paper"}) {
    auto c = config::profile(name);
    config::set(c, "heston.v0", "0.0123456789");
    std::istringstream is(config::dump(c));
    const auto back = config::parse(is);
    CHECK(config::dump(back) == config::dump(c));
    CHECK(config::hash(back) == config::hash(c));
  }
}

TEST_CASE("config hash tracks result-relevant keys only") {
  const auto base = config::desk_profile();
  auto c = base;
  config::set(c, "threads", "8");
  config::set(c, "io.workdir", "/elsewhere");
  CHECK(config::hash(c) == config::hash(base));
  CHECK(config::training_hash(c) == config::training_hash(base));
  c = base;
  config::set(c, "agent.actor_lr", "0.002");
  CHECK(config::hash(c) != config::hash(base));
  CHECK(config::training_hash(c) != config::training_hash(base));
  CHECK(config::vanilla_hash(c) == config::vanilla_hash(base));
  c = base;
  config::set(c, "eval.test_paths", "100");
  CHECK(config::hash(c) != config::hash(base));
  CHECK(config::training_hash(c) == config::training_hash(base));
}

TEST_CASE("shipped config files load") {
  const fs::path dir = DHAC_CONFIG_DIR;
  auto example = config::load((dir / "example.conf").string());
  auto desk = config::desk_profile();
  example.workdir = desk.workdir;
  CHECK(config::dump(example) == config::dump(desk));
  for (const char* name : {"smoke", "desk", "paper"}) {
    const auto c = config::load((dir / (std::string(name) + ".conf")).string());
    CHECK(c.profile == name);
    CHECK(config::hash(c) == config::hash(config::profile(name)));
  }
}
