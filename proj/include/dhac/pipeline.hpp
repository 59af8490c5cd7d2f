#pragma once
// Experiment plumbing shared by the command-line tool and the acceptance
// suite: cached path sets, resumable training and cached vanilla policies.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "dhac/agent.hpp"
#include "dhac/baselines.hpp"
#include "dhac/config.hpp"
#include "dhac/eval.hpp"
#include "dhac/heston.hpp"
#include "dhac/io.hpp"
#include "dhac/mdp.hpp"

namespace dhac::pipeline {

namespace fs = std::filesystem;

inline const char* version() {
#ifdef DHAC_VERSION
  return DHAC_VERSION;
#else
  return "unknown";
#endif
}

enum class PathRole { kTrain, kTest, kTable1 };

struct PathSpec {
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  std::uint64_t seed = 0;
};

inline PathSpec path_spec(const config::RunConfig& c, PathRole role) {
  switch (role) {
    case PathRole::kTrain: return {c.eval.train_paths, c.env.n_steps, c.eval.train_seed};
    case PathRole::kTest: {
      std::size_t steps = c.env.n_steps;
      for (auto m : c.eval.price_maturities) steps = std::max(steps, m);
      return {c.eval.test_paths, steps, c.eval.test_seed};
    }
    case PathRole::kTable1: return {c.eval.table1_paths, c.env.n_steps, c.eval.table1_seed};
  }
  return {};
}

inline fs::path workdir(const config::RunConfig& c) {
  fs::path w(c.workdir);
  std::error_code ec;
  fs::create_directories(w, ec);
  if (ec) throw IoError("cannot create work directory " + w.string() + ": " + ec.message());
  return w;
}

inline fs::path path_cache_file(const config::RunConfig& c, const PathSpec& s) {
  std::ostringstream key;
  key << config::hash_of(c, {"heston.", "env.dt"}) << ':' << s.n_paths << ':' << s.n_steps << ':' << s.seed
      << ':' << c.eval.substeps;
  return workdir(c) / ("paths_" + eval::hex(config::fnv1a(key.str())) + ".bin");
}

/// Simulates or reloads the path set for `role`.
inline heston::PathSet paths_for(const config::RunConfig& c, PathRole role, std::ostream* log = nullptr) {
  const auto spec = path_spec(c, role);
  const auto file = path_cache_file(c, spec);
  if (fs::exists(file)) {
    auto ps = heston::read_path_cache(file.string());
    if (ps.n_paths == spec.n_paths && ps.n_steps == spec.n_steps && ps.seed == spec.seed &&
        ps.params == c.env.heston && ps.dt == c.env.dt && ps.substeps == c.eval.substeps) {
      return ps;
    }
  }
  if (log) *log << "simulating " << spec.n_paths << " paths x " << spec.n_steps << " steps\n";
  auto ps = heston::simulate(c.env.heston, spec.n_paths, spec.n_steps, c.env.dt, spec.seed, c.eval.substeps,
                             static_cast<int>(c.threads));
  heston::write_path_cache(ps, file.string());
  return ps;
}

inline fs::path checkpoint_file(const config::RunConfig& c) {
  return workdir(c) / ("actor_critic_" + eval::hex(config::training_hash(c)) + ".json");
}

inline fs::path metrics_file(const config::RunConfig& c) {
  return workdir(c) / ("metrics_" + eval::hex(config::training_hash(c)) + ".csv");
}

inline agent::ActorCritic fresh_model(const config::RunConfig& c, const heston::PathSet& train,
                                      std::ostream* log = nullptr) {
  const auto stats = mdp::fit_normalization(train, c.env, c.agent.seed);
  if (log) {
    for (const auto& name : stats.degenerate) *log << "warning: feature '" << name << "' is degenerate\n";
  }
  auto m = agent::make_model(c.env, c.agent, stats.normalizer);
  m.config_hash = config::training_hash(c);
  return m;
}

/// Loads the checkpoint for this configuration (or starts a new one) and
/// trains until `target_episodes` episodes are done. Saves every
/// `save_every` episodes so an interrupted run resumes.
inline agent::ActorCritic train_to(const config::RunConfig& c, std::size_t target_episodes,
                                   std::ostream* log = nullptr, std::size_t save_every = 250,
                                   const fs::path& checkpoint = {}) {
  const auto file = checkpoint.empty() ? checkpoint_file(c) : checkpoint;
  const auto train = paths_for(c, PathRole::kTrain, log);
  agent::ActorCritic m;
  if (fs::exists(file)) {
    m = io::load_checkpoint(file.string());
    if (m.kind != "actor_critic") throw ValidationError("checkpoint " + file.string() + " is not an actor-critic");
  } else {
    m = fresh_model(c, train, log);
  }
  const auto mfile = metrics_file(c);
  const bool new_metrics = !fs::exists(mfile) || m.episodes_done == 0;
  std::ofstream metrics(mfile, new_metrics ? std::ios::trunc : std::ios::app);
  if (!metrics) throw IoError("cannot write metrics " + mfile.string());
  if (new_metrics) agent::write_metrics_header(metrics);
  while (m.episodes_done < target_episodes) {
    const std::size_t chunk = std::min(save_every, target_episodes - m.episodes_done);
    agent::train(m, train, chunk, &metrics);
    io::save_checkpoint(m, file.string());
    if (log) *log << "episode " << m.episodes_done << "/" << target_episodes << '\n' << std::flush;
  }
  if (!fs::exists(file)) io::save_checkpoint(m, file.string());
  return m;
}

inline fs::path vanilla_file(const config::RunConfig& c, double strike, double lambda) {
  std::ostringstream key;
  key << config::vanilla_hash(c) << ':' << strike << ':' << lambda;
  return workdir(c) / ("vanilla_" + eval::hex(config::fnv1a(key.str())) + ".json");
}

/// Vanilla deep-hedging policy for one strike, trained on first use.
inline agent::ActorCritic vanilla_for(const config::RunConfig& c, double strike, double lambda,
                                      std::ostream* log = nullptr) {
  const auto file = vanilla_file(c, strike, lambda);
  if (fs::exists(file)) return io::load_checkpoint(file.string());
  const auto train = paths_for(c, PathRole::kTrain, log);
  auto m = fresh_model(c, train, log);
  m.config_hash = config::vanilla_hash(c);
  if (log) *log << "training vanilla policy K=" << strike << " lambda=" << lambda << '\n' << std::flush;
  const auto res = baselines::train_vanilla(m, train, strike, lambda, c.vanilla);
  if (log) {
    *log << "  utility " << res.initial_utility << " -> " << res.final_utility << '\n' << std::flush;
  }
  io::save_checkpoint(m, file.string());
  return m;
}

inline eval::Meta meta(const config::RunConfig& c, std::uint64_t seed) {
  return {config::hash(c), seed, version()};
}

}  // namespace dhac::pipeline
