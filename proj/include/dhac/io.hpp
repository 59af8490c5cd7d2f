#pragma once
// Checkpoints: JSON documents whose tensors are base64 blobs of little-endian
// doubles, so every parameter round-trips bit for bit.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <json.hpp>

#include "dhac/agent.hpp"
#include "dhac/error.hpp"

namespace dhac::io {

using json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string base64_encode(const std::string& bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<std::string::const_iterator, 6, 8>>;
  std::string out(It(bytes.begin()), It(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

inline std::string base64_decode(std::string text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  const auto pad = static_cast<std::size_t>(std::count(text.begin(), text.end(), '='));
  std::replace(text.begin(), text.end(), '=', 'A');
  try {
    std::string out(It(text.begin()), It(text.end()));
    out.erase(out.size() - std::min(pad, out.size()));
    return out;
  } catch (const std::exception& e) {
    throw IoError(std::string("checkpoint: bad base64 tensor: ") + e.what());
  }
}

inline std::string pack(const double* data, std::size_t n) {
  std::string bytes(n * 8, '\0');
  for (std::size_t i = 0; i < n; ++i) {
    const auto u = std::bit_cast<std::uint64_t>(data[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
  }
  return bytes;
}

inline std::vector<double> unpack(const std::string& bytes) {
  if (bytes.size() % 8) throw IoError("checkpoint: tensor blob is not a whole number of doubles");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) u |= std::uint64_t{static_cast<unsigned char>(bytes[i * 8 + b])} << (8 * b);
    out[i] = std::bit_cast<double>(u);
  }
  return out;
}

}  // namespace detail

/// Column-major tensor blob.
template <class Derived>
json tensor(const Eigen::DenseBase<Derived>& m) {
  const Eigen::MatrixXd dense = m;
  return {{"rows", dense.rows()},
          {"cols", dense.cols()},
          {"data", detail::base64_encode(detail::pack(dense.data(), static_cast<std::size_t>(dense.size())))}};
}

inline Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto v = detail::unpack(detail::base64_decode(j.at("data").get<std::string>()));
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != v.size()) {
    throw IoError("checkpoint: tensor shape does not match its data");
  }
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols);
}

inline json tensor(const std::vector<double>& v) {
  return tensor(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
}

inline std::vector<double> vector_from(const json& j) {
  const Eigen::MatrixXd m = matrix_from(j);
  return {m.data(), m.data() + m.size()};
}

inline json to_json(const nn::Mlp& net) {
  json w = json::array(), b = json::array();
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    w.push_back(tensor(net.weights[l]));
    b.push_back(tensor(net.biases[l]));
  }
  return {{"layer_sizes", net.layer_sizes}, {"weights", w}, {"biases", b}};
}

inline nn::Mlp mlp_from(const json& j) {
  nn::Mlp net = nn::make_zero_mlp(j.at("layer_sizes").get<std::vector<int>>());
  const auto& w = j.at("weights");
  const auto& b = j.at("biases");
  if (w.size() != net.n_layers() || b.size() != net.n_layers()) throw IoError("checkpoint: layer count mismatch");
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    auto wl = matrix_from(w[l]);
    auto bl = matrix_from(b[l]);
    if (wl.rows() != net.weights[l].rows() || wl.cols() != net.weights[l].cols() ||
        bl.size() != net.biases[l].size()) {
      throw IoError("checkpoint: layer shape mismatch");
    }
    net.weights[l] = wl;
    net.biases[l] = Eigen::Map<const Eigen::VectorXd>(bl.data(), bl.size());
  }
  return net;
}

inline json to_json(const nn::AdamState& st) {
  return {{"m", to_json(st.m)},   {"v", to_json(st.v)},         {"step_count", st.step_count},
          {"lr", st.lr},          {"beta1", st.beta1},          {"beta2", st.beta2},
          {"eps", st.eps}};
}

inline nn::AdamState adam_from(const json& j) {
  nn::AdamState st;
  st.m = mlp_from(j.at("m"));
  st.v = mlp_from(j.at("v"));
  st.step_count = j.at("step_count").get<decltype(st.step_count)>();
  st.lr = j.at("lr").get<double>();
  st.beta1 = j.at("beta1").get<double>();
  st.beta2 = j.at("beta2").get<double>();
  st.eps = j.at("eps").get<double>();
  return st;
}

inline json to_json(const mdp::EnvConfig& e) {
  const auto& h = e.heston;
  return {{"heston", {{"mu", h.mu}, {"kappa", h.kappa}, {"theta", h.theta}, {"xi", h.xi},
                      {"rho", h.rho}, {"s0", h.s0}, {"v0", h.v0}}},
          {"n_steps", e.n_steps},
          {"dt", e.dt},
          {"cost_rate", e.cost_rate},
          {"notional", e.notional},
          {"strikes", e.strikes},
          {"vol_floor", e.vol_floor},
          {"feature_clip", e.feature_clip},
          {"log_lambda_center", e.log_lambda_center},
          {"log_lambda_scale", e.log_lambda_scale}};
}

inline mdp::EnvConfig env_from(const json& j) {
  mdp::EnvConfig e;
  const auto& h = j.at("heston");
  e.heston = {h.at("mu"), h.at("kappa"), h.at("theta"), h.at("xi"), h.at("rho"), h.at("s0"), h.at("v0")};
  e.n_steps = j.at("n_steps");
  e.dt = j.at("dt");
  e.cost_rate = j.at("cost_rate");
  e.notional = j.at("notional");
  e.strikes = j.at("strikes").get<std::vector<double>>();
  e.vol_floor = j.at("vol_floor");
  e.feature_clip = j.at("feature_clip");
  e.log_lambda_center = j.at("log_lambda_center");
  e.log_lambda_scale = j.at("log_lambda_scale");
  return e;
}

inline json to_json(const agent::AgentConfig& c) {
  return {{"lambda_min", c.lambda_min},
          {"lambda_max", c.lambda_max},
          {"actor_lr", c.actor_lr},
          {"critic_lr", c.critic_lr},
          {"batch_size", c.batch_size},
          {"n_episodes", c.n_episodes},
          {"tau", c.tau},
          {"seed", c.seed},
          {"clip", c.clip},
          {"hidden", c.hidden},
          {"critic_scaling", c.critic_scaling == agent::CriticScaling::kInverseLambda ? "inverse_lambda" : "none"},
          {"actor_baseline", c.actor_baseline},
          {"exp_clamp", c.exp_clamp},
          {"metrics_every", c.metrics_every},
          {"divergence_patience", c.divergence_patience}};
}

inline agent::AgentConfig agent_config_from(const json& j) {
  agent::AgentConfig c;
  c.lambda_min = j.at("lambda_min");
  c.lambda_max = j.at("lambda_max");
  c.actor_lr = j.at("actor_lr");
  c.critic_lr = j.at("critic_lr");
  c.batch_size = j.at("batch_size");
  c.n_episodes = j.at("n_episodes");
  c.tau = j.at("tau");
  c.seed = j.at("seed");
  c.clip = j.at("clip");
  c.hidden = j.at("hidden").get<std::vector<int>>();
  const auto cs = j.at("critic_scaling").get<std::string>();
  if (cs != "inverse_lambda" && cs != "none") throw IoError("checkpoint: unknown critic_scaling " + cs);
  c.critic_scaling = cs == "none" ? agent::CriticScaling::kNone : agent::CriticScaling::kInverseLambda;
  c.actor_baseline = j.at("actor_baseline");
  c.exp_clamp = j.at("exp_clamp");
  c.metrics_every = j.at("metrics_every");
  c.divergence_patience = j.at("divergence_patience");
  return c;
}

inline json to_json(const agent::ActorCritic& m) {
  return {{"format", "dhac-checkpoint"},
          {"version", kCheckpointVersion},
          {"kind", m.kind},
          {"config_hash", m.config_hash},
          {"episodes_done", m.episodes_done},
          {"fixed_strike", m.fixed_strike},
          {"fixed_lambda", m.fixed_lambda},
          {"env", to_json(m.env)},
          {"agent", to_json(m.config)},
          {"normalizer",
           {{"mean", tensor(m.normalizer.mean)}, {"std", tensor(m.normalizer.std)}, {"clip", m.normalizer.clip}}},
          {"actor", to_json(m.actor)},
          {"critic", to_json(m.critic)},
          {"target", to_json(m.target)},
          {"actor_opt", to_json(m.actor_opt)},
          {"critic_opt", to_json(m.critic_opt)}};
}

inline agent::ActorCritic model_from(const json& j) {
  if (j.value("format", "") != "dhac-checkpoint") throw IoError("checkpoint: not a dhac checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion) throw IoError("checkpoint: unsupported version");
  agent::ActorCritic m;
  m.kind = j.at("kind");
  if (m.kind != "actor_critic" && m.kind != "vanilla") throw IoError("checkpoint: unknown kind " + m.kind);
  m.config_hash = j.at("config_hash");
  m.episodes_done = j.at("episodes_done");
  m.fixed_strike = j.at("fixed_strike");
  m.fixed_lambda = j.at("fixed_lambda");
  m.env = env_from(j.at("env"));
  m.config = agent_config_from(j.at("agent"));
  const auto& nz = j.at("normalizer");
  m.normalizer.mean = vector_from(nz.at("mean"));
  m.normalizer.std = vector_from(nz.at("std"));
  m.normalizer.clip = nz.at("clip");
  m.actor = mlp_from(j.at("actor"));
  m.critic = mlp_from(j.at("critic"));
  m.target = mlp_from(j.at("target"));
  m.actor_opt = adam_from(j.at("actor_opt"));
  m.critic_opt = adam_from(j.at("critic_opt"));
  if (m.normalizer.mean.size() != static_cast<std::size_t>(mdp::kNumFeatures) ||
      m.normalizer.std.size() != m.normalizer.mean.size() || m.actor.input_dim() != mdp::kNumFeatures ||
      m.critic.layer_sizes != m.target.layer_sizes) {
    throw IoError("checkpoint: inconsistent shapes");
  }
  return m;
}

/// Writes atomically through a temporary file.
inline void save_checkpoint(const agent::ActorCritic& m, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw IoError("cannot write checkpoint " + tmp);
    os << to_json(m).dump(1) << '\n';
    if (!os) throw IoError("failed writing checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

inline agent::ActorCritic load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open checkpoint " + path);
  try {
    return model_from(json::parse(is));
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint " + path + ": " + e.what());
  }
}

}  // namespace dhac::io
