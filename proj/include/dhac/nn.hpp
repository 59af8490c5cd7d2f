#pragma once
// Dense feedforward networks with sigmoid hidden layers and a linear output,
// reverse-mode gradients, Adam and Polyak target updates.
//
// Batches are n x d row-major matrices (one sample per row). Internally the
// same memory is viewed as d x n column-major so every layer is W * A.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dhac/error.hpp"

namespace dhac::nn {

using Batch = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<Matrix> weights;  // weights[l] is layer_sizes[l+1] x layer_sizes[l]
  std::vector<Vector> biases;

  std::size_t n_layers() const { return weights.size(); }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }

  std::size_t n_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    }
    return true;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layer_sizes != b.layer_sizes) return false;
    for (std::size_t l = 0; l < a.weights.size(); ++l) {
      if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
    }
    return true;
  }
};

/// Gradients share the network's shapes; layer_sizes is copied for checks.
using Gradients = Mlp;

inline Mlp zeros_like(const Mlp& net) {
  Mlp z;
  z.layer_sizes = net.layer_sizes;
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    z.weights.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
    z.biases.push_back(Vector::Zero(net.biases[l].size()));
  }
  return z;
}

inline Mlp make_zero_mlp(const std::vector<int>& layer_sizes) {
  require(layer_sizes.size() >= 2, "mlp: need at least input and output sizes");
  Mlp net;
  net.layer_sizes = layer_sizes;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    require(layer_sizes[l] > 0 && layer_sizes[l + 1] > 0, "mlp: layer sizes must be positive");
    net.weights.push_back(Matrix::Zero(layer_sizes[l + 1], layer_sizes[l]));
    net.biases.push_back(Vector::Zero(layer_sizes[l + 1]));
  }
  return net;
}

/// Glorot-uniform hidden layers. The output layer starts at zero so a freshly
/// built network contributes nothing on top of any skip connection.
inline Mlp make_mlp(const std::vector<int>& layer_sizes, std::uint64_t seed,
                    bool zero_output_layer = true) {
  Mlp net = make_zero_mlp(layer_sizes);
  std::mt19937_64 eng(seed);
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    if (zero_output_layer && l + 1 == net.n_layers()) break;
    const double limit = std::sqrt(6.0 / (layer_sizes[l] + layer_sizes[l + 1]));
    std::uniform_real_distribution<double> unif(-limit, limit);
    for (Eigen::Index j = 0; j < net.weights[l].cols(); ++j) {
      for (Eigen::Index i = 0; i < net.weights[l].rows(); ++i) net.weights[l](i, j) = unif(eng);
    }
  }
  return net;
}

/// Activations of every layer from the last forward pass (d_l x n each).
struct ForwardCache {
  std::vector<Matrix> activations;  // activations[0] is the input
};

namespace detail {

inline void check_input(const Mlp& net, const Batch& x) {
  if (x.cols() != net.input_dim()) {
    throw ValidationError("mlp: input has " + std::to_string(x.cols()) + " features, expected " +
                          std::to_string(net.input_dim()));
  }
}

inline void sigmoid_inplace(Matrix& z) {
  z = (1.0 + (-z.array()).exp()).inverse().matrix();
}

}  // namespace detail

inline Batch forward(const Mlp& net, const Batch& x, ForwardCache* cache = nullptr) {
  detail::check_input(net, x);
  Matrix a = x.transpose();
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(a);
  }
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    Matrix z = net.weights[l] * a;
    z.colwise() += net.biases[l];
    if (l + 1 < net.n_layers()) detail::sigmoid_inplace(z);
    a = std::move(z);
    if (cache && l + 1 < net.n_layers()) cache->activations.push_back(a);
  }
  return a.transpose();
}

struct BackwardResult {
  Gradients params;
  Batch input;  // n x d_in
};

/// Reverse-mode pass for a cached forward pass, contracted with `upstream`
/// (n x d_out). Parameter gradients are summed over the batch.
inline BackwardResult backward(const Mlp& net, const ForwardCache& cache, const Batch& upstream,
                               bool want_param_grads = true) {
  if (cache.activations.size() != net.n_layers()) {
    throw ValidationError("mlp: backward needs a cache from a forward pass of this network");
  }
  const Eigen::Index n = cache.activations.front().cols();
  if (upstream.rows() != n || upstream.cols() != net.output_dim()) {
    throw ValidationError("mlp: upstream gradient shape mismatch");
  }
  BackwardResult out;
  if (want_param_grads) out.params = zeros_like(net);
  Matrix delta = upstream.transpose();
  for (std::size_t l = net.n_layers(); l-- > 0;) {
    const Matrix& a_prev = cache.activations[l];
    if (want_param_grads) {
      out.params.weights[l].noalias() = delta * a_prev.transpose();
      out.params.biases[l] = delta.rowwise().sum();
    }
    Matrix back = net.weights[l].transpose() * delta;
    if (l > 0) {
      back.array() *= a_prev.array() * (1.0 - a_prev.array());
    }
    delta = std::move(back);
  }
  out.input = delta.transpose();
  return out;
}

inline double grad_norm(const Gradients& g) {
  double s = 0.0;
  for (std::size_t l = 0; l < g.n_layers(); ++l) {
    s += g.weights[l].squaredNorm() + g.biases[l].squaredNorm();
  }
  return std::sqrt(s);
}

/// Rescales `g` to norm `max_norm` if it is longer. Returns true when clipped.
inline bool clip_grad_norm(Gradients& g, double max_norm) {
  const double norm = grad_norm(g);
  if (!(max_norm > 0.0) || norm <= max_norm) return false;
  const double s = max_norm / norm;
  for (std::size_t l = 0; l < g.n_layers(); ++l) {
    g.weights[l] *= s;
    g.biases[l] *= s;
  }
  return true;
}

struct AdamState {
  Mlp m;
  Mlp v;
  std::int64_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState make_adam(const Mlp& net, double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8) {
  require(lr > 0.0, "adam: learning rate must be positive");
  return AdamState{zeros_like(net), zeros_like(net), 0, lr, beta1, beta2, eps};
}

inline void adam_step(Mlp& net, const Gradients& g, AdamState& st) {
  if (g.layer_sizes != net.layer_sizes || st.m.layer_sizes != net.layer_sizes) {
    throw ValidationError("adam: gradient/state shapes do not match the network");
  }
  for (std::size_t l = 0; l < g.n_layers(); ++l) {
    if (!g.weights[l].allFinite() || !g.biases[l].allFinite()) {
      throw DivergenceError("adam: non-finite gradient in layer " + std::to_string(l));
    }
  }
  ++st.step_count;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  const double step = st.lr / bc1;
  auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
    m = st.beta1 * m + (1.0 - st.beta1) * grad;
    v = st.beta2 * v + (1.0 - st.beta2) * grad.cwiseProduct(grad);
    param.array() -= step * m.array() / ((v.array() / bc2).sqrt() + st.eps);
  };
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    update(net.weights[l], st.m.weights[l], st.v.weights[l], g.weights[l]);
    update(net.biases[l], st.m.biases[l], st.v.biases[l], g.biases[l]);
  }
}

/// target <- tau * online + (1 - tau) * target
inline void soft_update(Mlp& target, const Mlp& online, double tau) {
  require(tau >= 0.0 && tau <= 1.0, "soft_update: tau must lie in [0, 1]");
  require(target.layer_sizes == online.layer_sizes, "soft_update: network shapes differ");
  if (tau == 1.0) {
    target = online;
    return;
  }
  for (std::size_t l = 0; l < target.n_layers(); ++l) {
    target.weights[l] = tau * online.weights[l] + (1.0 - tau) * target.weights[l];
    target.biases[l] = tau * online.biases[l] + (1.0 - tau) * target.biases[l];
  }
}

}  // namespace dhac::nn
