#pragma once
// Heston market simulator and semi-analytic call pricer.
//
// Variance is sampled exactly from the noncentral chi-squared CIR transition.
// Log-spot uses the exact decomposition conditional on the variance endpoints
// with the integrated variance approximated by the trapezoid rule on each
// (sub-)step.

#include <algorithm>
#include <bit>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dhac/error.hpp"
#include "dhac/rng.hpp"

namespace dhac::heston {

struct HestonParams {
  double mu = 0.0;
  double kappa = 8.0;
  double theta = 0.00625;
  double xi = 1.0;
  double rho = -0.7;
  double s0 = 1.0;
  double v0 = 0.00625;

  void validate() const {
    require(kappa > 0.0, "heston: kappa must be positive");
    require(theta > 0.0, "heston: theta must be positive");
    require(xi > 0.0, "heston: xi must be positive");
    require(v0 >= 0.0, "heston: v0 must be non-negative");
    require(s0 > 0.0, "heston: s0 must be positive");
    require(rho >= -1.0 && rho <= 1.0, "heston: rho must lie in [-1, 1]");
    require(std::isfinite(mu), "heston: mu must be finite");
  }

  friend bool operator==(const HestonParams&, const HestonParams&) = default;
};

/// Row-major [n_paths x (n_steps + 1)] spot and variance grids.
struct PathSet {
  HestonParams params;
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;
  int substeps = 1;
  std::vector<double> spots;
  std::vector<double> variances;

  std::size_t cols() const { return n_steps + 1; }
  double spot(std::size_t path, std::size_t t) const { return spots[path * cols() + t]; }
  double variance(std::size_t path, std::size_t t) const { return variances[path * cols() + t]; }
};

inline constexpr std::size_t kMaxPathCells = std::size_t{1} << 31;

namespace detail {

/// One exact CIR transition over `h` years.
inline double sample_cir(double v, double h, const HestonParams& p, std::mt19937_64& eng) {
  const double decay = std::exp(-p.kappa * h);
  const double c = p.xi * p.xi * (1.0 - decay) / (4.0 * p.kappa);
  const double dof = 4.0 * p.kappa * p.theta / (p.xi * p.xi);
  const double noncentrality = v * decay / c;
  // Poisson mixture representation of the noncentral chi-squared law.
  std::uint64_t n = 0;
  if (noncentrality > 0.0) {
    std::poisson_distribution<std::uint64_t> pois(0.5 * noncentrality);
    n = pois(eng);
  }
  std::gamma_distribution<double> gam(0.5 * dof + static_cast<double>(n), 1.0);
  return c * 2.0 * gam(eng);
}

inline void simulate_path(const HestonParams& p, std::size_t n_steps, double dt, int substeps,
                          std::uint64_t seed, std::size_t path, double* spot, double* var) {
  std::mt19937_64 eng(substream_seed(seed, path));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double h = dt / substeps;
  const double rho_bar = std::sqrt(std::max(0.0, 1.0 - p.rho * p.rho));
  double log_s = std::log(p.s0);
  double v = p.v0;
  spot[0] = p.s0;
  var[0] = p.v0;
  for (std::size_t t = 0; t < n_steps; ++t) {
    for (int k = 0; k < substeps; ++k) {
      const double v_next = sample_cir(v, h, p, eng);
      const double iv = 0.5 * h * (v + v_next);
      const double z = gauss(eng);
      log_s += p.mu * h - 0.5 * iv +
               (p.rho / p.xi) * (v_next - v - p.kappa * p.theta * h + p.kappa * iv) +
               rho_bar * std::sqrt(iv) * z;
      v = v_next;
    }
    spot[t + 1] = std::exp(log_s);
    var[t + 1] = v;
  }
}

}  // namespace detail

/// Simulates `n_paths` Heston paths of `n_steps` steps of `dt` years.
/// Path i depends only on (seed, i), so the result is independent of `threads`.
inline PathSet simulate(const HestonParams& params, std::size_t n_paths, std::size_t n_steps,
                        double dt, std::uint64_t seed, int substeps = 1, int threads = 1) {
  params.validate();
  require(n_paths > 0 && n_steps > 0, "simulate: need at least one path and one step");
  require(dt > 0.0 && std::isfinite(dt), "simulate: dt must be positive");
  require(substeps >= 1, "simulate: substeps must be >= 1");
  require(n_paths <= kMaxPathCells / (n_steps + 1), "simulate: path grid too large");

  PathSet ps;
  ps.params = params;
  ps.n_paths = n_paths;
  ps.n_steps = n_steps;
  ps.dt = dt;
  ps.seed = seed;
  ps.substeps = substeps;
  ps.spots.resize(n_paths * (n_steps + 1));
  ps.variances.resize(n_paths * (n_steps + 1));

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      detail::simulate_path(params, n_steps, dt, substeps, seed, i, &ps.spots[i * ps.cols()],
                            &ps.variances[i * ps.cols()]);
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::max(1, threads));
  if (n_threads == 1) {
    work(0, n_paths);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n_paths + n_threads - 1) / n_threads;
    for (std::size_t b = 0; b < n_paths; b += chunk) {
      pool.emplace_back(work, b, std::min(n_paths, b + chunk));
    }
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Semi-analytic pricing

namespace detail {

using cplx = std::complex<double>;

inline cplx log1p_c(cplx z) {
  if (std::abs(z) < 1e-5) {
    return z * (1.0 - z * (0.5 - z * (1.0 / 3.0 - 0.25 * z)));
  }
  return std::log(1.0 + z);
}

/// Characteristic function of ln(S_tau / S_0) under zero drift, evaluated at a
/// complex argument. Rationalized so that it stays accurate as xi -> 0.
inline cplx log_return_cf(cplx u, double tau, const HestonParams& p) {
  const cplx i(0.0, 1.0);
  const cplx iu = i * u;
  const cplx beta = p.kappa - p.rho * p.xi * iu;
  const cplx quad = iu + u * u;
  const cplx d = std::sqrt(beta * beta + p.xi * p.xi * quad);
  const cplx beta_plus_d = beta + d;
  // (beta - d) / xi^2 without cancellation.
  const cplx bmd_over_xi2 = -quad / beta_plus_d;
  const cplx g = p.xi * p.xi * bmd_over_xi2 / beta_plus_d;
  const cplx e = std::exp(-d * tau);
  const cplx log_ratio = log1p_c(g * (1.0 - e) / (1.0 - g));
  const cplx c_term =
      p.kappa * p.theta * (bmd_over_xi2 * tau - 2.0 * log_ratio / (p.xi * p.xi));
  const cplx d_term = bmd_over_xi2 * (1.0 - e) / (1.0 - g * e);
  return std::exp(c_term + d_term * p.v0);
}

}  // namespace detail

/// Risk-neutral (zero-rate, zero-drift) Heston call price by Lewis' single
/// integral, integrated with adaptive Gauss-Kronrod on [0, inf).
inline double call_price_cf(const HestonParams& params, double strike, double tau,
                            double tolerance = 1e-8) {
  params.validate();
  require(strike > 0.0, "call_price_cf: strike must be positive");
  require(tau > 0.0, "call_price_cf: tau must be positive");
  const double s0 = params.s0;
  const double k = std::log(s0 / strike);
  auto integrand = [&](double u) {
    if (!std::isfinite(u)) return 0.0;
    const detail::cplx arg(u, -0.5);
    const detail::cplx phase(std::cos(u * k), std::sin(u * k));
    return std::real(phase * detail::log_return_cf(arg, tau, params)) / (u * u + 0.25);
  };
  double err = 0.0;
  const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      integrand, 0.0, std::numeric_limits<double>::infinity(), 20, 1e-12, &err);
  const double scale = std::sqrt(s0 * strike) / std::numbers::pi;
  if (!std::isfinite(integral) || scale * err > tolerance) {
    throw DivergenceError("call_price_cf: quadrature did not converge (error estimate " +
                          std::to_string(scale * err) + ")");
  }
  return s0 - scale * integral;
}

// ---------------------------------------------------------------------------
// Path cache: fixed header followed by spots then variances, little-endian f64.

inline constexpr char kPathMagic[8] = {'D', 'H', 'A', 'C', 'P', 'A', 'T', 'H'};
inline constexpr std::uint32_t kPathFormatVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), bytes.size());
}

template <class T>
T get_le(std::istream& is) {
  std::array<char, sizeof(T)> bytes{};
  is.read(bytes.data(), bytes.size());
  if (!is) throw IoError("path cache: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

}  // namespace detail

inline void write_path_cache(const PathSet& ps, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open path cache for writing: " + path);
  os.write(kPathMagic, sizeof kPathMagic);
  detail::put_le(os, kPathFormatVersion);
  const auto& p = ps.params;
  for (double x : {p.mu, p.kappa, p.theta, p.xi, p.rho, p.s0, p.v0}) detail::put_le(os, x);
  detail::put_le(os, static_cast<std::uint64_t>(ps.n_paths));
  detail::put_le(os, static_cast<std::uint64_t>(ps.n_steps));
  detail::put_le(os, ps.dt);
  detail::put_le(os, ps.seed);
  detail::put_le(os, static_cast<std::uint32_t>(ps.substeps));
  for (double x : ps.spots) detail::put_le(os, x);
  for (double x : ps.variances) detail::put_le(os, x);
  if (!os) throw IoError("failed writing path cache: " + path);
}

inline PathSet read_path_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open path cache: " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kPathMagic, sizeof magic) != 0) {
    throw IoError("not a path cache file: " + path);
  }
  if (detail::get_le<std::uint32_t>(is) != kPathFormatVersion) {
    throw IoError("unsupported path cache version: " + path);
  }
  PathSet ps;
  auto& p = ps.params;
  for (double* x : {&p.mu, &p.kappa, &p.theta, &p.xi, &p.rho, &p.s0, &p.v0}) {
    *x = detail::get_le<double>(is);
  }
  ps.n_paths = detail::get_le<std::uint64_t>(is);
  ps.n_steps = detail::get_le<std::uint64_t>(is);
  ps.dt = detail::get_le<double>(is);
  ps.seed = detail::get_le<std::uint64_t>(is);
  ps.substeps = static_cast<int>(detail::get_le<std::uint32_t>(is));
  if (ps.n_paths == 0 || ps.n_steps == 0 || ps.n_paths > kMaxPathCells / (ps.n_steps + 1)) {
    throw IoError("path cache header is corrupt: " + path);
  }
  const std::size_t cells = ps.n_paths * ps.cols();
  ps.spots.resize(cells);
  ps.variances.resize(cells);
  for (auto& x : ps.spots) x = detail::get_le<double>(is);
  for (auto& x : ps.variances) x = detail::get_le<double>(is);
  return ps;
}

}  // namespace dhac::heston
