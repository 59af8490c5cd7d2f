#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>

#include "dhac/bsmath.hpp"
#include "dhac/heston.hpp"

using namespace dhac;
using Catch::Approx;

namespace {

heston::HestonParams paper_params() {
  heston::HestonParams p;
  p.mu = 0.0;
  p.kappa = 8.0;
  p.theta = 0.00625;
  p.xi = 1.0;
  p.rho = -0.7;
  p.s0 = 1.0;
  p.v0 = 0.00625;
  return p;
}

struct Moments {
  double mean, var, se_mean, se_var;
};

Moments column_moments(const heston::PathSet& ps, std::size_t t, bool spot) {
  const double n = static_cast<double>(ps.n_paths);
  double m = 0.0;
  for (std::size_t i = 0; i < ps.n_paths; ++i) m += spot ? ps.spot(i, t) : ps.variance(i, t);
  m /= n;
  double m2 = 0.0, m4 = 0.0;
  for (std::size_t i = 0; i < ps.n_paths; ++i) {
    const double d = (spot ? ps.spot(i, t) : ps.variance(i, t)) - m;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= n - 1;
  m4 /= n;
  return {m, m2, std::sqrt(m2 / n), std::sqrt(std::max(m4 - m2 * m2, 0.0) / n)};
}

double cir_mean(const heston::HestonParams& p, double t) {
  return p.theta + (p.v0 - p.theta) * std::exp(-p.kappa * t);
}

double cir_var(const heston::HestonParams& p, double t) {
  const double e = std::exp(-p.kappa * t);
  return p.v0 * p.xi * p.xi * e * (1 - e) / p.kappa +
         p.theta * p.xi * p.xi * (1 - e) * (1 - e) / (2 * p.kappa);
}

}  // namespace

TEST_CASE("paths satisfy the grid invariants", "[heston]") {
  const auto ps = heston::simulate(paper_params(), 2000, 30, 1.0 / 365, 5);
  for (std::size_t i = 0; i < ps.n_paths; ++i) {
    CHECK(ps.spot(i, 0) == 1.0);
    CHECK(ps.variance(i, 0) == 0.00625);
  }
  CHECK(std::all_of(ps.spots.begin(), ps.spots.end(), [](double s) { return s > 0.0; }));
  CHECK(std::all_of(ps.variances.begin(), ps.variances.end(), [](double v) { return v >= 0.0; }));
}

TEST_CASE("stationary start keeps the variance mean", "[heston]") {
  const auto ps = heston::simulate(paper_params(), 20000, 30, 1.0 / 365, 17);
  for (std::size_t t : {5u, 15u, 30u}) {
    const auto m = column_moments(ps, t, false);
    CHECK(std::abs(m.mean - 0.00625) <= 3.0 * m.se_mean);
  }
}

TEST_CASE("spot is a martingale under zero drift", "[heston]") {
  const auto ps = heston::simulate(paper_params(), 20000, 30, 1.0 / 365, 23);
  const auto m = column_moments(ps, 30, true);
  CHECK(std::abs(m.mean - 1.0) <= 3.0 * m.se_mean);
}

TEST_CASE("CIR first and second moments from an off-equilibrium start", "[heston]") {
  auto p = paper_params();
  p.v0 = 2.0 * p.theta;
  const auto ps = heston::simulate(p, 20000, 10, 0.005, 29);
  const auto m = column_moments(ps, 10, false);
  CHECK(std::abs(m.mean - cir_mean(p, 0.05)) <= 3.0 * m.se_mean);
  CHECK(std::abs(m.var - cir_var(p, 0.05)) <= 3.0 * m.se_var);
}

TEST_CASE("identical seeds give identical paths regardless of threads", "[heston]") {
  const auto a = heston::simulate(paper_params(), 500, 30, 1.0 / 365, 99, 1, 1);
  const auto b = heston::simulate(paper_params(), 500, 30, 1.0 / 365, 99, 1, 4);
  CHECK(a.spots == b.spots);
  CHECK(a.variances == b.variances);
  const auto c = heston::simulate(paper_params(), 500, 30, 1.0 / 365, 100);
  CHECK(a.spots != c.spots);
}

TEST_CASE("path i does not depend on how many paths are drawn", "[heston]") {
  const auto small = heston::simulate(paper_params(), 10, 30, 1.0 / 365, 3);
  const auto large = heston::simulate(paper_params(), 100, 30, 1.0 / 365, 3);
  for (std::size_t t = 0; t <= 30; ++t) CHECK(small.spot(7, t) == large.spot(7, t));
}

TEST_CASE("invalid parameters are rejected", "[heston]") {
  auto p = paper_params();
  p.kappa = 0.0;
  CHECK_THROWS_AS(heston::simulate(p, 10, 10, 0.01, 1), ValidationError);
  p = paper_params();
  p.rho = -1.5;
  CHECK_THROWS_AS(heston::simulate(p, 10, 10, 0.01, 1), ValidationError);
  CHECK_THROWS_AS(heston::simulate(paper_params(), std::size_t{1} << 40, 30, 0.01, 1), ValidationError);
}

TEST_CASE("semi-analytic pricer reduces to Black-Scholes as xi -> 0", "[heston]") {
  auto p = paper_params();
  p.xi = 1e-6;
  for (double k : {0.9, 1.0, 1.1}) {
    for (double tau : {30.0 / 365, 0.5, 1.0}) {
      const double bs = bs::greeks({1.0, k, std::sqrt(p.theta), tau, 0.0, true}).price;
      CHECK(heston::call_price_cf(p, k, tau) == Approx(bs).margin(1e-4));
    }
  }
}

TEST_CASE("semi-analytic pricer: deep in the money and bounds", "[heston]") {
  const auto p = paper_params();
  CHECK(heston::call_price_cf(p, 0.01, 30.0 / 365) == Approx(0.99).margin(1e-4));
  double prev = 1.0;
  for (double k = 0.8; k <= 1.2; k += 0.05) {
    const double c = heston::call_price_cf(p, k, 30.0 / 365);
    CHECK(c >= std::max(1.0 - k, 0.0) - 1e-10);
    CHECK(c <= prev);
    prev = c;
  }
  CHECK_THROWS_AS(heston::call_price_cf(p, 1.0, 0.0), ValidationError);
}

TEST_CASE("semi-analytic pricer agrees with Monte Carlo", "[heston]") {
  const auto p = paper_params();
  const double tau = 30.0 / 365;
  const auto ps = heston::simulate(p, 100000, 30, tau / 30, 41);
  for (double k : {0.9, 1.0, 1.1}) {
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < ps.n_paths; ++i) {
      const double x = std::max(ps.spot(i, 30) - k, 0.0);
      sum += x;
      sum2 += x * x;
    }
    const double n = static_cast<double>(ps.n_paths);
    const double mean = sum / n;
    const double se = std::sqrt((sum2 / n - mean * mean) / n);
    CHECK(std::abs(mean - heston::call_price_cf(p, k, tau)) <= 3.0 * se);
  }
}

TEST_CASE("path cache round trip is byte exact", "[heston]") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "dhac_test_heston";
  fs::create_directories(dir);
  const auto ps = heston::simulate(paper_params(), 64, 30, 1.0 / 30, 12);
  heston::write_path_cache(ps, (dir / "a.bin").string());
  const auto back = heston::read_path_cache((dir / "a.bin").string());
  CHECK(back.params == ps.params);
  CHECK(back.spots == ps.spots);
  CHECK(back.variances == ps.variances);
  CHECK(back.dt == ps.dt);
  heston::write_path_cache(heston::simulate(paper_params(), 64, 30, 1.0 / 30, 12),
                           (dir / "b.bin").string());
  auto slurp = [](const fs::path& f) {
    std::ifstream is(f, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  std::ofstream(dir / "junk.bin") << "not a cache";
  CHECK_THROWS_AS(heston::read_path_cache((dir / "junk.bin").string()), IoError);
  fs::remove_all(dir);
}
