#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "dhac/bsmath.hpp"
#include "test_support.hpp"

using namespace dhac;
using Catch::Approx;

namespace {

// Expected terminal payoff of a call under the Black-Scholes law, by
// composite Simpson quadrature over the standard normal driver.
double call_by_quadrature(double s, double k, double sigma, double tau) {
  auto payoff = [&](double z) {
    const double st = s * std::exp(-0.5 * sigma * sigma * tau + sigma * std::sqrt(tau) * z);
    return std::max(st - k, 0.0) * bs::norm_pdf(z);
  };
  return testing::simpson(payoff, -12.0, 12.0, 200000);
}

}  // namespace

TEST_CASE("norm_cdf reference values", "[bsmath]") {
  CHECK(bs::norm_cdf(0.0) == 0.5);
  CHECK(bs::norm_cdf(8.0) >= 1.0 - 1e-14);
  CHECK(bs::norm_cdf(8.0) <= 1.0);
  const double oracle = 0.5 + testing::simpson([](double x) { return bs::norm_pdf(x); }, 0.0, 0.02867, 1000);
  CHECK(bs::norm_cdf(0.02867) == Approx(oracle).margin(1e-12));
  CHECK(bs::norm_cdf(0.02867) == Approx(0.511436).margin(1e-5));
}

TEST_CASE("norm_cdf is monotone and symmetric", "[bsmath]") {
  double prev = 0.0;
  for (double x = -10.0; x <= 10.0; x += 0.01) {
    const double p = bs::norm_cdf(x);
    CHECK(p >= prev);
    CHECK(p + bs::norm_cdf(-x) == Approx(1.0).margin(1e-15));
    prev = p;
  }
}

TEST_CASE("ATM call against quadrature oracle", "[bsmath]") {
  const double tau = 30.0 / 365.0;
  const auto g = bs::greeks({1.0, 1.0, 0.2, tau, 0.0, true});
  const double h = 1e-4;
  const double oracle_price = call_by_quadrature(1.0, 1.0, 0.2, tau);
  const double oracle_delta =
      (call_by_quadrature(1.0 + h, 1.0, 0.2, tau) - call_by_quadrature(1.0 - h, 1.0, 0.2, tau)) / (2 * h);
  CHECK(g.price == Approx(oracle_price).margin(1e-8));
  CHECK(g.delta == Approx(oracle_delta).margin(1e-6));
  CHECK(g.price == Approx(0.02287).margin(1e-4));
  CHECK(g.delta == Approx(0.51144).margin(1e-4));
}

TEST_CASE("expired options return intrinsic limits", "[bsmath]") {
  const auto itm = bs::greeks({1.2, 1.0, 0.2, 0.0, 0.0, true});
  CHECK(itm.price == Approx(0.2).margin(1e-15));
  CHECK(itm.delta == 1.0);
  CHECK(itm.gamma == 0.0);
  CHECK(itm.vega == 0.0);
  const auto otm = bs::greeks({0.8, 1.0, 0.2, 0.0, 0.0, true});
  CHECK(otm.price == 0.0);
  CHECK(otm.delta == 0.0);
  CHECK(bs::greeks({1.0, 1.0, 0.2, 0.0, 0.0, true}).delta == 0.5);
  CHECK(bs::greeks({0.8, 1.0, 0.2, 0.0, 0.0, false}).delta == -1.0);
  // vol is irrelevant once expired
  CHECK_NOTHROW(bs::greeks({1.0, 1.0, 0.0, 0.0, 0.0, true}));
}

TEST_CASE("invalid inputs are rejected", "[bsmath]") {
  CHECK_THROWS_AS(bs::greeks({0.0, 1.0, 0.2, 0.1, 0.0, true}), ValidationError);
  CHECK_THROWS_AS(bs::greeks({1.0, -1.0, 0.2, 0.1, 0.0, true}), ValidationError);
  CHECK_THROWS_AS(bs::greeks({1.0, 1.0, 0.0, 0.1, 0.0, true}), ValidationError);
  CHECK_THROWS_AS(bs::greeks({1.0, 1.0, 0.2, -0.1, 0.0, true}), ValidationError);
}

TEST_CASE("put-call parity and sign properties", "[bsmath]") {
  std::mt19937_64 eng(11);
  std::uniform_real_distribution<double> us(0.5, 1.5), uk(0.8, 1.2), uv(0.05, 0.6), ut(1.0 / 365, 1.0);
  for (int i = 0; i < 500; ++i) {
    const double s = us(eng), k = uk(eng), v = uv(eng), t = ut(eng);
    const auto c = bs::greeks({s, k, v, t, 0.0, true});
    const auto p = bs::greeks({s, k, v, t, 0.0, false});
    CHECK(c.price - p.price == Approx(s - k).margin(1e-13));
    CHECK(c.delta - p.delta == Approx(1.0).margin(1e-14));
    CHECK(c.gamma >= 0.0);
    CHECK(c.vega >= 0.0);
    CHECK(c.theta <= 0.0);
    CHECK(c.gamma == p.gamma);
    CHECK(c.vanna == p.vanna);
  }
}

TEST_CASE("Greeks match finite differences on a random grid", "[bsmath]") {
  std::mt19937_64 eng(7);
  std::uniform_real_distribution<double> us(0.5, 1.5), uk(0.8, 1.2), uv(0.05, 0.6), ut(1.0 / 365, 1.0);
  for (int i = 0; i < 300; ++i) {
    const bs::BsInputs in{us(eng), uk(eng), uv(eng), ut(eng), 0.0, (i % 2) == 0};
    const auto r = testing::greek_fd_errors(in);
    INFO("S=" << in.spot << " K=" << in.strike << " vol=" << in.vol << " tau=" << in.tau);
    CHECK(r.worst <= 1e-5);
  }
}

TEST_CASE("vanna is a symmetric mixed partial", "[bsmath]") {
  std::mt19937_64 eng(3);
  std::uniform_real_distribution<double> us(0.7, 1.3), uv(0.1, 0.5), ut(0.05, 1.0);
  for (int i = 0; i < 100; ++i) {
    bs::BsInputs in{us(eng), 1.0, uv(eng), ut(eng), 0.0, true};
    const double hs = 1e-5 * in.spot, hv = 1e-5 * in.vol;
    auto at = [&](double ds, double dv) {
      auto x = in;
      x.spot += ds;
      x.vol += dv;
      return bs::greeks(x);
    };
    const double d_delta_d_vol = (at(0, hv).delta - at(0, -hv).delta) / (2 * hv);
    const double d_vega_d_spot = (at(hs, 0).vega - at(-hs, 0).vega) / (2 * hs);
    const double vanna = bs::greeks(in).vanna;
    CHECK(d_delta_d_vol == Approx(vanna).margin(1e-4));
    CHECK(d_vega_d_spot == Approx(vanna).margin(1e-4));
  }
}

TEST_CASE("joint scaling of spot and strike", "[bsmath]") {
  for (double c : {0.5, 2.0, 10.0}) {
    const auto base = bs::greeks({1.05, 1.0, 0.25, 0.3, 0.0, true});
    const auto scaled = bs::greeks({1.05 * c, 1.0 * c, 0.25, 0.3, 0.0, true});
    CHECK(scaled.price == Approx(c * base.price).epsilon(1e-12));
    CHECK(scaled.delta == Approx(base.delta).epsilon(1e-12));
  }
}

TEST_CASE("Greek vectors are linear in position size", "[bsmath]") {
  const auto g = bs::greeks({1.0, 1.1, 0.3, 0.5, 0.0, true});
  const auto g3 = 3.0 * g;
  CHECK(g3.price == 3.0 * g.price);
  CHECK(g3.vomma == 3.0 * g.vomma);
  const auto sum = g + g + g;
  CHECK(sum.delta == Approx(g3.delta).epsilon(1e-15));
}
