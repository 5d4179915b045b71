// SPDX-License-Identifier: Apache-2.0
#include "bounds.hpp"

#include <cmath>

#include <mpfr.h>

#include "doctest.h"
#include "rng.hpp"

using namespace dvnc;

namespace {

// 256-bit evaluation of the with-discretization bound.
double mpfr_discretized(const BoundParams& p) {
  mpfr_t acc, t;
  mpfr_inits2(256, acc, t, (mpfr_ptr)nullptr);

  // 4 L^G
  mpfr_set_ui(acc, static_cast<unsigned long>(p.codebook_size), MPFR_RNDN);
  mpfr_pow_ui(acc, acc, static_cast<unsigned long>(p.segments), MPFR_RNDN);
  mpfr_mul_ui(acc, acc, 4, MPFR_RNDN);
  // + 2 L m
  mpfr_set_ui(t, static_cast<unsigned long>(2 * p.codebook_size * p.message_dim),
              MPFR_RNDN);
  mpfr_add(acc, acc, t, MPFR_RNDN);
  // + 2 zeta
  mpfr_set_d(t, 2.0 * p.param_count, MPFR_RNDN);
  mpfr_add(acc, acc, t, MPFR_RNDN);
  // + 2 ln(1/delta)
  mpfr_set_d(t, 1.0 / p.delta, MPFR_RNDN);
  mpfr_log(t, t, MPFR_RNDN);
  mpfr_mul_ui(t, t, 2, MPFR_RNDN);
  mpfr_add(acc, acc, t, MPFR_RNDN);
  // sqrt(acc / n) * C_J
  mpfr_div_ui(acc, acc, static_cast<unsigned long>(p.samples), MPFR_RNDN);
  mpfr_sqrt(acc, acc, MPFR_RNDN);
  mpfr_mul_d(acc, acc, p.loss_bound, MPFR_RNDN);
  // + sqrt(L_d^(2/rho) / n)
  if (p.lipschitz > 0.0) {
    mpfr_set_d(t, p.lipschitz, MPFR_RNDN);
    mpfr_t expo;
    mpfr_init2(expo, 256);
    mpfr_set_d(expo, 2.0 / static_cast<double>(p.rho), MPFR_RNDN);
    mpfr_pow(t, t, expo, MPFR_RNDN);
    mpfr_div_ui(t, t, static_cast<unsigned long>(p.samples), MPFR_RNDN);
    mpfr_sqrt(t, t, MPFR_RNDN);
    mpfr_add(acc, acc, t, MPFR_RNDN);
    mpfr_clear(expo);
  }
  const double out = mpfr_get_d(acc, MPFR_RNDN);
  mpfr_clears(acc, t, (mpfr_ptr)nullptr);
  return out;
}

// 256-bit (4 sqrt(m))^m
double mpfr_complexity_continuous(int64_t m) {
  mpfr_t t;
  mpfr_init2(t, 256);
  mpfr_set_ui(t, static_cast<unsigned long>(m), MPFR_RNDN);
  mpfr_sqrt(t, t, MPFR_RNDN);
  mpfr_mul_ui(t, t, 4, MPFR_RNDN);
  mpfr_pow_ui(t, t, static_cast<unsigned long>(m), MPFR_RNDN);
  const double out = mpfr_get_d(t, MPFR_RNDN);
  mpfr_clear(t);
  return out;
}

// 256-bit log10 of radicand ratio (without / with)
double mpfr_ratio_log10(const BoundParams& p) {
  mpfr_t with, without, t;
  mpfr_inits2(256, with, without, t, (mpfr_ptr)nullptr);

  mpfr_set_ui(with, static_cast<unsigned long>(p.codebook_size), MPFR_RNDN);
  mpfr_pow_ui(with, with, static_cast<unsigned long>(p.segments), MPFR_RNDN);
  mpfr_mul_ui(with, with, 4, MPFR_RNDN);
  mpfr_add_ui(with, with,
              static_cast<unsigned long>(2 * p.codebook_size * p.message_dim),
              MPFR_RNDN);
  mpfr_set_d(t, 2.0 * p.param_count, MPFR_RNDN);
  mpfr_add(with, with, t, MPFR_RNDN);
  mpfr_set_d(t, 1.0 / p.delta, MPFR_RNDN);
  mpfr_log(t, t, MPFR_RNDN);
  mpfr_mul_ui(t, t, 2, MPFR_RNDN);
  mpfr_add(with, with, t, MPFR_RNDN);

  mpfr_set_ui(without, static_cast<unsigned long>(p.message_dim), MPFR_RNDN);
  mpfr_sqrt(without, without, MPFR_RNDN);
  mpfr_mul_ui(without, without, 4, MPFR_RNDN);
  mpfr_pow_ui(without, without, static_cast<unsigned long>(p.message_dim), MPFR_RNDN);
  mpfr_mul_ui(without, without, 4, MPFR_RNDN);
  mpfr_set_d(t, 2.0 * p.param_count, MPFR_RNDN);
  mpfr_add(without, without, t, MPFR_RNDN);
  mpfr_set_d(t, 1.0 / p.delta, MPFR_RNDN);
  mpfr_log(t, t, MPFR_RNDN);
  mpfr_mul_ui(t, t, 2, MPFR_RNDN);
  mpfr_add(without, without, t, MPFR_RNDN);

  mpfr_div(t, without, with, MPFR_RNDN);
  mpfr_log10(t, t, MPFR_RNDN);
  const double out = mpfr_get_d(t, MPFR_RNDN);
  mpfr_clears(with, without, t, (mpfr_ptr)nullptr);
  return out;
}

double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

}  // namespace

TEST_CASE("discretized bound: direct arithmetic example") {
  BoundParams p;
  p.loss_bound = 1.0;
  p.codebook_size = 2;
  p.segments = 1;
  p.message_dim = 2;
  p.param_count = 0.0;
  p.delta = 1.0;  // ln term vanishes
  p.lipschitz = 0.0;
  p.samples = 16;
  BoundValue v = discretized_bound(p);
  // (4*2 + 2*2*2) / 16 = 1
  CHECK(v.value == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_FALSE(v.overflow);

  p.loss_bound = 0.0;
  CHECK(discretized_bound(p).value == 0.0);
}

TEST_CASE("continuous bound: m = 1 and zero cases") {
  BoundParams p;
  p.message_dim = 1;
  p.param_count = 3.0;
  p.delta = 0.5;
  p.samples = 4;
  p.loss_bound_cont = 1.0;
  // radicand = (4*(4*1)^1 + 2*3 + 2 ln 2) / 4
  const double want = std::sqrt((16.0 + 6.0 + 2.0 * std::log(2.0)) / 4.0);
  CHECK(continuous_bound(p) == doctest::Approx(want).epsilon(1e-14));

  BoundParams z;
  z.loss_bound_cont = 0.0;
  z.lipschitz_cont = 0.0;
  z.sensitivity = 0.0;
  z.samples = 10;
  CHECK(continuous_bound(z) == 0.0);
}

TEST_CASE("discretized bound matches the arbitrary-precision oracle") {
  BoundParams p;
  p.loss_bound = 1.0;
  p.codebook_size = 64;
  p.segments = 4;
  p.message_dim = 16;
  p.param_count = 100.0;
  p.delta = 0.05;
  p.lipschitz = 1.0;
  p.rho = 1;
  p.samples = 10000;
  const double got = discretized_bound(p).value;
  const double want = mpfr_discretized(p);
  CHECK(rel_diff(got, want) < 1e-12);
}

TEST_CASE("log-space (4 sqrt(m))^m agrees with MPFR to 12 digits up to m = 64") {
  for (int64_t m = 1; m <= 64; ++m) {
    BoundParams p;
    p.message_dim = m;
    p.param_count = 0.0;
    p.delta = 1.0;
    p.samples = 1;
    // radicand reduces to 4 (4 sqrt(m))^m
    const double got = std::exp(log_radicand_continuous(p)) / 4.0;
    const double want = mpfr_complexity_continuous(m);
    CHECK(rel_diff(got, want) < 1e-12);
  }
}

TEST_CASE("bound comparison: the worked ratio and the tiny-m case") {
  BoundParams p;
  p.codebook_size = 64;
  p.segments = 4;
  p.message_dim = 16;
  p.param_count = 0.0;
  p.delta = 1.0;
  p.samples = 100;
  BoundComparison cmp = bound_comparison(p);
  CHECK(cmp.ratio_log10 == doctest::Approx(12.0412).epsilon(1e-3));
  CHECK(rel_diff(cmp.ratio_log10, mpfr_ratio_log10(p)) < 1e-12);

  // m = 1, L = 1, G = 1: no ordering asserted, values reported faithfully
  BoundParams tiny;
  tiny.codebook_size = 1;
  tiny.segments = 1;
  tiny.message_dim = 1;
  tiny.param_count = 0.0;
  tiny.delta = 1.0;
  tiny.samples = 1;
  BoundComparison tc = bound_comparison(tiny);
  // with radicand 4+2=6, without 16
  CHECK(std::exp(log_radicand_discretized(tiny)) == doctest::Approx(6.0));
  CHECK(std::exp(log_radicand_continuous(tiny)) == doctest::Approx(16.0));
  CHECK(tc.ratio_log10 == doctest::Approx(std::log10(16.0 / 6.0)).epsilon(1e-12));
}

TEST_CASE("bound comparison: delta contributions cancel in the radicand gap") {
  BoundParams a;
  a.codebook_size = 4;
  a.segments = 2;
  a.message_dim = 8;
  a.param_count = 10.0;
  a.samples = 50;
  BoundParams b = a;
  a.delta = 0.05;
  b.delta = 0.5;
  const double gap_a = std::exp(log_radicand_continuous(a)) -
                       std::exp(log_radicand_discretized(a));
  const double gap_b = std::exp(log_radicand_continuous(b)) -
                       std::exp(log_radicand_discretized(b));
  CHECK(gap_a == doctest::Approx(gap_b).epsilon(1e-9));
}

TEST_CASE("bounds are monotone in n, loss bounds, and Lipschitz constants") {
  Rng rng(606);
  for (int trial = 0; trial < 50; ++trial) {
    BoundParams p;
    p.loss_bound = rng.uniform(0.1, 5.0);
    p.loss_bound_cont = rng.uniform(0.1, 5.0);
    p.codebook_size = 1 + static_cast<int64_t>(rng.below(32));
    p.segments = 1 + static_cast<int64_t>(rng.below(4));
    p.message_dim = 1 + static_cast<int64_t>(rng.below(24));
    p.param_count = rng.uniform(0.0, 500.0);
    p.delta = rng.uniform(0.01, 0.99);
    p.samples = 1 + static_cast<int64_t>(rng.below(100000));
    p.lipschitz = rng.uniform(0.0, 10.0);
    p.lipschitz_cont = rng.uniform(0.0, 10.0);
    p.rho = 1 + static_cast<int64_t>(rng.below(4));
    p.sensitivity = rng.uniform(0.0, 2.0);
    p.repr_radius = rng.uniform(0.0, 2.0);

    BoundParams more_n = p;
    more_n.samples = p.samples * 4;
    CHECK(discretized_bound(more_n).value <= discretized_bound(p).value + 1e-12);
    CHECK(continuous_bound(more_n) <= continuous_bound(p) + 1e-12);

    BoundParams more_c = p;
    more_c.loss_bound = p.loss_bound * 1.5;
    more_c.loss_bound_cont = p.loss_bound_cont * 1.5;
    CHECK(discretized_bound(more_c).value >= discretized_bound(p).value - 1e-12);
    CHECK(continuous_bound(more_c) >= continuous_bound(p) - 1e-12);

    BoundParams more_l = p;
    more_l.lipschitz = p.lipschitz + 1.0;
    more_l.lipschitz_cont = p.lipschitz_cont + 1.0;
    CHECK(discretized_bound(more_l).value >= discretized_bound(p).value - 1e-12);
    CHECK(continuous_bound(more_l) >= continuous_bound(p) - 1e-12);
  }
}

TEST_CASE("radicand separation for m >= 8 under the desk-scale caps") {
  // Holds across the full caps L*m <= 1e4, L^G <= 1e8 once m >= 8; the
  // without-discretization complexity grows like (4 sqrt(m))^m.
  Rng rng(909);
  auto check_one = [](int64_t L, int64_t G, int64_t m, double zeta, double delta) {
    BoundParams p;
    p.codebook_size = L;
    p.segments = G;
    p.message_dim = m;
    p.param_count = zeta;
    p.delta = delta;
    p.samples = 100;
    CHECK(log_radicand_discretized(p) < log_radicand_continuous(p));
  };
  // worst corner: smallest m, largest allowed L^G and L*m
  check_one(1250, 1, 8, 0.0, 1.0);
  check_one(10, 8, 8, 1000.0, 0.05);
  check_one(100, 4, 8, 0.0, 0.5);
  for (int trial = 0; trial < 200; ++trial) {
    const int64_t m = 8 + static_cast<int64_t>(rng.below(57));
    const int64_t max_l = std::min<int64_t>(10000 / m, 100);
    const int64_t L = 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(max_l)));
    int64_t G = 1 + static_cast<int64_t>(rng.below(4));
    while (std::pow(static_cast<double>(L), static_cast<double>(G)) > 1e8) --G;
    check_one(L, G, m, rng.uniform(0.0, 200.0), rng.uniform(0.05, 1.0));
  }
}

TEST_CASE("discretized bound flags L^G overflow") {
  BoundParams p;
  p.codebook_size = 10;
  p.segments = 400;  // 10^400 overflows a double
  p.message_dim = 4;
  p.samples = 100;
  BoundValue v = discretized_bound(p);
  CHECK(v.overflow);
  CHECK(std::isinf(v.value));
  // the log-space comparison still reports a finite ratio
  BoundComparison cmp = bound_comparison(p);
  CHECK(std::isfinite(cmp.ratio_log10));
}

TEST_CASE("concentration: point mass has zero violations") {
  ConcentrationSpec spec;
  spec.codebook_size = 2;
  spec.segments = 1;
  spec.dim = 1;
  spec.samples = 50;
  spec.trials = 200;
  spec.delta = 0.05;
  spec.phi_bound = {1.0};
  spec.seed = 4;
  spec.reference_samples = 10000;
  Codebook cb = Codebook::create(2, 1, {-1.0, 1.0});
  ConcentrationReport rep =
      concentration_check(spec, cb, point_mass_sampler({0.9}));
  CHECK(rep.violation_rate == 0.0);
  CHECK(rep.population[1] == doctest::Approx(1.0));
  CHECK(rep.population[0] == 0.0);
}

TEST_CASE("concentration: phi == 0 gives zero bound and zero deviation") {
  ConcentrationSpec spec;
  spec.codebook_size = 2;
  spec.segments = 1;
  spec.dim = 1;
  spec.samples = 50;
  spec.trials = 100;
  spec.delta = 0.05;
  spec.phi_bound = {0.0};
  spec.seed = 8;
  spec.reference_samples = 5000;
  Codebook cb = Codebook::create(2, 1, {-1.0, 1.0});
  ConcentrationReport rep = concentration_check(spec, cb, gaussian_sampler(0.0, 1.0));
  CHECK(rep.violation_rate == 0.0);
  for (double b : rep.bound) CHECK(b == 0.0);
  for (double q : rep.population) CHECK(q == 0.0);
}

TEST_CASE("concentration: symmetric two-point distribution stays within delta") {
  ConcentrationSpec spec;
  spec.codebook_size = 2;
  spec.segments = 1;
  spec.dim = 1;
  spec.samples = 100;
  spec.trials = 1000;
  spec.delta = 0.05;
  spec.phi_bound = {1.0};
  spec.seed = 21;
  Codebook cb = Codebook::create(2, 1, {-1.0, 1.0});
  ConcentrationReport rep =
      concentration_check(spec, cb, two_point_sampler({-1.0}, {1.0}, 0.5));
  CHECK(rep.violation_rate <= 0.05);  // Hoeffding is conservative
}

TEST_CASE("concentration: enumeration refuses L^G beyond 10^4") {
  ConcentrationSpec spec;
  spec.codebook_size = 11;
  spec.segments = 4;  // 14641 combos
  spec.dim = 1;
  spec.phi_bound = {1.0};
  Codebook cb = Codebook::random_init(11, 1, 3);
  CHECK_THROWS_AS(concentration_check(spec, cb, gaussian_sampler(0, 1)), Error);
}
