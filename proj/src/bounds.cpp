// SPDX-License-Identifier: Apache-2.0
#include "bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dvnc {

void BoundParams::validate() const {
  if (!(delta > 0.0 && delta <= 1.0))
    fail(ErrorKind::config, "bounds: delta must be in (0,1]");
  if (samples < 1) fail(ErrorKind::config, "bounds: n must be >= 1");
  if (codebook_size < 1 || segments < 1 || message_dim < 1)
    fail(ErrorKind::config, "bounds: L, G, m must be >= 1");
  if (rho < 1) fail(ErrorKind::config, "bounds: rho must be a positive integer");
  if (loss_bound < 0.0 || loss_bound_cont < 0.0 || param_count < 0.0 ||
      lipschitz < 0.0 || lipschitz_cont < 0.0 || sensitivity < 0.0 ||
      repr_radius < 0.0)
    fail(ErrorKind::config, "bounds: parameters must be nonnegative");
}

namespace {

// ln(sum exp(terms)), terms given as natural logs; -inf entries are skipped.
double log_sum_exp(const std::vector<double>& log_terms) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double t : log_terms) mx = std::max(mx, t);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double t : log_terms)
    if (std::isfinite(t)) s += std::exp(t - mx);
  return mx + std::log(s);
}

const double kNegInf = -std::numeric_limits<double>::infinity();

double log_or_neg_inf(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

double lipschitz_term(double lipschitz, int64_t rho, int64_t n) {
  if (lipschitz == 0.0) return 0.0;
  return std::sqrt(std::pow(lipschitz, 2.0 / static_cast<double>(rho)) /
                   static_cast<double>(n));
}

}  // namespace

double log_radicand_discretized(const BoundParams& p) {
  const double log_l = std::log(static_cast<double>(p.codebook_size));
  return log_sum_exp({
      std::log(4.0) + static_cast<double>(p.segments) * log_l,
      log_or_neg_inf(2.0 * static_cast<double>(p.codebook_size) *
                     static_cast<double>(p.message_dim)),
      log_or_neg_inf(2.0 * p.param_count),
      log_or_neg_inf(2.0 * std::log(1.0 / p.delta)),
  });
}

double log_radicand_continuous(const BoundParams& p) {
  const double m = static_cast<double>(p.message_dim);
  return log_sum_exp({
      std::log(4.0) + m * std::log(4.0 * std::sqrt(m)),
      log_or_neg_inf(2.0 * p.param_count),
      log_or_neg_inf(2.0 * std::log(1.0 / p.delta)),
  });
}

BoundValue discretized_bound(const BoundParams& p) {
  p.validate();
  BoundValue out;
  // Flag when L^G itself exceeds the 64-bit float range.
  const double log_lg =
      static_cast<double>(p.segments) * std::log(static_cast<double>(p.codebook_size));
  if (log_lg > std::log(std::numeric_limits<double>::max())) {
    out.value = std::numeric_limits<double>::infinity();
    out.overflow = true;
    return out;
  }
  const double log_rad = log_radicand_discretized(p);
  const double sqrt_part =
      std::exp(0.5 * (log_rad - std::log(static_cast<double>(p.samples))));
  out.value = p.loss_bound * sqrt_part + lipschitz_term(p.lipschitz, p.rho, p.samples);
  return out;
}

double continuous_bound(const BoundParams& p) {
  p.validate();
  const double log_rad = log_radicand_continuous(p);
  const double sqrt_part =
      std::exp(0.5 * (log_rad - std::log(static_cast<double>(p.samples))));
  return p.loss_bound_cont * sqrt_part +
         lipschitz_term(p.lipschitz_cont, p.rho, p.samples) +
         p.sensitivity * p.repr_radius;
}

BoundComparison bound_comparison(const BoundParams& p) {
  p.validate();
  BoundComparison out;
  BoundValue with = discretized_bound(p);
  out.with_discretization = with.value;
  out.with_overflow = with.overflow;
  out.without_discretization = continuous_bound(p);
  out.ratio_log10 =
      (log_radicand_continuous(p) - log_radicand_discretized(p)) / std::log(10.0);
  return out;
}

// ---- concentration check ---------------------------------------------------

Sampler gaussian_sampler(double mean, double stddev) {
  return [mean, stddev](Rng& rng, std::vector<double>& out) {
    for (double& x : out) x = rng.gaussian(mean, stddev);
  };
}

Sampler uniform_sampler(double lo, double hi) {
  return [lo, hi](Rng& rng, std::vector<double>& out) {
    for (double& x : out) x = rng.uniform(lo, hi);
  };
}

Sampler point_mass_sampler(std::vector<double> value) {
  return [value = std::move(value)](Rng&, std::vector<double>& out) {
    if (out.size() != value.size())
      fail(ErrorKind::dimension, "point_mass sampler: dimension mismatch");
    std::copy(value.begin(), value.end(), out.begin());
  };
}

Sampler two_point_sampler(std::vector<double> a, std::vector<double> b, double prob_a) {
  if (!(prob_a >= 0.0 && prob_a <= 1.0))
    fail(ErrorKind::config, "two_point sampler: prob_a must be in [0,1]");
  return [a = std::move(a), b = std::move(b), prob_a](Rng& rng,
                                                      std::vector<double>& out) {
    const auto& src = rng.next_double() < prob_a ? a : b;
    if (out.size() != src.size())
      fail(ErrorKind::dimension, "two_point sampler: dimension mismatch");
    std::copy(src.begin(), src.end(), out.begin());
  };
}

void ConcentrationSpec::validate() const {
  if (codebook_size < 1 || segments < 1 || dim < 1)
    fail(ErrorKind::config, "concentration: L, G, dim must be >= 1");
  if (samples < 1) fail(ErrorKind::config, "concentration: n must be >= 1");
  if (trials < 1) fail(ErrorKind::config, "concentration: trials must be >= 1");
  if (!(delta > 0.0 && delta < 1.0))
    fail(ErrorKind::config, "concentration: delta must be in (0,1)");
  if (reference_samples < 1)
    fail(ErrorKind::config, "concentration: reference_samples must be >= 1");
  const int64_t k = combos();
  if (!(phi_bound.size() == 1 || phi_bound.size() == static_cast<size_t>(k)))
    fail(ErrorKind::config, "concentration: phi_bound must have 1 or L^G entries");
}

int64_t ConcentrationSpec::combos() const {
  // Enumeration is refused past 10^4 combinations.
  int64_t k = 1;
  for (int64_t g = 0; g < segments; ++g) {
    k *= codebook_size;
    if (k > 10000)
      fail(ErrorKind::config,
           "concentration: L^G exceeds 10^4, enumeration refused");
  }
  return k;
}

namespace {

int64_t combo_index(const std::vector<int64_t>& codes, int64_t codebook_size) {
  int64_t k = 0;
  for (int64_t c : codes) k = k * codebook_size + c;
  return k;
}

}  // namespace

ConcentrationReport concentration_check(const ConcentrationSpec& spec,
                                        const Codebook& cb, const Sampler& sampler) {
  spec.validate();
  if (cb.size != spec.codebook_size || cb.dim != spec.dim)
    fail(ErrorKind::dimension, "concentration: codebook does not match spec");
  const int64_t n_combo = spec.combos();

  auto phi_of = [&](int64_t k) {
    return spec.phi_bound.size() == 1 ? spec.phi_bound[0]
                                      : spec.phi_bound[static_cast<size_t>(k)];
  };

  ConcentrationReport rep;
  rep.combos = n_combo;
  rep.trials = spec.trials;
  rep.bound.resize(static_cast<size_t>(n_combo));
  const double hoeffding =
      std::sqrt((static_cast<double>(spec.segments) *
                     std::log(static_cast<double>(spec.codebook_size)) +
                 std::log(2.0 / spec.delta)) /
                (2.0 * static_cast<double>(spec.samples)));
  for (int64_t k = 0; k < n_combo; ++k)
    rep.bound[static_cast<size_t>(k)] = std::abs(phi_of(k)) * hoeffding;

  std::vector<double> draw(static_cast<size_t>(spec.segments * spec.dim));

  // Population term, estimated once from an independent reference draw.
  std::vector<double> ref_prob(static_cast<size_t>(n_combo), 0.0);
  {
    Rng rng(Rng::derive(spec.seed, 0));
    std::vector<int64_t> counts(static_cast<size_t>(n_combo), 0);
    for (int64_t i = 0; i < spec.reference_samples; ++i) {
      sampler(rng, draw);
      counts[static_cast<size_t>(
          combo_index(nearest_codes(draw, cb, spec.segments), cb.size))]++;
    }
    for (int64_t k = 0; k < n_combo; ++k)
      ref_prob[static_cast<size_t>(k)] = static_cast<double>(counts[static_cast<size_t>(k)]) /
                                         static_cast<double>(spec.reference_samples);
  }
  rep.population.resize(static_cast<size_t>(n_combo));
  for (int64_t k = 0; k < n_combo; ++k)
    rep.population[static_cast<size_t>(k)] = phi_of(k) * ref_prob[static_cast<size_t>(k)];

  rep.per_k_violation.assign(static_cast<size_t>(n_combo), 0.0);
  int64_t any_violations = 0;
  std::vector<int64_t> counts(static_cast<size_t>(n_combo));
  for (int64_t trial = 0; trial < spec.trials; ++trial) {
    Rng rng(Rng::derive(spec.seed, static_cast<uint64_t>(trial) + 1));
    std::fill(counts.begin(), counts.end(), 0);
    for (int64_t i = 0; i < spec.samples; ++i) {
      sampler(rng, draw);
      counts[static_cast<size_t>(
          combo_index(nearest_codes(draw, cb, spec.segments), cb.size))]++;
    }
    bool any = false;
    for (int64_t k = 0; k < n_combo; ++k) {
      const double empirical = phi_of(k) *
                               static_cast<double>(counts[static_cast<size_t>(k)]) /
                               static_cast<double>(spec.samples);
      const double deviation = std::abs(rep.population[static_cast<size_t>(k)] - empirical);
      if (deviation > rep.bound[static_cast<size_t>(k)]) {
        rep.per_k_violation[static_cast<size_t>(k)] += 1.0;
        any = true;
      }
    }
    if (any) any_violations++;
  }
  for (double& v : rep.per_k_violation) v /= static_cast<double>(spec.trials);
  rep.violation_rate =
      static_cast<double>(any_violations) / static_cast<double>(spec.trials);
  return rep;
}

}  // namespace dvnc
