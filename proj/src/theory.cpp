#include "ddspseg/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ddspseg::theory {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_length(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> uniform_vector(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Random point on the simplex; roughly one entry in eight is zeroed so the
/// support-mismatch regime is exercised too.
std::vector<double> simplex_vector(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution zero(0.125);
  std::vector<double> v(n);
  double sum = 0.0;
  for (auto& x : v) {
    x = zero(rng) ? 0.0 : e(rng);
    sum += x;
  }
  if (sum == 0.0) {
    v[0] = 1.0;
    return v;
  }
  for (auto& x : v) x /= sum;
  return v;
}

std::size_t random_length(std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(2, 64)(rng);
}

/// Keeps the largest-violation witness (or the first instance if none failed).
void record(SubCheck& c, bool ok, double violation, Witness w) {
  ++c.trials;
  if (!ok) {
    ++c.failures;
    if (c.failures == 1 || violation > c.worst_violation) {
      c.worst_violation = violation;
      c.witness = std::move(w);
    }
  } else if (!c.witness) {
    c.witness = std::move(w);
  }
}

void finalize(TheoremReport& r) {
  r.failures = 0;
  for (const auto& c : r.checks) r.failures += c.failures;
}

double rel_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

}  // namespace

DistributionPair::DistributionPair(std::vector<double> p, std::vector<double> q) : p_(std::move(p)), q_(std::move(q)) {
  require_same_length(p_, q_);
  for (std::size_t i = 0; i < p_.size(); ++i) {
    if (!(p_[i] >= 0.0) || !(q_[i] >= 0.0)) throw std::invalid_argument("distribution entries must be non-negative");
  }
  const double sp = std::accumulate(p_.begin(), p_.end(), 0.0);
  const double sq = std::accumulate(q_.begin(), q_.end(), 0.0);
  normalized_ = std::abs(sp - 1.0) <= 1e-9 && std::abs(sq - 1.0) <= 1e-9;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require_same_length(p, q);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return kInf;
    sum += p[i] * std::log(p[i] / q[i]);
  }
  return sum;
}

double kl_divergence(const DistributionPair& pair) { return kl_divergence(pair.p(), pair.q()); }

double tv_distance(std::span<const double> p, std::span<const double> q) {
  require_same_length(p, q);
  double m = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) m = std::max(m, std::abs(p[i] - q[i]));
  return m;
}

double tv_distance(const DistributionPair& pair) { return tv_distance(pair.p(), pair.q()); }

const SubCheck* TheoremReport::find(std::string_view name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

TheoremReport check_theorem1(std::size_t trials, std::uint64_t seed) {
  TheoremReport r;
  r.theorem = "1";
  r.trials = trials;
  r.notes.push_back(
      "pairs are constructed with q_i = 0 wherever p_i = 1; pointwise inequality alone does not force an infinite "
      "divergence");

  std::mt19937_64 rng(seed);
  SubCheck inf;
  inf.name = "kl_infinite_on_support_mismatch";
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = random_length(rng);
    std::vector<double> p(n, 0.0);
    std::bernoulli_distribution coin(0.3);
    for (auto& x : p) x = coin(rng) ? 1.0 : 0.0;
    p[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;
    auto q = uniform_vector(rng, n);
    for (std::size_t i = 0; i < n; ++i) {
      if (p[i] == 1.0) q[i] = 0.0;
    }
    const double kl = kl_divergence(p, q);
    const bool ok = std::isinf(kl) && kl > 0;
    record(inf, ok, ok ? 0.0 : 1.0, Witness{"KL(p||q)", p, q, kl, kInf});
  }
  r.checks.push_back(std::move(inf));

  // Asymmetry: a fixed witness, then random normalized pairs until one differs.
  SubCheck asym;
  asym.name = "kl_asymmetry_witness";
  {
    std::vector<double> p{0.8, 0.2}, q{0.5, 0.5};
    const double fwd = kl_divergence(p, q);
    const double bwd = kl_divergence(q, p);
    asym.trials = 1;
    asym.witness = Witness{"KL(p||q) vs KL(q||p)", p, q, fwd, bwd};
    if (fwd == bwd) {
      bool found = false;
      for (int k = 0; k < 1000 && !found; ++k) {
        const std::size_t n = random_length(rng);
        auto a = simplex_vector(rng, n);
        auto b = simplex_vector(rng, n);
        const double f = kl_divergence(a, b), g = kl_divergence(b, a);
        if (std::isfinite(f) && std::isfinite(g) && std::abs(f - g) > 1e-6) {
          asym.witness = Witness{"KL(p||q) vs KL(q||p)", a, b, f, g};
          found = true;
        }
      }
      if (!found) asym.failures = 1;
    }
  }
  r.checks.push_back(std::move(asym));
  finalize(r);
  return r;
}

LinearSigmoidGenerator::LinearSigmoidGenerator(std::size_t outputs, std::size_t latent, std::uint64_t seed)
    : outputs_(outputs), latent_(latent) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  z_.resize(latent_);
  for (auto& x : z_) x = n(rng);
}

std::vector<double> LinearSigmoidGenerator::forward(std::span<const double> theta) const {
  if (theta.size() != parameter_count()) throw std::invalid_argument("theta has wrong length");
  std::vector<double> out(outputs_);
  for (std::size_t i = 0; i < outputs_; ++i) {
    double a = theta[outputs_ * latent_ + i];
    for (std::size_t j = 0; j < latent_; ++j) a += theta[i * latent_ + j] * z_[j];
    out[i] = sigmoid(a);
  }
  return out;
}

std::vector<double> LinearSigmoidGenerator::vjp(std::span<const double> theta, std::span<const double> dl_dp) const {
  auto p = forward(theta);
  std::vector<double> g(parameter_count(), 0.0);
  for (std::size_t i = 0; i < outputs_; ++i) {
    const double da = dl_dp[i] * p[i] * (1.0 - p[i]);
    for (std::size_t j = 0; j < latent_; ++j) g[i * latent_ + j] = da * z_[j];
    g[outputs_ * latent_ + i] = da;
  }
  return g;
}

TheoremReport check_theorem2_continuity(const DifferentiableGenerator& gen, loss::Kind kind, std::size_t trials,
                                        std::uint64_t seed, const ContinuityProbe& probe) {
  if (kind != loss::Kind::dsc && kind != loss::Kind::jaccard) {
    throw std::invalid_argument("continuity probe covers the dice and jaccard losses");
  }
  TheoremReport r;
  r.theorem = std::string("2/") + loss::to_string(kind);
  r.trials = trials;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t m = gen.parameter_count();
  const std::size_t n = gen.output_size();

  auto loss_at = [&](std::span<const double> gt, std::span<const double> theta) {
    return loss::evaluate(kind, gen.forward(theta), gt).value;
  };

  SubCheck zero;
  zero.name = "zero_perturbation";
  SubCheck shrink;
  shrink.name = "loss_change_shrinks";
  SubCheck deriv;
  deriv.name = "directional_derivative";

  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> theta(m), dir(m), gt(n);
    for (auto& x : theta) x = normal(rng);
    double norm = 0.0;
    for (auto& x : dir) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : dir) x /= norm;
    std::bernoulli_distribution coin(0.5);
    for (auto& g : gt) g = coin(rng) ? 1.0 : 0.0;
    gt[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;

    const auto base_pred = gen.forward(theta);
    const double base = loss::evaluate(kind, base_pred, gt).value;

    {
      const double again = loss_at(gt, theta);
      const double diff = std::abs(again - base);
      record(zero, diff == 0.0, diff, Witness{"|L(theta+0) - L(theta)|", theta, gt, diff, 0.0});
    }

    // Loss changes along halving steps must shrink in proportion to the
    // step: |dL| / eps stays bounded. Monotone |dL| is too strict, since
    // a*eps + b*eps^2 crosses zero at eps = -a/b for smooth losses too. A jump
    // of size J would instead make |dL| / eps double with every halving.
    std::vector<double> deltas, quotients;
    std::vector<double> shifted(m);
    for (int k = 0; k <= probe.halvings; ++k) {
      const double eps = probe.base_step / std::ldexp(1.0, k);
      for (std::size_t j = 0; j < m; ++j) shifted[j] = theta[j] + eps * dir[j];
      deltas.push_back(std::abs(loss_at(gt, shifted) - base));
      quotients.push_back(deltas.back() / eps);
    }
    const std::size_t half = quotients.size() / 2;
    const double coarse = *std::max_element(quotients.begin(), quotients.begin() + half);
    const double fine = *std::max_element(quotients.begin() + half, quotients.end());
    const double floor = 1e-12 / (probe.base_step / std::ldexp(1.0, probe.halvings));
    const double worst = fine - (2.0 * coarse + floor);
    record(shrink, worst <= 0.0, worst, Witness{"halving-step loss deltas", theta, deltas, fine, 2.0 * coarse + floor});

    // Central difference at the finest scale vs the analytic chain rule.
    const double eps = probe.base_step / std::ldexp(1.0, probe.halvings);
    std::vector<double> plus(m), minus(m);
    for (std::size_t j = 0; j < m; ++j) {
      plus[j] = theta[j] + eps * dir[j];
      minus[j] = theta[j] - eps * dir[j];
    }
    const double fd = (loss_at(gt, plus) - loss_at(gt, minus)) / (2.0 * eps);
    const auto dl_dp = loss::evaluate(kind, base_pred, gt).grad;
    const auto g = gen.vjp(theta, dl_dp);
    double analytic = 0.0;
    for (std::size_t j = 0; j < m; ++j) analytic += g[j] * dir[j];
    const double err = rel_error(fd, analytic);
    record(deriv, err <= probe.rel_tolerance, err - probe.rel_tolerance,
           Witness{"finite difference vs analytic directional derivative", theta, dir, fd, analytic});
  }

  r.checks.push_back(std::move(zero));
  r.checks.push_back(std::move(shrink));
  r.checks.push_back(std::move(deriv));
  finalize(r);
  return r;
}

std::vector<double> upper_envelope(std::span<const double> values) {
  std::vector<double> e(values.begin(), values.end());
  for (std::size_t i = e.size(); i-- > 1;) e[i - 1] = std::max(e[i - 1], e[i]);
  return e;
}

double loglog_slope(std::span<const double> values) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double count = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0)) continue;
    const double x = std::log(static_cast<double>(i + 1));
    const double y = std::log(values[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    count += 1;
  }
  if (count < 2) return 0.0;
  const double den = count * sxx - sx * sx;
  return den == 0.0 ? 0.0 : (count * sxy - sx * sy) / den;
}

TheoremReport check_theorem3_ordering(std::size_t trials, std::uint64_t seed) {
  TheoremReport r;
  r.theorem = "3";
  r.trials = trials;
  r.notes.push_back("statement 1 is the base of the implication chain and has no check of its own");
  r.notes.push_back("pinsker is checked on normalized pairs only; the sup distance is bounded by half the l1 norm there");

  std::mt19937_64 rng(seed);
  SubCheck order;
  order.name = "dsc_le_jaccard_le_2dsc";
  SubCheck identity;
  identity.name = "jaccard_dice_identity";
  SubCheck sequence;
  sequence.name = "dsc_converges_under_sup_distance";
  SubCheck pinsker;
  pinsker.name = "pinsker";

  for (std::size_t t = 0; t < trials; ++t) {
    // (a) ordering on arbitrary pairs in [0,1]^N; every fourth reference is binary.
    {
      const std::size_t n = random_length(rng);
      auto p = uniform_vector(rng, n);
      auto q = uniform_vector(rng, n);
      if (t % 4 == 0) {
        for (auto& x : q) x = x < 0.3 ? 1.0 : 0.0;
      }
      const double d = loss::dsc_loss(p, q).value;
      const double j = loss::jaccard_loss(p, q).value;
      const double lo = d - j;
      const double hi = j - 2.0 * d;
      const bool ok = lo <= 1e-12 && hi <= 1e-12;
      record(order, ok, std::max(lo, hi), Witness{"max(L_D - L_J, L_J - 2 L_D)", p, q, std::max(lo, hi), 0.0});
      const double gap = std::abs(j - 2.0 * d / (1.0 + d));
      record(identity, gap <= 1e-9, gap - 1e-9, Witness{"|L_J - 2 L_D / (1 + L_D)|", p, q, gap, 1e-9});
    }

    // (b) P_n = clamp(P + noise / n): L_DSC(P_n, P) must decay to zero.
    {
      const std::size_t n = random_length(rng);
      auto base = uniform_vector(rng, n);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      std::vector<double> noise(n);
      for (auto& x : noise) x = u(rng);
      std::vector<double> losses(kSequenceLength), pn(n);
      for (std::size_t k = 1; k <= kSequenceLength; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
          pn[i] = std::clamp(base[i] + noise[i] / static_cast<double>(k), 0.0, 1.0);
        }
        losses[k - 1] = loss::dsc_loss(pn, base).value;
      }
      const auto env = upper_envelope(losses);
      bool ok = true;
      for (std::size_t k = 1; k < env.size(); ++k) ok = ok && env[k] <= env[k - 1];
      const double slope = loglog_slope(env);
      const bool all_zero = env.front() == 0.0;
      ok = ok && (all_zero || (slope <= -1.0 && env.back() < env.front()));
      record(sequence, ok, slope + 1.0, Witness{"log-log slope of L_DSC envelope", base, noise, slope, -1.0});
    }

    // (c) Pinsker on normalized pairs, both directions.
    {
      const std::size_t n = random_length(rng);
      DistributionPair pair(simplex_vector(rng, n), simplex_vector(rng, n));
      const double tv = tv_distance(pair);
      const double b1 = std::sqrt(kl_divergence(pair.p(), pair.q()) / 2.0);
      const double b2 = std::sqrt(kl_divergence(pair.q(), pair.p()) / 2.0);
      const double bound = std::min(b1, b2);
      const bool ok = tv <= bound + 1e-12;
      record(pinsker, ok, tv - bound,
             Witness{"sup|p - q| vs sqrt(KL / 2)", {pair.p().begin(), pair.p().end()},
                     {pair.q().begin(), pair.q().end()}, tv, bound});
    }
  }

  r.checks.push_back(std::move(order));
  r.checks.push_back(std::move(identity));
  r.checks.push_back(std::move(sequence));
  r.checks.push_back(std::move(pinsker));
  finalize(r);
  return r;
}

}  // namespace ddspseg::theory
