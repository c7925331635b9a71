#include "ddspseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ddspseg::loss {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dims mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                " voxels");
  }
}

struct Sums {
  double k = 0.0;       // sum p g
  double pp = 0.0;      // sum p^2
  double gg = 0.0;      // sum g^2
  double p = 0.0;       // sum p
  double g = 0.0;       // sum g
};

Sums reduce(std::span<const double> pred, std::span<const double> gt) {
  Sums s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s.k += pred[i] * gt[i];
    s.pp += pred[i] * pred[i];
    s.gg += gt[i] * gt[i];
    s.p += pred[i];
    s.g += gt[i];
  }
  return s;
}

LossEval degenerate_eval(std::size_t n) {
  LossEval e;
  e.value = 1.0;
  e.grad.assign(n, 0.0);
  e.degenerate = true;
  return e;
}

void require_same_dims(const Dims& a, const Dims& b) {
  if (a != b) throw std::invalid_argument("dims mismatch: " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

LossEval dsc_loss(std::span<const double> pred, std::span<const double> gt) {
  require_same_length(pred, gt);
  const Sums s = reduce(pred, gt);
  const double u = s.pp + s.gg;
  if (u == 0.0) return degenerate_eval(pred.size());

  LossEval e;
  e.value = 1.0 - 2.0 * s.k / u;
  e.grad.resize(pred.size());
  const double u2 = u * u;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    e.grad[i] = -2.0 * (gt[i] * u - 2.0 * s.k * pred[i]) / u2;
  }
  return e;
}

LossEval jaccard_loss(std::span<const double> pred, std::span<const double> gt) {
  require_same_length(pred, gt);
  const Sums s = reduce(pred, gt);
  const double u = s.pp + s.gg;
  if (u == 0.0) return degenerate_eval(pred.size());

  const double d = u - s.k;
  LossEval e;
  e.value = 1.0 - s.k / d;
  e.grad.resize(pred.size());
  const double d2 = d * d;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    e.grad[i] = -(gt[i] * d - s.k * (2.0 * pred[i] - gt[i])) / d2;
  }
  return e;
}

LossEval dsc_loss_nosquare(std::span<const double> pred, std::span<const double> gt, NoSquareGradient form) {
  require_same_length(pred, gt);
  const Sums s = reduce(pred, gt);
  const double l = s.p + s.g;
  if (l == 0.0) return degenerate_eval(pred.size());

  LossEval e;
  e.value = 1.0 - 2.0 * s.k / l;
  e.grad.resize(pred.size());
  const double l2 = l * l;
  const double kk = form == NoSquareGradient::printed ? 2.0 * s.k : s.k;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    e.grad[i] = -2.0 * (gt[i] * l - kk) / l2;
  }
  return e;
}

ClassWeights inverse_frequency_weights(std::span<const double> gt) {
  const double n = static_cast<double>(gt.size());
  double n_fg = 0.0;
  for (double g : gt) n_fg += g;
  const double n_bg = n - n_fg;
  if (n_fg <= 0.0 || n_bg <= 0.0) return {1.0, 1.0};
  return {n / (2.0 * n_fg), n / (2.0 * n_bg)};
}

LossEval reweighted_ce_loss(std::span<const double> pred, std::span<const double> gt,
                            std::optional<ClassWeights> weights) {
  require_same_length(pred, gt);
  const ClassWeights w = weights.value_or(inverse_frequency_weights(gt));
  constexpr double lo = kProbabilityClamp;
  constexpr double hi = 1.0 - kProbabilityClamp;

  LossEval e;
  e.grad.resize(pred.size());
  if (pred.empty()) return e;
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool clamped = !(pred[i] > lo && pred[i] < hi);
    const double p = std::min(std::max(pred[i], lo), hi);
    sum += w.foreground * gt[i] * std::log(p) + w.background * (1.0 - gt[i]) * std::log1p(-p);
    e.grad[i] = clamped ? 0.0 : -inv_n * (w.foreground * gt[i] / p - w.background * (1.0 - gt[i]) / (1.0 - p));
  }
  e.value = -sum * inv_n;
  return e;
}

SupervisionWeights::SupervisionWeights(double alpha, double beta, double gamma) : w_{alpha, beta, gamma} {
  for (double x : w_) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("supervision weights must be non-negative");
  }
  if (std::abs(alpha + beta + gamma - 1.0) > 1e-9) {
    throw std::invalid_argument("supervision weights must sum to 1");
  }
}

CompositeLoss composite_loss(const LossEval& main, const LossEval& stage2, const LossEval& stage3,
                             const SupervisionWeights& w) {
  CompositeLoss out;
  const LossEval* heads[3] = {&main, &stage2, &stage3};
  for (std::size_t h = 0; h < 3; ++h) {
    out.value += w[h] * heads[h]->value;
    auto& g = out.head_grads[h];
    g.resize(heads[h]->grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = w[h] * heads[h]->grad[i];
  }
  return out;
}

const char* to_string(Kind k) {
  switch (k) {
    case Kind::dsc: return "dsc";
    case Kind::jaccard: return "jaccard";
    case Kind::wce: return "wce";
    case Kind::ce: return "ce";
    case Kind::dsc_nosquare: return "dsc-nosquare";
  }
  return "?";
}

Kind parse_kind(std::string_view s) {
  if (s == "dsc") return Kind::dsc;
  if (s == "jaccard") return Kind::jaccard;
  if (s == "wce") return Kind::wce;
  if (s == "ce") return Kind::ce;
  if (s == "dsc-nosquare") return Kind::dsc_nosquare;
  throw std::invalid_argument("unknown loss '" + std::string(s) + "'");
}

LossEval evaluate(Kind k, std::span<const double> pred, std::span<const double> gt) {
  switch (k) {
    case Kind::dsc: return dsc_loss(pred, gt);
    case Kind::jaccard: return jaccard_loss(pred, gt);
    case Kind::wce: return reweighted_ce_loss(pred, gt);
    case Kind::ce: return reweighted_ce_loss(pred, gt, ClassWeights{1.0, 1.0});
    case Kind::dsc_nosquare: return dsc_loss_nosquare(pred, gt);
  }
  throw std::invalid_argument("unknown loss kind");
}

LossEval dsc_loss(const ProbabilityMap& pred, const BinaryMask& gt) {
  require_same_dims(pred.dims(), gt.dims());
  return dsc_loss(to_double(pred.volume()), to_double(gt.volume()));
}

LossEval jaccard_loss(const ProbabilityMap& pred, const BinaryMask& gt) {
  require_same_dims(pred.dims(), gt.dims());
  return jaccard_loss(to_double(pred.volume()), to_double(gt.volume()));
}

LossEval dsc_loss_nosquare(const ProbabilityMap& pred, const BinaryMask& gt, NoSquareGradient form) {
  require_same_dims(pred.dims(), gt.dims());
  return dsc_loss_nosquare(to_double(pred.volume()), to_double(gt.volume()), form);
}

LossEval reweighted_ce_loss(const ProbabilityMap& pred, const BinaryMask& gt, std::optional<ClassWeights> weights) {
  require_same_dims(pred.dims(), gt.dims());
  return reweighted_ce_loss(to_double(pred.volume()), to_double(gt.volume()), weights);
}

Volume grad_volume(const LossEval& e, Dims dims, Spacing spacing) {
  std::vector<float> data(e.grad.begin(), e.grad.end());
  return Volume(dims, spacing, std::move(data));
}

}  // namespace ddspseg::loss
