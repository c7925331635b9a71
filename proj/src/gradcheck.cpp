#include "ddspseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ddspseg/seed.hpp"

namespace ddspseg::gradcheck {

void random_pair(std::uint64_t seed, std::size_t voxels, std::vector<double>& pred, std::vector<double>& gt) {
  if (voxels < 2) throw std::invalid_argument("gradcheck needs at least two voxels");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  std::bernoulli_distribution fg(0.3);
  pred.resize(voxels);
  gt.resize(voxels);
  for (std::size_t i = 0; i < voxels; ++i) {
    pred[i] = u(rng);
    gt[i] = fg(rng) ? 1.0 : 0.0;
  }
  const auto n_fg = std::count(gt.begin(), gt.end(), 1.0);
  if (n_fg == 0) gt[0] = 1.0;
  if (n_fg == static_cast<std::ptrdiff_t>(voxels)) gt[0] = 0.0;
}

bool constant_within_class(const std::vector<double>& grad, const std::vector<double>& gt) {
  std::optional<double> fg, bg;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    auto& ref = gt[i] != 0.0 ? fg : bg;
    if (!ref) ref = grad[i];
    else if (*ref != grad[i]) return false;
  }
  return true;
}

namespace {

using LossFn = loss::LossEval (*)(std::span<const double>, std::span<const double>);

loss::LossEval nosquare_exact(std::span<const double> p, std::span<const double> g) {
  return loss::dsc_loss_nosquare(p, g, loss::NoSquareGradient::exact);
}
loss::LossEval nosquare_printed(std::span<const double> p, std::span<const double> g) {
  return loss::dsc_loss_nosquare(p, g, loss::NoSquareGradient::printed);
}

LossFn function_for(loss::Kind kind) {
  switch (kind) {
    case loss::Kind::dsc: return [](std::span<const double> p, std::span<const double> g) { return loss::dsc_loss(p, g); };
    case loss::Kind::jaccard: return loss::jaccard_loss;
    case loss::Kind::wce:
      return [](std::span<const double> p, std::span<const double> g) { return loss::reweighted_ce_loss(p, g); };
    case loss::Kind::ce:
      return [](std::span<const double> p, std::span<const double> g) {
        return loss::reweighted_ce_loss(p, g, loss::ClassWeights{1.0, 1.0});
      };
    case loss::Kind::dsc_nosquare: return nosquare_exact;
  }
  throw std::invalid_argument("unknown loss kind");
}

/// Worst voxel of one pair; fills `w` with it.
double check_pair(LossFn f, const std::vector<double>& pred, const std::vector<double>& gt, const Options& opt,
                  Witness& w) {
  const auto analytic = f(pred, gt).grad;
  std::vector<double> p = pred;
  double worst = -1.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = p[i];
    p[i] = x + opt.step;
    const double up = f(p, gt).value;
    p[i] = x - opt.step;
    const double dn = f(p, gt).value;
    p[i] = x;
    const double numeric = (up - dn) / (2.0 * opt.step);
    const double rel =
        std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), opt.rel_floor});
    if (rel > worst) {
      worst = rel;
      w.index = i;
      w.analytic = analytic[i];
      w.numeric = numeric;
      w.rel_err = rel;
    }
  }
  return worst;
}

}  // namespace

Report run(loss::Kind kind, const Options& opt) {
  Report r;
  r.loss = loss::to_string(kind);
  r.trials = opt.trials;
  if (opt.trials == 0) r.notes.push_back("no trials requested; the pass is vacuous");
  const LossFn f = function_for(kind);
  std::vector<double> pred, gt;
  for (std::size_t t = 0; t < opt.trials; ++t) {
    random_pair(derive_seed({opt.seed, static_cast<std::uint64_t>(kind), t}), opt.voxels, pred, gt);
    Witness w;
    const double worst = check_pair(f, pred, gt, opt, w);
    if (worst > opt.rel_tolerance) ++r.failures;
    if (!r.worst || worst > r.max_rel_err) {
      r.max_rel_err = worst;
      w.trial = t;
      w.pred = pred;
      w.gt = gt;
      r.worst = std::move(w);
    }
  }

  if (kind == loss::Kind::dsc_nosquare) {
    r.notes.push_back("finite differences check the exact derivative -2 (g_i L - K) / L^2");
    DefectReport d;
    for (std::size_t t = 0; t < opt.trials; ++t) {
      random_pair(derive_seed({opt.seed, static_cast<std::uint64_t>(kind), t}), opt.voxels, pred, gt);
      const bool printed_const = constant_within_class(nosquare_printed(pred, gt).grad, gt);
      const bool exact_const = constant_within_class(nosquare_exact(pred, gt).grad, gt);
      if (printed_const && exact_const) ++d.constant_trials;
      const auto sq = loss::dsc_loss(pred, gt).grad;
      if (!constant_within_class(sq, gt)) {
        ++d.dsc_counterexamples;
        if (!d.dsc_witness) {
          // Two same-class voxels with different gradients.
          Witness w;
          w.trial = t;
          for (std::size_t i = 1; i < sq.size() && !d.dsc_witness; ++i) {
            for (std::size_t j = 0; j < i; ++j) {
              if (gt[i] == gt[j] && sq[i] != sq[j]) {
                w.index = i;
                w.analytic = sq[i];
                w.numeric = sq[j];
                w.rel_err = std::abs(sq[i] - sq[j]);
                w.pred = pred;
                w.gt = gt;
                d.dsc_witness = std::move(w);
                break;
              }
            }
          }
        }
      }
      Witness scratch;
      d.printed_form_max_rel_err = std::max(d.printed_form_max_rel_err, check_pair(nosquare_printed, pred, gt, opt, scratch));
    }
    d.constant_gradient = opt.trials > 0 && d.constant_trials == opt.trials;
    r.defect = std::move(d);
  }
  return r;
}

}  // namespace ddspseg::gradcheck
