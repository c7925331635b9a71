#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ddspseg/losses.hpp"

namespace ddspseg::gradcheck {

struct Options {
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::size_t voxels = 64;  // 4x4x4
  double step = 1e-3;
  double rel_tolerance = 1e-4;
  /// Denominator floor of the relative error.
  double rel_floor = 1e-8;
};

struct Witness {
  std::size_t trial = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
  std::vector<double> pred;
  std::vector<double> gt;
};

/// Result of the per-class constancy probe on the plain-sum Dice variant.
struct DefectReport {
  /// Every trial had one exact gradient value per ground-truth class.
  bool constant_gradient = false;
  std::size_t constant_trials = 0;
  /// Trials in which the squared-denominator Dice loss gives two voxels of
  /// the same class different gradients.
  std::size_t dsc_counterexamples = 0;
  std::optional<Witness> dsc_witness;
  /// Largest relative gap between the widely printed gradient form and
  /// finite differences.
  double printed_form_max_rel_err = 0.0;
};

struct Report {
  std::string loss;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double max_rel_err = 0.0;
  std::optional<Witness> worst;
  std::optional<DefectReport> defect;
  std::vector<std::string> notes;
  bool passed() const { return failures == 0; }
};

/// Random (pred, gt) pair: pred uniform in [0.1, 0.9] (keeps the h^2 truncation
/// error of central differences on log p well under 1e-4), gt Bernoulli(0.3)
/// with at least one voxel of each class.
void random_pair(std::uint64_t seed, std::size_t voxels, std::vector<double>& pred, std::vector<double>& gt);

/// Central differences of loss(pred) against the analytic gradient at
/// every voxel, one random pair per trial. A trial fails when any voxel's
/// relative error exceeds the tolerance. For dsc-nosquare the exact
/// derivative is checked and the defect probe is added.
Report run(loss::Kind kind, const Options& opt);

/// True when all voxels of each ground-truth class share one gradient value
/// bit for bit.
bool constant_within_class(const std::vector<double>& grad, const std::vector<double>& gt);

}  // namespace ddspseg::gradcheck
