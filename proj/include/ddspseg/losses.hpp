#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "ddspseg/volume.hpp"

namespace ddspseg::loss {

/// Loss value plus dL/dpred_i for every voxel, in the inputs' linear order.
struct LossEval {
  double value = 0.0;
  std::vector<double> grad;
  /// Set when both inputs were empty and the loss fell back to (1, 0).
  bool degenerate = false;
};

/// Soft Dice loss with squared-norm denominator:
///   K = sum p_i g_i, U = sum p_i^2 + sum g_i^2, L = 1 - 2K/U,
///   dL/dp_i = -2 (g_i U - 2K p_i) / U^2.
/// U == 0 yields value 1 with zero gradient.
LossEval dsc_loss(std::span<const double> pred, std::span<const double> gt);

/// Soft Jaccard loss: L = 1 - K / (U - K),
///   dL/dp_i = -(g_i (U-K) - K (2 p_i - g_i)) / (U-K)^2.
/// For p, g in [0,1], U - K == 0 only when U == 0; that case yields (1, 0).
LossEval jaccard_loss(std::span<const double> pred, std::span<const double> gt);

/// Which gradient the plain-sum-denominator Dice variant reports.
enum class NoSquareGradient {
  printed,  // -2 (g_i L - 2K) / L^2, the widely circulated form
  exact,    // -2 (g_i L - K) / L^2, the true derivative of 1 - 2K/L
};

/// Dice loss with L = sum p_i + sum g_i in the denominator. Either gradient
/// form is constant across voxels of the same ground-truth class, which is
/// the defect this variant exists to show.
LossEval dsc_loss_nosquare(std::span<const double> pred, std::span<const double> gt,
                           NoSquareGradient form = NoSquareGradient::printed);

struct ClassWeights {
  double foreground = 1.0;
  double background = 1.0;
};

inline constexpr double kProbabilityClamp = 1e-7;

/// Inverse-frequency weights normalized to mean 1 over the voxels:
/// w_fg = N / (2 N_fg), w_bg = N / (2 N_bg); (1, 1) when a class is absent.
ClassWeights inverse_frequency_weights(std::span<const double> gt);

/// Weighted binary cross entropy averaged over voxels. Predictions are
/// clamped to [eps, 1 - eps]; the gradient is zero where the clamp is active.
/// Without explicit weights, inverse_frequency_weights(gt) is used.
LossEval reweighted_ce_loss(std::span<const double> pred, std::span<const double> gt,
                            std::optional<ClassWeights> weights = std::nullopt);

/// Convex weights for the main, stage-2 and stage-3 supervision heads.
class SupervisionWeights {
 public:
  SupervisionWeights() = default;
  /// Throws std::invalid_argument unless all weights are >= 0 and sum to 1
  /// within 1e-9.
  SupervisionWeights(double alpha, double beta, double gamma);

  double alpha() const { return w_[0]; }
  double beta() const { return w_[1]; }
  double gamma() const { return w_[2]; }
  double operator[](std::size_t i) const { return w_[i]; }

 private:
  std::array<double, 3> w_{1.0, 0.0, 0.0};
};

/// Weighted multi-supervision loss. The value is the weighted sum of head
/// values; each head's gradient is scaled by its weight and stays routed to
/// that head.
struct CompositeLoss {
  double value = 0.0;
  std::array<std::vector<double>, 3> head_grads;
};

CompositeLoss composite_loss(const LossEval& main, const LossEval& stage2, const LossEval& stage3,
                             const SupervisionWeights& w);

enum class Kind { dsc, jaccard, wce, ce, dsc_nosquare };

const char* to_string(Kind k);
/// Accepts dsc, jaccard, wce, ce, dsc-nosquare. Throws on anything else.
Kind parse_kind(std::string_view s);

/// Dispatch by kind; `ce` is cross entropy with unit class weights.
LossEval evaluate(Kind k, std::span<const double> pred, std::span<const double> gt);

// Volume-typed entry points. All check dims.
LossEval dsc_loss(const ProbabilityMap& pred, const BinaryMask& gt);
LossEval jaccard_loss(const ProbabilityMap& pred, const BinaryMask& gt);
LossEval dsc_loss_nosquare(const ProbabilityMap& pred, const BinaryMask& gt,
                           NoSquareGradient form = NoSquareGradient::printed);
LossEval reweighted_ce_loss(const ProbabilityMap& pred, const BinaryMask& gt,
                            std::optional<ClassWeights> weights = std::nullopt);

/// Repackage a loss gradient as a Volume on the given grid.
Volume grad_volume(const LossEval& e, Dims dims, Spacing spacing = {});

}  // namespace ddspseg::loss
