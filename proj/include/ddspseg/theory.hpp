#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddspseg/losses.hpp"

namespace ddspseg::theory {

/// Two equal-length non-negative vectors. `normalized()` holds when both sum
/// to 1 within 1e-9.
class DistributionPair {
 public:
  DistributionPair(std::vector<double> p, std::vector<double> q);

  std::span<const double> p() const { return p_; }
  std::span<const double> q() const { return q_; }
  bool normalized() const { return normalized_; }

 private:
  std::vector<double> p_;
  std::vector<double> q_;
  bool normalized_ = false;
};

/// sum_i p_i ln(p_i / q_i) with 0 ln(0/q) = 0. Returns +infinity when some
/// p_i > 0 has q_i = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);
double kl_divergence(const DistributionPair& pair);

/// Component-wise supremum distance max_i |p_i - q_i|.
double tv_distance(std::span<const double> p, std::span<const double> q);
double tv_distance(const DistributionPair& pair);

struct Witness {
  std::string what;
  std::vector<double> p;
  std::vector<double> q;
  double lhs = 0.0;
  double rhs = 0.0;
};

struct SubCheck {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double worst_violation = 0.0;
  /// Worst violation, or an illustrative instance when nothing failed.
  std::optional<Witness> witness;
};

struct TheoremReport {
  std::string theorem;
  std::size_t trials = 0;
  std::size_t failures = 0;
  std::vector<SubCheck> checks;
  std::vector<std::string> notes;

  bool passed() const { return failures == 0; }
  const SubCheck* find(std::string_view name) const;
};

/// KL is infinite whenever the reference puts mass where the model has none,
/// and it is not symmetric.
TheoremReport check_theorem1(std::size_t trials, std::uint64_t seed);

/// A smooth map from parameters theta to a probability vector.
class DifferentiableGenerator {
 public:
  virtual ~DifferentiableGenerator() = default;
  virtual std::size_t parameter_count() const = 0;
  virtual std::size_t output_size() const = 0;
  virtual std::vector<double> forward(std::span<const double> theta) const = 0;
  /// Vector-Jacobian product: returns sum_i dL/dP_i * dP_i/dtheta.
  virtual std::vector<double> vjp(std::span<const double> theta, std::span<const double> dl_dp) const = 0;
};

/// P = sigmoid(W z + b) with a fixed latent z; theta = (W row-major, b).
class LinearSigmoidGenerator final : public DifferentiableGenerator {
 public:
  LinearSigmoidGenerator(std::size_t outputs, std::size_t latent, std::uint64_t seed);

  std::size_t parameter_count() const override { return outputs_ * latent_ + outputs_; }
  std::size_t output_size() const override { return outputs_; }
  std::vector<double> forward(std::span<const double> theta) const override;
  std::vector<double> vjp(std::span<const double> theta, std::span<const double> dl_dp) const override;

 private:
  std::size_t outputs_;
  std::size_t latent_;
  std::vector<double> z_;
};

struct ContinuityProbe {
  double base_step = 0.1;
  int halvings = 8;
  double rel_tolerance = 1e-3;
};

/// Empirical continuity/differentiability probe of loss(gt, g(theta)) for a
/// dice-family loss: along halving steps the quotient |dL| / eps must stay
/// bounded (fine-scale maximum at most twice the coarse-scale maximum), and
/// the finest central difference quotient must match the analytic
/// directional derivative.
TheoremReport check_theorem2_continuity(const DifferentiableGenerator& gen, loss::Kind kind, std::size_t trials,
                                        std::uint64_t seed, const ContinuityProbe& probe = {});

/// Convergence ordering: (a) L_DSC <= L_Jaccard <= 2 L_DSC plus the exact
/// Jaccard/Dice identity, (b) L_DSC(P_n, P) -> 0 for P_n -> P under the
/// sup distance, (c) Pinsker's bound on normalized pairs.
TheoremReport check_theorem3_ordering(std::size_t trials, std::uint64_t seed);

inline constexpr std::size_t kSequenceLength = 1024;

/// Running upper envelope e_n = max_{m >= n} values[m] (non-increasing).
std::vector<double> upper_envelope(std::span<const double> values);
/// Least-squares slope of ln(values) against ln(n), n = 1.., over positive entries.
double loglog_slope(std::span<const double> values);

}  // namespace ddspseg::theory
