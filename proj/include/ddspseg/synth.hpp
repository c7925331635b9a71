#pragma once

#include <cstdint>
#include <stdexcept>

#include "ddspseg/volume.hpp"

namespace ddspseg::synth {

/// Generator for imbalanced binary segmentation cases: a few ellipsoidal
/// foreground blobs on a large background, with additive bias field and
/// Gaussian noise.
struct SynthSpec {
  Dims dims{32, 32, 32};
  Spacing spacing{};
  double fg_fraction_max = 0.02;
  int blobs_min = 1;
  int blobs_max = 3;
  double radius_min = 2.5;  // voxels, per semi-axis
  double radius_max = 5.0;
  double fg_intensity = 1.0;
  double bg_intensity = 0.0;
  double noise = 0.6;  // std of additive Gaussian noise
  double bias = 0.3;   // peak amplitude of the smooth additive bias field
  int deform_spacing = 8;
  /// Control-point displacement std in voxels; negative selects
  /// 15 * (largest extent / 96).
  double deform_std = -1.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;
  double resolved_deform_std() const;
};

struct Case {
  Volume image;
  BinaryMask truth;
};

class InfeasibleSpec : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic in spec (including spec.seed). Every blob keeps the union
/// foreground fraction at or below fg_fraction_max; throws InfeasibleSpec if
/// not even one blob fits after bounded retries.
Case gen_synthetic_case(const SynthSpec& spec);

/// Trilinearly interpolated displacement field from Gaussian-displaced
/// control points spaced `spacing` voxels apart (x, y, z components,
/// voxel units).
struct DisplacementField {
  Volume ux, uy, uz;
};

DisplacementField random_displacement(Dims dims, int spacing, double std, std::uint64_t seed);

/// Warps image (trilinear) and mask (nearest neighbour) with the same random
/// field; sample positions outside the grid clamp to the edge. Requires
/// spacing >= 2. With std == 0 the output equals the input.
Case deform_augment(const Volume& image, const BinaryMask& mask, int spacing, double std, std::uint64_t seed);
Case deform_augment(const Case& c, const SynthSpec& spec, std::uint64_t seed);

Volume warp_trilinear(const Volume& v, const DisplacementField& f);
BinaryMask warp_nearest(const BinaryMask& m, const DisplacementField& f);

}  // namespace ddspseg::synth
