#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ddspseg/volume.hpp"

namespace ddspseg::metrics {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Foreground voxels with at least one 6-connected neighbour that is
/// background or outside the grid. Points are voxel centres in millimetres,
/// listed in linear (x-fastest) voxel order.
struct BoundarySet {
  std::vector<std::size_t> voxels;
  std::vector<Point3> points;

  std::size_t size() const { return voxels.size(); }
  bool empty() const { return voxels.empty(); }
};

BoundarySet boundary_extract(const BinaryMask& m);

/// 2|A∩B| / (|A| + |B|); 1 when both are empty.
double dice_coefficient(const BinaryMask& a, const BinaryMask& b);

/// 100 * | |A| / |B| - 1 |, with b the reference. Empty reference -> nullopt.
std::optional<double> arvd(const BinaryMask& a, const BinaryMask& b);

/// For every boundary voxel of `from`, the Euclidean distance (mm) to the
/// nearest boundary voxel of `to`, in `from`'s boundary order. Computed with
/// an exact separable squared distance transform.
std::vector<double> directed_boundary_distances(const BinaryMask& from, const BinaryMask& to);

/// Smallest d such that at least `pct` percent of the values are <= d.
double nearest_rank_percentile(std::vector<double> values, int pct);

/// Mean of the two directed mean boundary distances. nullopt if either mask is empty.
std::optional<double> abd(const BinaryMask& a, const BinaryMask& b);

/// Max of the two directed 95th-percentile boundary distances (nearest rank).
std::optional<double> hd95(const BinaryMask& a, const BinaryMask& b);

/// Classic (100th percentile) symmetric Hausdorff distance between boundaries.
std::optional<double> hausdorff(const BinaryMask& a, const BinaryMask& b);

struct MetricsReport {
  double dsc = 0.0;
  std::optional<double> arvd_pct;
  std::optional<double> abd_mm;
  std::optional<double> hd95_mm;
  /// "empty_prediction", "empty_reference".
  std::vector<std::string> flags;
};

/// All four measures for a prediction against a reference mask.
MetricsReport evaluate(const BinaryMask& pred, const BinaryMask& ref);

}  // namespace ddspseg::metrics
