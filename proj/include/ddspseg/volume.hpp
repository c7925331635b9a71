#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddspseg {

/// Voxel counts along x, y, z.
struct Dims {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  bool operator==(const Dims&) const = default;
};

/// Millimeters per voxel along x, y, z.
struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;

  bool operator==(const Spacing&) const = default;
};

std::string to_string(const Dims& d);

struct Index3 {
  int x = 0;
  int y = 0;
  int z = 0;
  bool operator==(const Index3&) const = default;
};

/// Dense 3D scalar grid with physical spacing. Data is stored x-fastest:
/// linear index = x + nx * (y + ny * z).
class Volume {
 public:
  Volume() = default;
  explicit Volume(Dims dims, Spacing spacing = {}, float fill = 0.0f);
  Volume(Dims dims, Spacing spacing, std::vector<float> data);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_.nx) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.ny) * static_cast<std::size_t>(z));
  }
  Index3 coords(std::size_t i) const;
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.nx && y < dims_.ny && z < dims_.nz;
  }

  float operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
  float& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  /// Same grid, new spacing.
  Volume with_spacing(Spacing s) const;

  bool operator==(const Volume&) const = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<float> data_;
};

/// A Volume whose voxels are exactly 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  /// Throws std::invalid_argument if any voxel is not exactly 0 or 1.
  explicit BinaryMask(Volume v);
  /// Voxels > threshold become 1.
  static BinaryMask threshold(const Volume& v, float t = 0.5f);

  const Volume& volume() const { return v_; }
  const Dims& dims() const { return v_.dims(); }
  const Spacing& spacing() const { return v_.spacing(); }
  std::size_t size() const { return v_.size(); }
  bool at(std::size_t i) const { return v_[i] != 0.0f; }
  bool at(int x, int y, int z) const { return v_(x, y, z) != 0.0f; }
  std::size_t count() const;

 private:
  Volume v_;
};

/// A Volume whose voxels lie in [0, 1].
class ProbabilityMap {
 public:
  ProbabilityMap() = default;
  explicit ProbabilityMap(Volume v);

  const Volume& volume() const { return v_; }
  const Dims& dims() const { return v_.dims(); }
  std::size_t size() const { return v_.size(); }

 private:
  Volume v_;
};

Volume add(const Volume& a, const Volume& b);
Volume mul(const Volume& a, const Volume& b);
Volume scale(const Volume& a, double k);
/// Sum_i a_i * b_i accumulated in double.
double dot(const Volume& a, const Volume& b);
double l2_norm_sq(const Volume& a);

/// Widen a volume's payload for 64-bit accumulation.
std::vector<double> to_double(const Volume& v);

}  // namespace ddspseg
