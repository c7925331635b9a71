#include "ddspseg/volume.hpp"

#include <algorithm>
#include <cmath>

namespace ddspseg {

namespace {

void require_valid(const Dims& d, const Spacing& s) {
  if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0) {
    throw std::invalid_argument("volume dims must be positive, got " + to_string(d));
  }
  if (!(s.sx > 0.0) || !(s.sy > 0.0) || !(s.sz > 0.0) || !std::isfinite(s.sx) || !std::isfinite(s.sy) ||
      !std::isfinite(s.sz)) {
    throw std::invalid_argument("volume spacing must be positive and finite");
  }
}

void require_same_dims(const Volume& a, const Volume& b) {
  if (a.dims() != b.dims()) {
    throw std::invalid_argument("dims mismatch: " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  }
}

}  // namespace

std::string to_string(const Dims& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

Volume::Volume(Dims dims, Spacing spacing, float fill) : dims_(dims), spacing_(spacing) {
  require_valid(dims_, spacing_);
  data_.assign(dims_.count(), fill);
}

Volume::Volume(Dims dims, Spacing spacing, std::vector<float> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  require_valid(dims_, spacing_);
  if (data_.size() != dims_.count()) {
    throw std::invalid_argument("volume data length " + std::to_string(data_.size()) + " does not match dims " +
                                to_string(dims_));
  }
}

Index3 Volume::coords(std::size_t i) const {
  const auto nx = static_cast<std::size_t>(dims_.nx);
  const auto ny = static_cast<std::size_t>(dims_.ny);
  return {static_cast<int>(i % nx), static_cast<int>((i / nx) % ny), static_cast<int>(i / (nx * ny))};
}

Volume Volume::with_spacing(Spacing s) const {
  return Volume(dims_, s, data_);
}

BinaryMask::BinaryMask(Volume v) : v_(std::move(v)) {
  for (float x : v_.data()) {
    if (x != 0.0f && x != 1.0f) {
      throw std::invalid_argument("binary mask voxel must be 0 or 1, got " + std::to_string(x));
    }
  }
}

BinaryMask BinaryMask::threshold(const Volume& v, float t) {
  Volume out(v.dims(), v.spacing());
  auto src = v.data();
  auto dst = out.data();
  std::transform(src.begin(), src.end(), dst.begin(), [t](float x) { return x > t ? 1.0f : 0.0f; });
  return BinaryMask(std::move(out));
}

std::size_t BinaryMask::count() const {
  auto d = v_.data();
  return static_cast<std::size_t>(std::count(d.begin(), d.end(), 1.0f));
}

ProbabilityMap::ProbabilityMap(Volume v) : v_(std::move(v)) {
  for (float x : v_.data()) {
    if (!(x >= 0.0f && x <= 1.0f)) {
      throw std::invalid_argument("probability voxel outside [0, 1]: " + std::to_string(x));
    }
  }
}

Volume add(const Volume& a, const Volume& b) {
  require_same_dims(a, b);
  Volume out(a.dims(), a.spacing());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Volume mul(const Volume& a, const Volume& b) {
  require_same_dims(a, b);
  Volume out(a.dims(), a.spacing());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Volume scale(const Volume& a, double k) {
  Volume out(a.dims(), a.spacing());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<float>(a[i] * k);
  return out;
}

double dot(const Volume& a, const Volume& b) {
  require_same_dims(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

double l2_norm_sq(const Volume& a) { return dot(a, a); }

std::vector<double> to_double(const Volume& v) {
  auto d = v.data();
  return {d.begin(), d.end()};
}

}  // namespace ddspseg
