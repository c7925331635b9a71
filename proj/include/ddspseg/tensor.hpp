#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddspseg::nn {

/// (batch, channels, nx, ny, nz); data is x-fastest within each channel.
struct Shape5 {
  int n = 0;
  int c = 0;
  int x = 0;
  int y = 0;
  int z = 0;

  std::size_t spatial() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  std::size_t count() const { return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * spatial(); }
  bool same_spatial(const Shape5& o) const { return x == o.x && y == o.y && z == o.z; }
  bool operator==(const Shape5&) const = default;
};

std::string to_string(const Shape5& s);

template <class T>
class Tensor5 {
 public:
  Tensor5() = default;
  explicit Tensor5(Shape5 shape, T fill = T(0)) : shape_(shape), data_(shape.count(), fill) {
    if (shape.n <= 0 || shape.c <= 0 || shape.x <= 0 || shape.y <= 0 || shape.z <= 0) {
      throw std::invalid_argument("tensor shape must be positive: " + to_string(shape));
    }
  }
  Tensor5(Shape5 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count()) throw std::invalid_argument("tensor data does not match " + to_string(shape));
  }

  const Shape5& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T* channel(int b, int c) { return data_.data() + (static_cast<std::size_t>(b) * shape_.c + c) * shape_.spatial(); }
  const T* channel(int b, int c) const {
    return data_.data() + (static_cast<std::size_t>(b) * shape_.c + c) * shape_.spatial();
  }
  /// All channels of one batch member, contiguous.
  T* sample(int b) { return channel(b, 0); }
  const T* sample(int b) const { return channel(b, 0); }

  T& at(int b, int c, int x, int y, int z) {
    return channel(b, c)[static_cast<std::size_t>(x) + static_cast<std::size_t>(shape_.x) * (y + static_cast<std::size_t>(shape_.y) * z)];
  }
  T at(int b, int c, int x, int y, int z) const {
    return channel(b, c)[static_cast<std::size_t>(x) + static_cast<std::size_t>(shape_.x) * (y + static_cast<std::size_t>(shape_.y) * z)];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  Shape5 shape_{};
  std::vector<T> data_;
};

template <class To, class From>
Tensor5<To> tensor_cast(const Tensor5<From>& t) {
  std::vector<To> d(t.vec().begin(), t.vec().end());
  return Tensor5<To>(t.shape(), std::move(d));
}

}  // namespace ddspseg::nn
