#pragma once

// Register-blocked stride-1 convolution on a zero-padded copy of the input.
// Each inner step loads one SIMD vector of input voxels along x and updates
// eight output channels from it, which keeps the accumulators in registers
// and avoids materializing an im2col matrix. Uses GCC/Clang vector
// extensions; the compiler lowers them to whatever the target supports.

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace ddspseg::nn::detail {

template <class T>
struct Simd {
  static constexpr int lanes = 64 / static_cast<int>(sizeof(T));
  typedef T type __attribute__((vector_size(64)));
};

inline constexpr int kOutBlock = 8;

struct Extent {
  int x, y, z;
  std::size_t count() const { return static_cast<std::size_t>(x) * y * z; }
};

/// `channels` planes of `e`, each zero-padded by `pad` on every side; rows
/// are extended so that any vector load starting inside a row stays inside
/// the buffer.
template <class T>
class Padded {
 public:
  Padded(const T* src, int channels, Extent e, int pad, int row_slack)
      : px_(e.x + 2 * pad + row_slack), py_(e.y + 2 * pad), pz_(e.z + 2 * pad) {
    plane_ = static_cast<std::size_t>(px_) * py_ * pz_;
    data_.assign(plane_ * channels + static_cast<std::size_t>(Simd<T>::lanes), T(0));
    for (int c = 0; c < channels; ++c)
      for (int z = 0; z < e.z; ++z)
        for (int y = 0; y < e.y; ++y) {
          const T* line = src + (static_cast<std::size_t>(c) * e.z * e.y + static_cast<std::size_t>(z) * e.y + y) * e.x;
          std::copy(line, line + e.x, row(c, z + pad, y + pad) + pad);
        }
  }

  const T* row(int c, int z, int y) const {
    return data_.data() + c * plane_ + (static_cast<std::size_t>(z) * py_ + y) * px_;
  }
  T* row(int c, int z, int y) { return data_.data() + c * plane_ + (static_cast<std::size_t>(z) * py_ + y) * px_; }

 private:
  int px_, py_, pz_;
  std::size_t plane_ = 0;
  std::vector<T> data_;
};

/// y[o] = bias[o] + sum_{c, tap} w[o][c][tap] * x[c] shifted by the tap, for a
/// k^3 kernel with dilation d and "same" padding d * (k - 1) / 2. Overwrites y.
/// `bias` may be null.
template <class T>
void direct_conv(const T* x, int in_c, Extent e, const T* w, const T* bias, int out_c, int k, int d, T* y) {
  using V = typename Simd<T>::type;
  constexpr int L = Simd<T>::lanes;
  const int pad = d * (k - 1) / 2;
  const int taps = k * k * k;
  const Padded<T> xp(x, in_c, e, pad, L);

  const int nob = (out_c + kOutBlock - 1) / kOutBlock;
  std::vector<T> wp(static_cast<std::size_t>(nob) * in_c * taps * kOutBlock, T(0));
  for (int o = 0; o < out_c; ++o)
    for (int c = 0; c < in_c; ++c)
      for (int t = 0; t < taps; ++t) {
        wp[((static_cast<std::size_t>(o / kOutBlock) * in_c + c) * taps + t) * kOutBlock + o % kOutBlock] =
            w[(static_cast<std::size_t>(o) * in_c + c) * taps + t];
      }

  for (int ob = 0; ob < nob; ++ob) {
    const int mo = std::min(kOutBlock, out_c - ob * kOutBlock);
    for (int z = 0; z < e.z; ++z)
      for (int yy = 0; yy < e.y; ++yy)
        for (int x0 = 0; x0 < e.x; x0 += L) {
          V acc[kOutBlock];
          for (int o = 0; o < kOutBlock; ++o) acc[o] = V{} + ((o < mo && bias) ? bias[ob * kOutBlock + o] : T(0));
          for (int c = 0; c < in_c; ++c) {
            const T* wt = &wp[(static_cast<std::size_t>(ob) * in_c + c) * taps * kOutBlock];
            for (int kz = 0; kz < k; ++kz)
              for (int ky = 0; ky < k; ++ky) {
                const T* r = xp.row(c, z + kz * d, yy + ky * d) + x0;
                for (int kx = 0; kx < k; ++kx, wt += kOutBlock) {
                  V v;
                  std::memcpy(&v, r + kx * d, sizeof(V));
#pragma GCC unroll 8
                  for (int o = 0; o < kOutBlock; ++o) acc[o] += wt[o] * v;
                }
              }
          }
          const int n = std::min(L, e.x - x0);
          for (int o = 0; o < mo; ++o) {
            T* dst = y + (static_cast<std::size_t>(ob * kOutBlock + o) * e.z * e.y + static_cast<std::size_t>(z) * e.y + yy) * e.x + x0;
            std::memcpy(dst, &acc[o], static_cast<std::size_t>(n) * sizeof(T));
          }
        }
  }
}

/// Input gradient of direct_conv: the same-padded correlation of dy with the
/// spatially flipped, channel-transposed kernel. Overwrites dx.
template <class T>
void direct_conv_input_grad(const T* dy, int out_c, Extent e, const T* w, int in_c, int k, int d, T* dx) {
  const int taps = k * k * k;
  std::vector<T> wt(static_cast<std::size_t>(in_c) * out_c * taps);
  for (int o = 0; o < out_c; ++o)
    for (int c = 0; c < in_c; ++c)
      for (int t = 0; t < taps; ++t) {
        wt[(static_cast<std::size_t>(c) * out_c + o) * taps + (taps - 1 - t)] = w[(static_cast<std::size_t>(o) * in_c + c) * taps + t];
      }
  direct_conv(dy, out_c, e, wt.data(), static_cast<const T*>(nullptr), in_c, k, d, dx);
}

/// dw[o][c][tap] += sum_v dy[o][v] * x[c][v + tap offset].
template <class T>
void direct_conv_weight_grad(const T* x, int in_c, Extent e, const T* dy, int out_c, int k, int d, T* dw) {
  using V = typename Simd<T>::type;
  constexpr int L = Simd<T>::lanes;
  const int pad = d * (k - 1) / 2;
  const int taps = k * k * k;
  const Padded<T> xp(x, in_c, e, pad, L);

  // dy rows padded to a whole number of vectors; the tail lanes are zero so
  // the input values they meet contribute nothing.
  const int xr = (e.x + L - 1) / L * L;
  std::vector<T> dyr(static_cast<std::size_t>(out_c) * e.z * e.y * xr, T(0));
  for (int o = 0; o < out_c; ++o)
    for (int z = 0; z < e.z; ++z)
      for (int yy = 0; yy < e.y; ++yy) {
        const std::size_t line = (static_cast<std::size_t>(o) * e.z + z) * e.y + yy;
        std::copy(dy + line * e.x, dy + (line + 1) * e.x, dyr.data() + line * xr);
      }

  const int nob = (out_c + kOutBlock - 1) / kOutBlock;
  std::vector<V> acc(static_cast<std::size_t>(nob) * in_c * taps * kOutBlock, V{});
  const std::size_t ostride = static_cast<std::size_t>(e.z) * e.y * xr;
  for (int z = 0; z < e.z; ++z)
    for (int ob = 0; ob < nob; ++ob) {
      const int mo = std::min(kOutBlock, out_c - ob * kOutBlock);
      for (int c = 0; c < in_c; ++c)
        for (int kz = 0; kz < k; ++kz)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int t = (kz * k + ky) * k + kx;
              V* a = &acc[((static_cast<std::size_t>(ob) * in_c + c) * taps + t) * kOutBlock];
              V r[kOutBlock];
              for (int o = 0; o < kOutBlock; ++o) r[o] = a[o];
              for (int yy = 0; yy < e.y; ++yy) {
                const T* xrow = xp.row(c, z + kz * d, yy + ky * d) + kx * d;
                const T* grow = dyr.data() + (static_cast<std::size_t>(ob * kOutBlock) * e.z + z) * e.y * xr +
                                static_cast<std::size_t>(yy) * xr;
                for (int x0 = 0; x0 < xr; x0 += L) {
                  V v;
                  std::memcpy(&v, xrow + x0, sizeof(V));
                  for (int o = 0; o < mo; ++o) {
                    V g;
                    std::memcpy(&g, grow + o * ostride + x0, sizeof(V));
                    r[o] += g * v;
                  }
                }
              }
              for (int o = 0; o < kOutBlock; ++o) a[o] = r[o];
            }
    }

  for (int o = 0; o < out_c; ++o)
    for (int c = 0; c < in_c; ++c)
      for (int t = 0; t < taps; ++t) {
        const V& v = acc[((static_cast<std::size_t>(o / kOutBlock) * in_c + c) * taps + t) * kOutBlock + o % kOutBlock];
        T s = 0;
        for (int l = 0; l < L; ++l) s += v[l];
        dw[(static_cast<std::size_t>(o) * in_c + c) * taps + t] += s;
      }
}

}  // namespace ddspseg::nn::detail
