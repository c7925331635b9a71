#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "ddspseg/ddsp.hpp"
#include "ddspseg/losses.hpp"

namespace ddspseg::nn {

enum class LongConnection { none, residual, concat };
enum class BlockKind { none, ddsp, aspp };

const char* to_string(LongConnection c);
const char* to_string(BlockKind b);
LongConnection parse_long_connection(std::string_view s);
BlockKind parse_block_kind(std::string_view s);

struct NetConfig {
  int in_channels = 1;
  std::array<int, 3> widths{8, 16, 32};
  LongConnection long_connection = LongConnection::residual;
  BlockKind block = BlockKind::ddsp;
  DdspConfig ddsp;
  loss::SupervisionWeights supervision{0.8, 0.15, 0.05};
  /// Heads averaged at inference: main, stage2, stage3.
  std::array<bool, 3> fusion{true, true, true};
  /// Multiplier on residual long connections. 0 makes a residual network
  /// compute exactly what the same weights compute without long connections.
  double skip_scale = 1.0;

  void validate() const;
};

/// Per-voxel probabilities of the three supervision heads, each (N, 1, X, Y, Z)
/// at input resolution.
template <class T>
struct Heads {
  Tensor5<T> main, stage2, stage3;

  Tensor5<T>& operator[](std::size_t i) { return i == 0 ? main : i == 1 ? stage2 : stage3; }
  const Tensor5<T>& operator[](std::size_t i) const { return i == 0 ? main : i == 1 ? stage2 : stage3; }
};

/// Three-stage encoder-decoder: two stride-2 conv downsamplings, a context
/// block at the quarter-resolution bottleneck, two transposed-conv
/// upsamplings with long connections from the encoder, and sigmoid heads
/// after the bottleneck (stage3), the half-resolution decoder (stage2) and
/// the full-resolution decoder (main).
template <class T>
class Network {
 public:
  explicit Network(NetConfig cfg);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  /// Gaussian(0, 0.01) conv weights, zero biases, unit/zero batch-norm
  /// scale/shift, trilinear transposed-conv kernels.
  void initialize(std::uint64_t seed);

  /// x: (N, in_channels, X, Y, Z) with X, Y, Z divisible by 4.
  Heads<T> forward(const Tensor5<T>& x, Mode mode);
  /// Gradients of the loss w.r.t. each head's probabilities; accumulates
  /// into parameter gradients.
  void backward(const Heads<T>& d_heads);

  ParamRefs<T>& parameters() { return refs_; }
  void zero_grad();
  const NetConfig& config() const { return cfg_; }

 private:
  struct Impl;
  NetConfig cfg_;
  std::unique_ptr<Impl> impl_;
  ParamRefs<T> refs_;
};

/// Equal-weight average of the heads enabled in `mask`. Throws when no head
/// is enabled.
template <class T>
Tensor5<T> fuse_outputs(const Heads<T>& heads, const std::array<bool, 3>& mask);

}  // namespace ddspseg::nn
