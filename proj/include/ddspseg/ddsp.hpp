#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ddspseg/layers.hpp"

namespace ddspseg::nn {

struct DdspConfig {
  std::vector<int> dilation_rates{1, 2, 3, 4};
  std::vector<int> pooling_rates{2, 4, 6};
  int growth = 8;

  /// Throws std::invalid_argument: rates must be positive and strictly
  /// increasing, growth positive, and at least one branch present.
  void validate() const;
  std::size_t branch_count() const { return dilation_rates.size() + pooling_rates.size(); }
  int output_channels(int in_channels) const {
    return in_channels + static_cast<int>(branch_count()) * growth;
  }
};

/// Average pooling (kernel = stride = rate, ceil at the edges), a 1x1x1
/// projection, then nearest upsampling back onto the input grid.
template <class T>
class GlobalPyramidPool final : public Module<T> {
 public:
  GlobalPyramidPool(const std::string& name, int in_channels, int out_channels, int rate);
  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override;
  Tensor5<T> backward(const Tensor5<T>& dy) override;
  void collect(ParamRefs<T>& refs) override;
  Conv3d<T>& projection() { return proj_; }
  int rate() const { return rate_; }

 private:
  int rate_;
  AvgPool3d<T> pool_;
  Conv3d<T> proj_;
  UpsampleNearest<T> up_;
};

enum class BlockWiring {
  dense,     // branch i sees the block input plus every earlier branch output
  parallel,  // every branch sees only the block input (ASPP-style)
};

/// Dilated 3x3x3 conv branches (in dilation order) followed by pyramid-pool
/// branches (in rate order); each branch ends in batch norm and ReLU. The
/// output concatenates the block input with all branch outputs, so it has
/// cfg.output_channels(in_channels) channels under either wiring.
template <class T>
class DdspBlock final : public Module<T> {
 public:
  DdspBlock(const std::string& name, int in_channels, DdspConfig cfg, BlockWiring wiring = BlockWiring::dense);
  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override;
  Tensor5<T> backward(const Tensor5<T>& dy) override;
  void collect(ParamRefs<T>& refs) override;

  int in_channels() const { return in_; }
  int out_channels() const { return cfg_.output_channels(in_); }
  const DdspConfig& config() const { return cfg_; }

 private:
  struct Branch {
    std::unique_ptr<Module<T>> op;  // Conv3d or GlobalPyramidPool
    BatchNorm3d<T> bn;
    Relu<T> relu;
  };

  int in_;
  DdspConfig cfg_;
  BlockWiring wiring_;
  std::vector<std::unique_ptr<Branch>> branches_;
};

}  // namespace ddspseg::nn
