#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "ddspseg/tensor.hpp"

namespace ddspseg::nn {

/// A named trainable (or buffered) tensor with its gradient accumulator.
template <class T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> s, T fill = T(0));
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

enum class Mode { train, eval };

/// Parameters take part in SGD; buffers (batch-norm running moments) are only
/// saved and restored.
template <class T>
struct ParamRefs {
  std::vector<Parameter<T>*> params;
  std::vector<Parameter<T>*> buffers;
};

/// Layer with cached forward state. backward() must follow the matching
/// forward() and accumulates into parameter gradients.
template <class T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor5<T> forward(const Tensor5<T>& x, Mode mode) = 0;
  virtual Tensor5<T> backward(const Tensor5<T>& dy) = 0;
  virtual void collect(ParamRefs<T>& refs) { (void)refs; }
};

/// Geometry of a strided, dilated, zero-padded cubic window.
struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
  int padding = 0;

  int output_extent(int n) const { return (n + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1; }
  std::size_t kernel_volume() const { return static_cast<std::size_t>(kernel) * kernel * kernel; }
};

/// Dilated 3D cross-correlation with "same" padding dilation * (k - 1) / 2.
/// Weight layout: [out][in][kz][ky][kx].
template <class T>
class Conv3d final : public Module<T> {
 public:
  Conv3d(std::string name, int in_channels, int out_channels, int kernel, int stride = 1, int dilation = 1);

  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override;
  Tensor5<T> backward(const Tensor5<T>& dy) override;
  void collect(ParamRefs<T>& refs) override;

  Shape5 output_shape(const Shape5& in) const;
  const ConvGeometry& geometry() const { return geo_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_, out_;
  ConvGeometry geo_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor5<T> input_;
};

/// Transposed convolution (the adjoint of a strided Conv3d); kernel 4,
/// stride 2, padding 1 doubles each spatial extent. Weight layout:
/// [in][out][kz][ky][kx].
template <class T>
class ConvTranspose3d final : public Module<T> {
 public:
  ConvTranspose3d(std::string name, int in_channels, int out_channels, int kernel = 4, int stride = 2,
                  int padding = 1);

  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override;
  Tensor5<T> backward(const Tensor5<T>& dy) override;
  void collect(ParamRefs<T>& refs) override;

  Shape5 output_shape(const Shape5& in) const;
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  /// Trilinear-interpolation kernel on channel pairs (i, o) with i % out == o
  /// (or o % in == i when upsampling into more channels), averaged over the
  /// inputs mapped to each output.
  void init_trilinear();

 private:
  int in_, out_;
  ConvGeometry geo_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor5<T> input_;
};

/// Per-channel batch normalization over (batch, x, y, z). Train mode uses
/// batch moments and updates the running moments; eval mode uses the
/// running moments only.
template <class T>
class BatchNorm3d final : public Module<T> {
 public:
  BatchNorm3d(std::string name, int channels, T eps = T(1e-5), T momentum = T(0.1));

  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override;
  Tensor5<T> backward(const Tensor5<T>& dy) override;
  void collect(ParamRefs<T>& refs) override;

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  Parameter<T>& running_mean() { return running_mean_; }
  Parameter<T>& running_var() { return running_var_; }

 private:
  int channels_;
  T eps_, momentum_;
  Parameter<T> gamma_, beta_, running_mean_, running_var_;
  Mode mode_ = Mode::train;
  Tensor5<T> xhat_;
  std::vector<T> inv_std_;
};

template <class T>
class Relu final : public Module<T> {
 public:
  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override;
  Tensor5<T> backward(const Tensor5<T>& dy) override;

 private:
  Tensor5<T> output_;
};

template <class T>
class Sigmoid final : public Module<T> {
 public:
  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override;
  Tensor5<T> backward(const Tensor5<T>& dy) override;

 private:
  Tensor5<T> output_;
};

/// Average pooling with kernel = stride = rate. Edge cells that extend past
/// the grid (ceil mode) average over their valid voxels only.
template <class T>
class AvgPool3d final : public Module<T> {
 public:
  explicit AvgPool3d(int rate);
  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override;
  Tensor5<T> backward(const Tensor5<T>& dy) override;
  Shape5 output_shape(const Shape5& in) const;

 private:
  int rate_;
  Shape5 in_shape_{};
};

/// Nearest-neighbour upsampling: output voxel v copies input voxel v / factor.
/// The output spatial extent is given explicitly so ceil-pooled grids map
/// back onto their source grid.
template <class T>
class UpsampleNearest final : public Module<T> {
 public:
  UpsampleNearest(int factor, std::array<int, 3> target);
  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override;
  Tensor5<T> backward(const Tensor5<T>& dy) override;
  void set_target(std::array<int, 3> target) { target_ = target; }

 private:
  int factor_;
  std::array<int, 3> target_;
  Shape5 in_shape_{};
};

/// Conv3d -> BatchNorm3d -> ReLU.
template <class T>
class ConvBnRelu final : public Module<T> {
 public:
  ConvBnRelu(const std::string& name, int in_channels, int out_channels, int kernel, int stride = 1,
             int dilation = 1);
  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override;
  Tensor5<T> backward(const Tensor5<T>& dy) override;
  void collect(ParamRefs<T>& refs) override;
  Conv3d<T>& conv() { return conv_; }
  BatchNorm3d<T>& bn() { return bn_; }

 private:
  Conv3d<T> conv_;
  BatchNorm3d<T> bn_;
  Relu<T> relu_;
};

/// ConvTranspose3d -> BatchNorm3d -> ReLU.
template <class T>
class UpConvBnRelu final : public Module<T> {
 public:
  UpConvBnRelu(const std::string& name, int in_channels, int out_channels);
  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override;
  Tensor5<T> backward(const Tensor5<T>& dy) override;
  void collect(ParamRefs<T>& refs) override;
  ConvTranspose3d<T>& deconv() { return deconv_; }

 private:
  ConvTranspose3d<T> deconv_;
  BatchNorm3d<T> bn_;
  Relu<T> relu_;
};

/// Channel concatenation in argument order.
template <class T>
Tensor5<T> concat_channels(const std::vector<const Tensor5<T>*>& parts);

/// Inverse of concat_channels for gradients: slices `whole` into tensors
/// with the given channel counts.
template <class T>
std::vector<Tensor5<T>> split_channels(const Tensor5<T>& whole, const std::vector<int>& channels);

template <class T>
void add_inplace(Tensor5<T>& acc, const Tensor5<T>& x);

}  // namespace ddspseg::nn
