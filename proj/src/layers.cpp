#include "ddspseg/layers.hpp"

#include "direct_conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace ddspseg::nn {

std::string to_string(const Shape5& s) {
  return "(" + std::to_string(s.n) + ", " + std::to_string(s.c) + ", " + std::to_string(s.x) + ", " +
         std::to_string(s.y) + ", " + std::to_string(s.z) + ")";
}

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

struct Grid {
  int x, y, z;
  std::size_t count() const { return static_cast<std::size_t>(x) * y * z; }
};

/// Output indices o in [lo, hi) whose input index o * stride + base lands
/// inside [0, n).
struct Span {
  int lo, hi;
};

Span valid_span(int n, int out, int stride, int base) {
  // o * stride + base >= 0  <=>  o >= ceil(-base / stride)
  int lo = base >= 0 ? 0 : (-base + stride - 1) / stride;
  // o * stride + base <= n - 1  <=>  o <= floor((n - 1 - base) / stride)
  int hi = n - 1 - base < 0 ? 0 : (n - 1 - base) / stride + 1;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
  return {lo, hi};
}

// Row r = (c * k + kz) * k^2 + ky * k + kx of `col` holds, for every output
// voxel, the input voxel under that kernel tap (zero outside the grid).
template <class T>
void im2col(const T* in, int channels, Grid g, const ConvGeometry& geo, Grid og, T* col) {
  const int k = geo.kernel, s = geo.stride;
  const std::size_t plane = static_cast<std::size_t>(og.x) * og.y;
  T* row = col;
  for (int c = 0; c < channels; ++c) {
    const T* src = in + static_cast<std::size_t>(c) * g.count();
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const int bx = kx * geo.dilation - geo.padding;
          const Span sx = valid_span(g.x, og.x, s, bx);
          const Span sy = valid_span(g.y, og.y, s, ky * geo.dilation - geo.padding);
          const Span sz = valid_span(g.z, og.z, s, kz * geo.dilation - geo.padding);
          std::fill(row, row + plane * sz.lo, T(0));
          for (int oz = sz.lo; oz < sz.hi; ++oz) {
            T* dst = row + plane * oz;
            const int iz = oz * s + kz * geo.dilation - geo.padding;
            std::fill(dst, dst + static_cast<std::size_t>(og.x) * sy.lo, T(0));
            for (int oy = sy.lo; oy < sy.hi; ++oy) {
              T* out = dst + static_cast<std::size_t>(og.x) * oy;
              const int iy = oy * s + ky * geo.dilation - geo.padding;
              const T* line = src + (static_cast<std::size_t>(iz) * g.y + iy) * g.x + bx;
              std::fill(out, out + sx.lo, T(0));
              if (s == 1) {
                std::copy(line + sx.lo, line + sx.hi, out + sx.lo);
              } else {
                for (int ox = sx.lo; ox < sx.hi; ++ox) out[ox] = line[ox * s];
              }
              std::fill(out + sx.hi, out + og.x, T(0));
            }
            std::fill(dst + static_cast<std::size_t>(og.x) * sy.hi, dst + plane, T(0));
          }
          std::fill(row + plane * sz.hi, row + plane * og.z, T(0));
          row += plane * og.z;
        }
  }
}

// Adjoint of im2col: scatter-add every column entry back onto the input grid.
template <class T>
void col2im(const T* col, int channels, Grid g, const ConvGeometry& geo, Grid og, T* in) {
  const int k = geo.kernel, s = geo.stride;
  const std::size_t plane = static_cast<std::size_t>(og.x) * og.y;
  const T* row = col;
  for (int c = 0; c < channels; ++c) {
    T* dst = in + static_cast<std::size_t>(c) * g.count();
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const int bx = kx * geo.dilation - geo.padding;
          const Span sx = valid_span(g.x, og.x, s, bx);
          const Span sy = valid_span(g.y, og.y, s, ky * geo.dilation - geo.padding);
          const Span sz = valid_span(g.z, og.z, s, kz * geo.dilation - geo.padding);
          for (int oz = sz.lo; oz < sz.hi; ++oz) {
            const int iz = oz * s + kz * geo.dilation - geo.padding;
            for (int oy = sy.lo; oy < sy.hi; ++oy) {
              const T* src = row + plane * oz + static_cast<std::size_t>(og.x) * oy;
              const int iy = oy * s + ky * geo.dilation - geo.padding;
              T* line = dst + (static_cast<std::size_t>(iz) * g.y + iy) * g.x + bx;
              if (s == 1) {
                for (int ox = sx.lo; ox < sx.hi; ++ox) line[ox] += src[ox];
              } else {
                for (int ox = sx.lo; ox < sx.hi; ++ox) line[ox * s] += src[ox];
              }
            }
          }
          row += plane * og.z;
        }
  }
}

Grid spatial(const Shape5& s) { return {s.x, s.y, s.z}; }

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

bool use_direct(const ConvGeometry& g) { return g.stride == 1 && g.kernel > 1; }

detail::Extent extent(const Shape5& s) { return {s.x, s.y, s.z}; }

}  // namespace

template <class T>
Parameter<T>::Parameter(std::string n, std::vector<int> s, T fill) : name(std::move(n)), shape(std::move(s)) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  value.assign(count, fill);
  grad.assign(count, T(0));
}

// ---------------------------------------------------------------- Conv3d

template <class T>
Conv3d<T>::Conv3d(std::string name, int in_channels, int out_channels, int kernel, int stride, int dilation)
    : in_(in_channels),
      out_(out_channels),
      geo_{kernel, stride, dilation, dilation * (kernel - 1) / 2},
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {
  if (kernel <= 0 || kernel % 2 == 0) throw std::invalid_argument(name + ": kernel size must be odd");
  if (stride <= 0 || dilation <= 0) throw std::invalid_argument(name + ": stride and dilation must be positive");
  if (in_channels <= 0 || out_channels <= 0) throw std::invalid_argument(name + ": channel counts must be positive");
}

template <class T>
Shape5 Conv3d<T>::output_shape(const Shape5& in) const {
  if (in.c != in_) {
    throw std::invalid_argument(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                                to_string(in));
  }
  const int reach = geo_.dilation * (geo_.kernel - 1) + 1;
  for (int n : {in.x, in.y, in.z}) {
    if (n + 2 * geo_.padding < reach) {
      throw std::invalid_argument(weight_.name + ": dilated kernel exceeds padded extent of " + to_string(in));
    }
  }
  return {in.n, out_, geo_.output_extent(in.x), geo_.output_extent(in.y), geo_.output_extent(in.z)};
}

template <class T>
Tensor5<T> Conv3d<T>::forward(const Tensor5<T>& x, Mode) {
  const Shape5 os = output_shape(x.shape());
  input_ = x;
  Tensor5<T> y(os);
  if (use_direct(geo_)) {
    for (int b = 0; b < os.n; ++b) {
      detail::direct_conv(x.sample(b), in_, extent(os), weight_.value.data(), bias_.value.data(), out_, geo_.kernel,
                          geo_.dilation, y.sample(b));
    }
    return y;
  }
  const Grid g = spatial(x.shape()), og = spatial(os);
  const auto rows = static_cast<Eigen::Index>(in_ * geo_.kernel_volume());
  const auto cols = static_cast<Eigen::Index>(og.count());
  CMapR<T> w(weight_.value.data(), out_, rows);
  std::vector<T> col;
  if (!is_pointwise(geo_)) col.resize(static_cast<std::size_t>(rows) * cols);
  for (int b = 0; b < os.n; ++b) {
    const T* src = x.sample(b);
    if (!is_pointwise(geo_)) {
      im2col(src, in_, g, geo_, og, col.data());
      src = col.data();
    }
    MapR<T> out(y.sample(b), out_, cols);
    out.noalias() = w * CMapR<T>(src, rows, cols);
    for (int o = 0; o < out_; ++o) out.row(o).array() += bias_.value[o];
  }
  return y;
}

template <class T>
Tensor5<T> Conv3d<T>::backward(const Tensor5<T>& dy) {
  const Shape5& is = input_.shape();
  Tensor5<T> dx(is);
  if (use_direct(geo_)) {
    const std::size_t sp = dy.shape().spatial();
    for (int b = 0; b < is.n; ++b) {
      detail::direct_conv_weight_grad(input_.sample(b), in_, extent(is), dy.sample(b), out_, geo_.kernel,
                                      geo_.dilation, weight_.grad.data());
      for (int o = 0; o < out_; ++o) {
        const T* g = dy.channel(b, o);
        T s = 0;
        for (std::size_t i = 0; i < sp; ++i) s += g[i];
        bias_.grad[o] += s;
      }
      detail::direct_conv_input_grad(dy.sample(b), out_, extent(is), weight_.value.data(), in_, geo_.kernel,
                                     geo_.dilation, dx.sample(b));
    }
    return dx;
  }
  const Grid g = spatial(is), og = spatial(dy.shape());
  const auto rows = static_cast<Eigen::Index>(in_ * geo_.kernel_volume());
  const auto cols = static_cast<Eigen::Index>(og.count());
  CMapR<T> w(weight_.value.data(), out_, rows);
  MapR<T> dw(weight_.grad.data(), out_, rows);
  std::vector<T> col, dcol(static_cast<std::size_t>(rows) * cols);
  if (!is_pointwise(geo_)) col.resize(dcol.size());
  for (int b = 0; b < is.n; ++b) {
    CMapR<T> g_out(dy.sample(b), out_, cols);
    const T* src = input_.sample(b);
    if (!is_pointwise(geo_)) {
      im2col(src, in_, g, geo_, og, col.data());
      src = col.data();
    }
    dw.noalias() += g_out * CMapR<T>(src, rows, cols).transpose();
    // Plain loop: Eigen reductions pick their summation order from the
    // buffer alignment, which would make training runs differ bit-wise.
    for (int o = 0; o < out_; ++o) {
      const T* row = dy.channel(b, o);
      T s = 0;
      for (Eigen::Index i = 0; i < cols; ++i) s += row[i];
      bias_.grad[o] += s;
    }
    if (is_pointwise(geo_)) {
      MapR<T>(dx.sample(b), rows, cols).noalias() = w.transpose() * g_out;
    } else {
      MapR<T>(dcol.data(), rows, cols).noalias() = w.transpose() * g_out;
      col2im(dcol.data(), in_, g, geo_, og, dx.sample(b));
    }
  }
  return dx;
}

template <class T>
void Conv3d<T>::collect(ParamRefs<T>& refs) {
  refs.params.push_back(&weight_);
  refs.params.push_back(&bias_);
}

// ------------------------------------------------------- ConvTranspose3d

template <class T>
ConvTranspose3d<T>::ConvTranspose3d(std::string name, int in_channels, int out_channels, int kernel, int stride,
                                    int padding)
    : in_(in_channels),
      out_(out_channels),
      geo_{kernel, stride, 1, padding},
      weight_(name + ".weight", {in_channels, out_channels, kernel, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {
  if (in_channels <= 0 || out_channels <= 0) throw std::invalid_argument(name + ": channel counts must be positive");
}

template <class T>
Shape5 ConvTranspose3d<T>::output_shape(const Shape5& in) const {
  if (in.c != in_) {
    throw std::invalid_argument(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                                to_string(in));
  }
  auto ext = [&](int n) { return (n - 1) * geo_.stride - 2 * geo_.padding + geo_.kernel; };
  return {in.n, out_, ext(in.x), ext(in.y), ext(in.z)};
}

template <class T>
Tensor5<T> ConvTranspose3d<T>::forward(const Tensor5<T>& x, Mode) {
  const Shape5 os = output_shape(x.shape());
  input_ = x;
  Tensor5<T> y(os);
  const Grid small = spatial(x.shape()), big = spatial(os);
  const auto rows = static_cast<Eigen::Index>(out_ * geo_.kernel_volume());
  const auto cols = static_cast<Eigen::Index>(small.count());
  CMapR<T> w(weight_.value.data(), in_, rows);
  std::vector<T> col(static_cast<std::size_t>(rows) * cols);
  for (int b = 0; b < os.n; ++b) {
    MapR<T>(col.data(), rows, cols).noalias() = w.transpose() * CMapR<T>(x.sample(b), in_, cols);
    col2im(col.data(), out_, big, geo_, small, y.sample(b));
    for (int o = 0; o < out_; ++o) {
      T* ch = y.channel(b, o);
      for (std::size_t i = 0; i < big.count(); ++i) ch[i] += bias_.value[o];
    }
  }
  return y;
}

template <class T>
Tensor5<T> ConvTranspose3d<T>::backward(const Tensor5<T>& dy) {
  const Shape5& is = input_.shape();
  Tensor5<T> dx(is);
  const Grid small = spatial(is), big = spatial(dy.shape());
  const auto rows = static_cast<Eigen::Index>(out_ * geo_.kernel_volume());
  const auto cols = static_cast<Eigen::Index>(small.count());
  CMapR<T> w(weight_.value.data(), in_, rows);
  MapR<T> dw(weight_.grad.data(), in_, rows);
  std::vector<T> col(static_cast<std::size_t>(rows) * cols);
  for (int b = 0; b < is.n; ++b) {
    im2col(dy.sample(b), out_, big, geo_, small, col.data());
    CMapR<T> c(col.data(), rows, cols);
    MapR<T>(dx.sample(b), in_, cols).noalias() = w * c;
    dw.noalias() += CMapR<T>(input_.sample(b), in_, cols) * c.transpose();
    for (int o = 0; o < out_; ++o) {
      const T* ch = dy.channel(b, o);
      T s = 0;
      for (std::size_t i = 0; i < big.count(); ++i) s += ch[i];
      bias_.grad[o] += s;
    }
  }
  return dx;
}

template <class T>
void ConvTranspose3d<T>::collect(ParamRefs<T>& refs) {
  refs.params.push_back(&weight_);
  refs.params.push_back(&bias_);
}

template <class T>
void ConvTranspose3d<T>::init_trilinear() {
  const int k = geo_.kernel;
  const int f = (k + 1) / 2;
  const double center = (2 * f - 1 - f % 2) / (2.0 * f);
  std::vector<double> w1(k);
  for (int i = 0; i < k; ++i) w1[i] = 1.0 - std::abs(i / static_cast<double>(f) - center);

  std::fill(weight_.value.begin(), weight_.value.end(), T(0));
  std::vector<int> fan(out_, 0);
  auto linked = [&](int i, int o) { return in_ >= out_ ? i % out_ == o : o % in_ == i; };
  for (int i = 0; i < in_; ++i)
    for (int o = 0; o < out_; ++o)
      if (linked(i, o)) ++fan[o];
  const std::size_t kv = geo_.kernel_volume();
  for (int i = 0; i < in_; ++i)
    for (int o = 0; o < out_; ++o) {
      if (!linked(i, o)) continue;
      T* dst = weight_.value.data() + (static_cast<std::size_t>(i) * out_ + o) * kv;
      for (int kz = 0; kz < k; ++kz)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            dst[(kz * k + ky) * k + kx] = static_cast<T>(w1[kz] * w1[ky] * w1[kx] / fan[o]);
          }
    }
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

// ---------------------------------------------------------- BatchNorm3d

template <class T>
BatchNorm3d<T>::BatchNorm3d(std::string name, int channels, T eps, T momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_(name + ".gamma", {channels}, T(1)),
      beta_(name + ".beta", {channels}, T(0)),
      running_mean_(name + ".running_mean", {channels}, T(0)),
      running_var_(name + ".running_var", {channels}, T(1)) {}

template <class T>
Tensor5<T> BatchNorm3d<T>::forward(const Tensor5<T>& x, Mode mode) {
  const Shape5& s = x.shape();
  if (s.c != channels_) throw std::invalid_argument(gamma_.name + ": channel mismatch " + to_string(s));
  mode_ = mode;
  const std::size_t sp = s.spatial();
  const double m = static_cast<double>(s.n) * static_cast<double>(sp);
  Tensor5<T> y(s);
  xhat_ = Tensor5<T>(s);
  inv_std_.assign(channels_, T(0));
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (int b = 0; b < s.n; ++b) {
        const T* ch = x.channel(b, c);
        for (std::size_t i = 0; i < sp; ++i) sum += ch[i];
      }
      mean = sum / m;
      double sq = 0.0;
      for (int b = 0; b < s.n; ++b) {
        const T* ch = x.channel(b, c);
        for (std::size_t i = 0; i < sp; ++i) {
          const double d = ch[i] - mean;
          sq += d * d;
        }
      }
      var = sq / m;
      const double unbiased = m > 1 ? sq / (m - 1) : var;
      running_mean_.value[c] = static_cast<T>((1.0 - momentum_) * running_mean_.value[c] + momentum_ * mean);
      running_var_.value[c] = static_cast<T>((1.0 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + eps_));
    inv_std_[c] = inv;
    const T mu = static_cast<T>(mean);
    const T gm = gamma_.value[c], bt = beta_.value[c];
    for (int b = 0; b < s.n; ++b) {
      const T* ch = x.channel(b, c);
      T* xh = xhat_.channel(b, c);
      T* out = y.channel(b, c);
      for (std::size_t i = 0; i < sp; ++i) {
        xh[i] = (ch[i] - mu) * inv;
        out[i] = gm * xh[i] + bt;
      }
    }
  }
  return y;
}

template <class T>
Tensor5<T> BatchNorm3d<T>::backward(const Tensor5<T>& dy) {
  const Shape5& s = dy.shape();
  const std::size_t sp = s.spatial();
  const double m = static_cast<double>(s.n) * static_cast<double>(sp);
  Tensor5<T> dx(s);
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < s.n; ++b) {
      const T* g = dy.channel(b, c);
      const T* xh = xhat_.channel(b, c);
      for (std::size_t i = 0; i < sp; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += g[i] * xh[i];
      }
    }
    beta_.grad[c] += static_cast<T>(sum_dy);
    gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
    const T scale = gamma_.value[c] * inv_std_[c];
    if (mode_ == Mode::train) {
      const T mean_dy = static_cast<T>(sum_dy / m);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
      for (int b = 0; b < s.n; ++b) {
        const T* g = dy.channel(b, c);
        const T* xh = xhat_.channel(b, c);
        T* out = dx.channel(b, c);
        for (std::size_t i = 0; i < sp; ++i) out[i] = scale * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
      }
    } else {
      for (int b = 0; b < s.n; ++b) {
        const T* g = dy.channel(b, c);
        T* out = dx.channel(b, c);
        for (std::size_t i = 0; i < sp; ++i) out[i] = scale * g[i];
      }
    }
  }
  return dx;
}

template <class T>
void BatchNorm3d<T>::collect(ParamRefs<T>& refs) {
  refs.params.push_back(&gamma_);
  refs.params.push_back(&beta_);
  refs.buffers.push_back(&running_mean_);
  refs.buffers.push_back(&running_var_);
}

// --------------------------------------------------------- activations

template <class T>
Tensor5<T> Relu<T>::forward(const Tensor5<T>& x, Mode) {
  output_ = x;
  for (auto& v : output_.vec()) v = v > T(0) ? v : T(0);
  return output_;
}

template <class T>
Tensor5<T> Relu<T>::backward(const Tensor5<T>& dy) {
  Tensor5<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(output_[i] > T(0))) dx[i] = T(0);
  }
  return dx;
}

template <class T>
Tensor5<T> Sigmoid<T>::forward(const Tensor5<T>& x, Mode) {
  output_ = x;
  for (auto& v : output_.vec()) v = T(1) / (T(1) + std::exp(-v));
  return output_;
}

template <class T>
Tensor5<T> Sigmoid<T>::backward(const Tensor5<T>& dy) {
  Tensor5<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= output_[i] * (T(1) - output_[i]);
  return dx;
}

// -------------------------------------------------------------- pooling

template <class T>
AvgPool3d<T>::AvgPool3d(int rate) : rate_(rate) {
  if (rate < 1) throw std::invalid_argument("pooling rate must be >= 1");
}

template <class T>
Shape5 AvgPool3d<T>::output_shape(const Shape5& in) const {
  auto ext = [&](int n) { return (n + rate_ - 1) / rate_; };
  return {in.n, in.c, ext(in.x), ext(in.y), ext(in.z)};
}

template <class T>
Tensor5<T> AvgPool3d<T>::forward(const Tensor5<T>& x, Mode) {
  in_shape_ = x.shape();
  const Shape5 os = output_shape(in_shape_);
  Tensor5<T> y(os);
  std::vector<int> counts(os.spatial(), 0);
  for (int z = 0; z < in_shape_.z; ++z)
    for (int yy = 0; yy < in_shape_.y; ++yy)
      for (int xx = 0; xx < in_shape_.x; ++xx) {
        const std::size_t cell = (xx / rate_) + static_cast<std::size_t>(os.x) * ((yy / rate_) + static_cast<std::size_t>(os.y) * (z / rate_));
        ++counts[cell];
      }
  for (int b = 0; b < os.n; ++b)
    for (int c = 0; c < os.c; ++c) {
      const T* src = x.channel(b, c);
      T* dst = y.channel(b, c);
      std::size_t i = 0;
      for (int z = 0; z < in_shape_.z; ++z)
        for (int yy = 0; yy < in_shape_.y; ++yy)
          for (int xx = 0; xx < in_shape_.x; ++xx, ++i) {
            dst[(xx / rate_) + static_cast<std::size_t>(os.x) * ((yy / rate_) + static_cast<std::size_t>(os.y) * (z / rate_))] += src[i];
          }
      for (std::size_t k = 0; k < os.spatial(); ++k) dst[k] /= static_cast<T>(counts[k]);
    }
  return y;
}

template <class T>
Tensor5<T> AvgPool3d<T>::backward(const Tensor5<T>& dy) {
  const Shape5& os = dy.shape();
  Tensor5<T> dx(in_shape_);
  std::vector<int> counts(os.spatial(), 0);
  auto cell_of = [&](int xx, int yy, int z) {
    return (xx / rate_) + static_cast<std::size_t>(os.x) * ((yy / rate_) + static_cast<std::size_t>(os.y) * (z / rate_));
  };
  for (int z = 0; z < in_shape_.z; ++z)
    for (int yy = 0; yy < in_shape_.y; ++yy)
      for (int xx = 0; xx < in_shape_.x; ++xx) ++counts[cell_of(xx, yy, z)];
  for (int b = 0; b < os.n; ++b)
    for (int c = 0; c < os.c; ++c) {
      const T* g = dy.channel(b, c);
      T* dst = dx.channel(b, c);
      std::size_t i = 0;
      for (int z = 0; z < in_shape_.z; ++z)
        for (int yy = 0; yy < in_shape_.y; ++yy)
          for (int xx = 0; xx < in_shape_.x; ++xx, ++i) {
            const auto k = cell_of(xx, yy, z);
            dst[i] = g[k] / static_cast<T>(counts[k]);
          }
    }
  return dx;
}

template <class T>
UpsampleNearest<T>::UpsampleNearest(int factor, std::array<int, 3> target) : factor_(factor), target_(target) {
  if (factor < 1) throw std::invalid_argument("upsampling factor must be >= 1");
}

template <class T>
Tensor5<T> UpsampleNearest<T>::forward(const Tensor5<T>& x, Mode) {
  in_shape_ = x.shape();
  const Shape5 os{in_shape_.n, in_shape_.c, target_[0], target_[1], target_[2]};
  if ((os.x - 1) / factor_ >= in_shape_.x || (os.y - 1) / factor_ >= in_shape_.y ||
      (os.z - 1) / factor_ >= in_shape_.z) {
    throw std::invalid_argument("upsampling target exceeds source grid: " + to_string(in_shape_));
  }
  Tensor5<T> y(os);
  for (int b = 0; b < os.n; ++b)
    for (int c = 0; c < os.c; ++c) {
      T* dst = y.channel(b, c);
      std::size_t i = 0;
      for (int z = 0; z < os.z; ++z)
        for (int yy = 0; yy < os.y; ++yy)
          for (int xx = 0; xx < os.x; ++xx, ++i) dst[i] = x.at(b, c, xx / factor_, yy / factor_, z / factor_);
    }
  return y;
}

template <class T>
Tensor5<T> UpsampleNearest<T>::backward(const Tensor5<T>& dy) {
  const Shape5& os = dy.shape();
  Tensor5<T> dx(in_shape_);
  for (int b = 0; b < os.n; ++b)
    for (int c = 0; c < os.c; ++c) {
      const T* g = dy.channel(b, c);
      std::size_t i = 0;
      for (int z = 0; z < os.z; ++z)
        for (int yy = 0; yy < os.y; ++yy)
          for (int xx = 0; xx < os.x; ++xx, ++i) dx.at(b, c, xx / factor_, yy / factor_, z / factor_) += g[i];
    }
  return dx;
}

// ------------------------------------------------------------ composites

template <class T>
ConvBnRelu<T>::ConvBnRelu(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
                          int dilation)
    : conv_(name + ".conv", in_channels, out_channels, kernel, stride, dilation), bn_(name + ".bn", out_channels) {}

template <class T>
Tensor5<T> ConvBnRelu<T>::forward(const Tensor5<T>& x, Mode mode) {
  return relu_.forward(bn_.forward(conv_.forward(x, mode), mode), mode);
}

template <class T>
Tensor5<T> ConvBnRelu<T>::backward(const Tensor5<T>& dy) {
  return conv_.backward(bn_.backward(relu_.backward(dy)));
}

template <class T>
void ConvBnRelu<T>::collect(ParamRefs<T>& refs) {
  conv_.collect(refs);
  bn_.collect(refs);
}

template <class T>
UpConvBnRelu<T>::UpConvBnRelu(const std::string& name, int in_channels, int out_channels)
    : deconv_(name + ".deconv", in_channels, out_channels), bn_(name + ".bn", out_channels) {}

template <class T>
Tensor5<T> UpConvBnRelu<T>::forward(const Tensor5<T>& x, Mode mode) {
  return relu_.forward(bn_.forward(deconv_.forward(x, mode), mode), mode);
}

template <class T>
Tensor5<T> UpConvBnRelu<T>::backward(const Tensor5<T>& dy) {
  return deconv_.backward(bn_.backward(relu_.backward(dy)));
}

template <class T>
void UpConvBnRelu<T>::collect(ParamRefs<T>& refs) {
  deconv_.collect(refs);
  bn_.collect(refs);
}

template <class T>
Tensor5<T> concat_channels(const std::vector<const Tensor5<T>*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  Shape5 s = parts.front()->shape();
  s.c = 0;
  for (const auto* p : parts) {
    if (p->shape().n != s.n || !p->shape().same_spatial(s)) {
      throw std::invalid_argument("concat shape mismatch: " + to_string(p->shape()));
    }
    s.c += p->shape().c;
  }
  Tensor5<T> out(s);
  for (int b = 0; b < s.n; ++b) {
    T* dst = out.sample(b);
    for (const auto* p : parts) {
      const std::size_t len = static_cast<std::size_t>(p->shape().c) * s.spatial();
      std::copy(p->sample(b), p->sample(b) + len, dst);
      dst += len;
    }
  }
  return out;
}

template <class T>
std::vector<Tensor5<T>> split_channels(const Tensor5<T>& whole, const std::vector<int>& channels) {
  std::vector<Tensor5<T>> out;
  const Shape5& s = whole.shape();
  int total = 0;
  for (int c : channels) {
    out.emplace_back(Shape5{s.n, c, s.x, s.y, s.z});
    total += c;
  }
  if (total != s.c) throw std::invalid_argument("split channel counts do not match " + to_string(s));
  for (int b = 0; b < s.n; ++b) {
    const T* src = whole.sample(b);
    for (auto& part : out) {
      const std::size_t len = static_cast<std::size_t>(part.shape().c) * s.spatial();
      std::copy(src, src + len, part.sample(b));
      src += len;
    }
  }
  return out;
}

template <class T>
void add_inplace(Tensor5<T>& acc, const Tensor5<T>& x) {
  if (acc.shape() != x.shape()) {
    throw std::invalid_argument("add shape mismatch: " + to_string(acc.shape()) + " vs " + to_string(x.shape()));
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

#define DDSPSEG_INSTANTIATE(T)                                                                    \
  template struct Parameter<T>;                                                                   \
  template class Conv3d<T>;                                                                       \
  template class ConvTranspose3d<T>;                                                              \
  template class BatchNorm3d<T>;                                                                  \
  template class Relu<T>;                                                                         \
  template class Sigmoid<T>;                                                                      \
  template class AvgPool3d<T>;                                                                    \
  template class UpsampleNearest<T>;                                                              \
  template class ConvBnRelu<T>;                                                                   \
  template class UpConvBnRelu<T>;                                                                 \
  template Tensor5<T> concat_channels<T>(const std::vector<const Tensor5<T>*>&);                 \
  template std::vector<Tensor5<T>> split_channels<T>(const Tensor5<T>&, const std::vector<int>&); \
  template void add_inplace<T>(Tensor5<T>&, const Tensor5<T>&);

DDSPSEG_INSTANTIATE(float)
DDSPSEG_INSTANTIATE(double)

#undef DDSPSEG_INSTANTIATE

}  // namespace ddspseg::nn
