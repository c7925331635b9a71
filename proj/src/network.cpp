#include "ddspseg/network.hpp"

#include <random>
#include <stdexcept>

namespace ddspseg::nn {

const char* to_string(LongConnection c) {
  switch (c) {
    case LongConnection::none: return "none";
    case LongConnection::residual: return "residual";
    case LongConnection::concat: return "concat";
  }
  return "?";
}

const char* to_string(BlockKind b) {
  switch (b) {
    case BlockKind::none: return "none";
    case BlockKind::ddsp: return "ddsp";
    case BlockKind::aspp: return "aspp";
  }
  return "?";
}

LongConnection parse_long_connection(std::string_view s) {
  if (s == "none") return LongConnection::none;
  if (s == "residual") return LongConnection::residual;
  if (s == "concat") return LongConnection::concat;
  throw std::invalid_argument("unknown long connection '" + std::string(s) + "' (none|residual|concat)");
}

BlockKind parse_block_kind(std::string_view s) {
  if (s == "none") return BlockKind::none;
  if (s == "ddsp") return BlockKind::ddsp;
  if (s == "aspp") return BlockKind::aspp;
  throw std::invalid_argument("unknown block '" + std::string(s) + "' (none|ddsp|aspp)");
}

void NetConfig::validate() const {
  if (in_channels <= 0) throw std::invalid_argument("in_channels must be positive");
  for (int w : widths) {
    if (w <= 0) throw std::invalid_argument("stage widths must be positive");
  }
  if (block != BlockKind::none) ddsp.validate();
  if (!fusion[0]) throw std::invalid_argument("fusion mask must enable the main head");
}

namespace {

/// Joins a decoder tensor with the same-resolution encoder tensor.
template <class T>
class LongLink {
 public:
  LongLink(const std::string& name, LongConnection mode, int channels, double scale)
      : mode_(mode), channels_(channels), scale_(static_cast<T>(scale)) {
    if (mode == LongConnection::concat) merge_ = std::make_unique<ConvBnRelu<T>>(name + ".merge", 2 * channels, channels, 1);
  }

  Tensor5<T> forward(const Tensor5<T>& up, const Tensor5<T>& skip, Mode mode) {
    switch (mode_) {
      case LongConnection::none:
        return up;
      case LongConnection::residual: {
        Tensor5<T> out = up;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale_ * skip[i];
        return out;
      }
      case LongConnection::concat:
        return merge_->forward(concat_channels<T>({&up, &skip}), mode);
    }
    return up;
  }

  /// Returns the gradient for `up`; adds the skip gradient into d_skip.
  Tensor5<T> backward(const Tensor5<T>& dy, Tensor5<T>& d_skip) {
    switch (mode_) {
      case LongConnection::none:
        return dy;
      case LongConnection::residual:
        for (std::size_t i = 0; i < dy.size(); ++i) d_skip[i] += scale_ * dy[i];
        return dy;
      case LongConnection::concat: {
        auto parts = split_channels(merge_->backward(dy), {channels_, channels_});
        add_inplace(d_skip, parts[1]);
        return std::move(parts[0]);
      }
    }
    return dy;
  }

  void collect(ParamRefs<T>& refs) {
    if (merge_) merge_->collect(refs);
  }

 private:
  LongConnection mode_;
  int channels_;
  T scale_;
  std::unique_ptr<ConvBnRelu<T>> merge_;
};

/// 1x1x1 projection to one channel, upsampling to input resolution, sigmoid.
template <class T>
class Head {
 public:
  Head(const std::string& name, int channels, int factor) : proj_(name + ".conv", channels, 1, 1), factor_(factor) {
    if (factor > 1) up_ = std::make_unique<UpsampleNearest<T>>(factor, std::array<int, 3>{1, 1, 1});
  }

  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) {
    Tensor5<T> y = proj_.forward(x, mode);
    if (up_) {
      const Shape5& s = y.shape();
      up_->set_target({s.x * factor_, s.y * factor_, s.z * factor_});
      y = up_->forward(y, mode);
    }
    return sigmoid_.forward(y, mode);
  }

  Tensor5<T> backward(const Tensor5<T>& dp) {
    Tensor5<T> g = sigmoid_.backward(dp);
    if (up_) g = up_->backward(g);
    return proj_.backward(g);
  }

  void collect(ParamRefs<T>& refs) { proj_.collect(refs); }

 private:
  Conv3d<T> proj_;
  int factor_;
  std::unique_ptr<UpsampleNearest<T>> up_;
  Sigmoid<T> sigmoid_;
};

}  // namespace

template <class T>
struct Network<T>::Impl {
  ConvBnRelu<T> enc1, down1, enc2, down2;
  std::unique_ptr<DdspBlock<T>> block;
  std::unique_ptr<ConvBnRelu<T>> merge;
  UpConvBnRelu<T> up2;
  LongLink<T> link2;
  ConvBnRelu<T> dec2;
  UpConvBnRelu<T> up1;
  LongLink<T> link1;
  ConvBnRelu<T> dec1;
  Head<T> head_main, head2, head3;

  // Forward caches needed to route gradients through long connections.
  Shape5 e1_shape{}, e2_shape{};

  explicit Impl(const NetConfig& c)
      : enc1("enc1", c.in_channels, c.widths[0], 3),
        down1("down1", c.widths[0], c.widths[1], 3, 2),
        enc2("enc2", c.widths[1], c.widths[1], 3),
        down2("down2", c.widths[1], c.widths[2], 3, 2),
        up2("up2", c.widths[2], c.widths[1]),
        link2("link2", c.long_connection, c.widths[1], c.skip_scale),
        dec2("dec2", c.widths[1], c.widths[1], 3),
        up1("up1", c.widths[1], c.widths[0]),
        link1("link1", c.long_connection, c.widths[0], c.skip_scale),
        dec1("dec1", c.widths[0], c.widths[0], 3),
        head_main("head_main", c.widths[0], 1),
        head2("head2", c.widths[1], 2),
        head3("head3", c.widths[2], 4) {
    if (c.block != BlockKind::none) {
      const auto wiring = c.block == BlockKind::ddsp ? BlockWiring::dense : BlockWiring::parallel;
      block = std::make_unique<DdspBlock<T>>("block", c.widths[2], c.ddsp, wiring);
      merge = std::make_unique<ConvBnRelu<T>>("block.merge", block->out_channels(), c.widths[2], 1);
    }
  }

  void collect(ParamRefs<T>& r) {
    enc1.collect(r);
    down1.collect(r);
    enc2.collect(r);
    down2.collect(r);
    if (block) {
      block->collect(r);
      merge->collect(r);
    }
    up2.collect(r);
    link2.collect(r);
    dec2.collect(r);
    up1.collect(r);
    link1.collect(r);
    dec1.collect(r);
    head_main.collect(r);
    head2.collect(r);
    head3.collect(r);
  }
};

template <class T>
Network<T>::Network(NetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  impl_ = std::make_unique<Impl>(cfg_);
  impl_->collect(refs_);
  initialize(0);
}

template <class T>
Network<T>::~Network() = default;
template <class T>
Network<T>::Network(Network&&) noexcept = default;
template <class T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;

template <class T>
void Network<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.01);
  auto ends_with = [](const std::string& s, std::string_view tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
  };
  for (auto* p : refs_.params) {
    if (ends_with(p->name, ".deconv.weight")) continue;
    if (ends_with(p->name, ".conv.weight") || ends_with(p->name, ".proj.weight")) {
      for (auto& v : p->value) v = static_cast<T>(gauss(rng));
    } else if (ends_with(p->name, ".gamma")) {
      std::fill(p->value.begin(), p->value.end(), T(1));
    } else {
      std::fill(p->value.begin(), p->value.end(), T(0));
    }
  }
  for (auto* b : refs_.buffers) {
    std::fill(b->value.begin(), b->value.end(), ends_with(b->name, ".running_var") ? T(1) : T(0));
  }
  impl_->up2.deconv().init_trilinear();
  impl_->up1.deconv().init_trilinear();
  zero_grad();
}

template <class T>
void Network<T>::zero_grad() {
  for (auto* p : refs_.params) p->zero_grad();
}

template <class T>
Heads<T> Network<T>::forward(const Tensor5<T>& x, Mode mode) {
  const Shape5& s = x.shape();
  if (s.c != cfg_.in_channels) {
    throw std::invalid_argument("network expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
                                to_string(s));
  }
  if (s.x % 4 != 0 || s.y % 4 != 0 || s.z % 4 != 0) {
    throw std::invalid_argument("network input spatial dims must be divisible by 4, got " + to_string(s));
  }
  auto& m = *impl_;
  Tensor5<T> e1 = m.enc1.forward(x, mode);
  Tensor5<T> e2 = m.enc2.forward(m.down1.forward(e1, mode), mode);
  Tensor5<T> bottom = m.down2.forward(e2, mode);
  if (m.block) bottom = m.merge->forward(m.block->forward(bottom, mode), mode);
  m.e1_shape = e1.shape();
  m.e2_shape = e2.shape();

  Heads<T> h;
  h.stage3 = m.head3.forward(bottom, mode);
  Tensor5<T> f2 = m.dec2.forward(m.link2.forward(m.up2.forward(bottom, mode), e2, mode), mode);
  h.stage2 = m.head2.forward(f2, mode);
  Tensor5<T> f1 = m.dec1.forward(m.link1.forward(m.up1.forward(f2, mode), e1, mode), mode);
  h.main = m.head_main.forward(f1, mode);
  return h;
}

template <class T>
void Network<T>::backward(const Heads<T>& d) {
  auto& m = *impl_;
  Tensor5<T> g_e1(m.e1_shape), g_e2(m.e2_shape);

  Tensor5<T> g = m.dec1.backward(m.head_main.backward(d.main));
  g = m.up1.backward(m.link1.backward(g, g_e1));
  add_inplace(g, m.head2.backward(d.stage2));

  g = m.dec2.backward(g);
  g = m.up2.backward(m.link2.backward(g, g_e2));
  add_inplace(g, m.head3.backward(d.stage3));

  if (m.block) g = m.block->backward(m.merge->backward(g));
  add_inplace(g_e2, m.down2.backward(g));
  add_inplace(g_e1, m.down1.backward(m.enc2.backward(g_e2)));
  m.enc1.backward(g_e1);
}

template <class T>
Tensor5<T> fuse_outputs(const Heads<T>& heads, const std::array<bool, 3>& mask) {
  int enabled = 0;
  for (bool b : mask) enabled += b;
  if (enabled == 0) throw std::invalid_argument("fusion mask enables no head");
  Tensor5<T> out(heads.main.shape());
  for (std::size_t k = 0; k < 3; ++k) {
    if (mask[k] && heads[k].shape() != out.shape()) throw std::invalid_argument("fused heads differ in shape");
  }
  // Summing in double keeps the mean of identical float maps exact.
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      if (mask[k]) s += static_cast<double>(heads[k][i]);
    }
    out[i] = static_cast<T>(s / enabled);
  }
  return out;
}

template class Network<float>;
template class Network<double>;
template Tensor5<float> fuse_outputs<float>(const Heads<float>&, const std::array<bool, 3>&);
template Tensor5<double> fuse_outputs<double>(const Heads<double>&, const std::array<bool, 3>&);

}  // namespace ddspseg::nn
