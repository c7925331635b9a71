#include "ddspseg/ddsp.hpp"

#include <stdexcept>

namespace ddspseg::nn {

namespace {

void check_rates(const std::vector<int>& rates, const char* what) {
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (rates[i] <= 0) throw std::invalid_argument(std::string(what) + " rates must be positive");
    if (i > 0 && rates[i] <= rates[i - 1]) {
      throw std::invalid_argument(std::string(what) + " rates must be strictly increasing");
    }
  }
}

}  // namespace

void DdspConfig::validate() const {
  check_rates(dilation_rates, "dilation");
  check_rates(pooling_rates, "pooling");
  if (growth <= 0) throw std::invalid_argument("growth channels must be positive");
  if (branch_count() == 0) throw std::invalid_argument("DDSP block needs at least one branch");
}

template <class T>
GlobalPyramidPool<T>::GlobalPyramidPool(const std::string& name, int in_channels, int out_channels, int rate)
    : rate_(rate), pool_(rate), proj_(name + ".proj", in_channels, out_channels, 1), up_(rate, {1, 1, 1}) {}

template <class T>
Tensor5<T> GlobalPyramidPool<T>::forward(const Tensor5<T>& x, Mode mode) {
  const Shape5& s = x.shape();
  up_.set_target({s.x, s.y, s.z});
  return up_.forward(proj_.forward(pool_.forward(x, mode), mode), mode);
}

template <class T>
Tensor5<T> GlobalPyramidPool<T>::backward(const Tensor5<T>& dy) {
  return pool_.backward(proj_.backward(up_.backward(dy)));
}

template <class T>
void GlobalPyramidPool<T>::collect(ParamRefs<T>& refs) {
  proj_.collect(refs);
}

template <class T>
DdspBlock<T>::DdspBlock(const std::string& name, int in_channels, DdspConfig cfg, BlockWiring wiring)
    : in_(in_channels), cfg_(std::move(cfg)), wiring_(wiring) {
  cfg_.validate();
  int fed = in_;
  auto add = [&](std::unique_ptr<Module<T>> op, const std::string& branch_name) {
    branches_.push_back(std::unique_ptr<Branch>(new Branch{std::move(op), BatchNorm3d<T>(branch_name + ".bn", cfg_.growth), {}}));
    if (wiring_ == BlockWiring::dense) fed += cfg_.growth;
  };
  for (int r : cfg_.dilation_rates) {
    const std::string bn = name + ".dil" + std::to_string(r);
    add(std::make_unique<Conv3d<T>>(bn + ".conv", fed, cfg_.growth, 3, 1, r), bn);
  }
  for (int r : cfg_.pooling_rates) {
    const std::string bn = name + ".pool" + std::to_string(r);
    add(std::make_unique<GlobalPyramidPool<T>>(bn, fed, cfg_.growth, r), bn);
  }
}

template <class T>
Tensor5<T> DdspBlock<T>::forward(const Tensor5<T>& x, Mode mode) {
  std::vector<Tensor5<T>> outs;
  outs.reserve(branches_.size());
  std::vector<const Tensor5<T>*> parts{&x};
  for (auto& b : branches_) {
    Tensor5<T> y;
    if (wiring_ == BlockWiring::dense && parts.size() > 1) {
      y = b->op->forward(concat_channels(parts), mode);
    } else {
      y = b->op->forward(x, mode);
    }
    outs.push_back(b->relu.forward(b->bn.forward(y, mode), mode));
    parts.push_back(&outs.back());
  }
  return concat_channels(parts);
}

template <class T>
Tensor5<T> DdspBlock<T>::backward(const Tensor5<T>& dy) {
  const std::size_t n = branches_.size();
  std::vector<int> sizes(n + 1, cfg_.growth);
  sizes[0] = in_;
  auto grads = split_channels(dy, sizes);  // grads[0]: block input, grads[i+1]: branch i
  for (std::size_t k = n; k-- > 0;) {
    auto& b = *branches_[k];
    Tensor5<T> g_in = b.op->backward(b.bn.backward(b.relu.backward(grads[k + 1])));
    if (wiring_ == BlockWiring::dense) {
      std::vector<int> in_sizes(k + 1, cfg_.growth);
      in_sizes[0] = in_;
      auto pieces = split_channels(g_in, in_sizes);
      for (std::size_t j = 0; j <= k; ++j) add_inplace(grads[j], pieces[j]);
    } else {
      add_inplace(grads[0], g_in);
    }
  }
  return std::move(grads[0]);
}

template <class T>
void DdspBlock<T>::collect(ParamRefs<T>& refs) {
  for (auto& b : branches_) {
    b->op->collect(refs);
    b->bn.collect(refs);
  }
}

template class GlobalPyramidPool<float>;
template class GlobalPyramidPool<double>;
template class DdspBlock<float>;
template class DdspBlock<double>;

}  // namespace ddspseg::nn
