#include "ddspseg/optim.hpp"

#include <cmath>

namespace ddspseg::train {

void SgdConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
  if (decay_period <= 0) throw std::invalid_argument("lr decay period must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw std::invalid_argument("lr decay factor must lie in (0, 1]");
}

OptimizerState::OptimizerState(SgdConfig cfg) : cfg_(cfg), lr_(cfg.lr) { cfg_.validate(); }

template <class T>
void OptimizerState::step(std::vector<nn::Parameter<T>*>& params) {
  if (velocity_.empty()) {
    for (auto* p : params) velocity_.emplace_back(p->size(), 0.0);
  }
  if (velocity_.size() != params.size()) throw std::invalid_argument("optimizer state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (velocity_[k].size() != params[k]->size()) {
      throw std::invalid_argument("velocity shape mismatch for " + params[k]->name);
    }
    for (std::size_t i = 0; i < params[k]->size(); ++i) {
      if (!std::isfinite(static_cast<double>(params[k]->grad[i]))) {
        throw NonFiniteGradient("non-finite gradient in " + params[k]->name + "[" + std::to_string(i) + "] at step " +
                                std::to_string(iteration_));
      }
    }
  }
  const double mu = cfg_.momentum, wd = cfg_.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double w = static_cast<double>(p.value[i]);
      v[i] = mu * v[i] - lr_ * (static_cast<double>(p.grad[i]) + wd * w);
      p.value[i] = static_cast<T>(w + v[i]);
    }
  }
  ++iteration_;
  if (iteration_ % cfg_.decay_period == 0) lr_ *= cfg_.decay_factor;
}

template void OptimizerState::step<float>(std::vector<nn::Parameter<float>*>&);
template void OptimizerState::step<double>(std::vector<nn::Parameter<double>*>&);

}  // namespace ddspseg::train
