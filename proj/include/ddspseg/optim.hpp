#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ddspseg/layers.hpp"

namespace ddspseg::train {

struct SgdConfig {
  double lr = 1e-3;
  double momentum = 0.99;
  double weight_decay = 5e-3;
  /// lr is multiplied by decay_factor after every decay_period steps.
  int decay_period = 2000;
  double decay_factor = 0.2;

  void validate() const;
};

/// Momentum SGD with L2 weight decay and step decay of the learning rate.
class OptimizerState {
 public:
  OptimizerState() = default;
  explicit OptimizerState(SgdConfig cfg);

  const SgdConfig& config() const { return cfg_; }
  double lr() const { return lr_; }
  std::int64_t iteration() const { return iteration_; }
  const std::vector<std::vector<double>>& velocities() const { return velocity_; }

  /// v <- mu v - lr (g + wd p); p <- p + v for every parameter, then
  /// advances the iteration counter and applies the decay schedule.
  /// Throws NonFiniteGradient, leaving parameters and state untouched, if any
  /// gradient entry is NaN or infinite.
  template <class T>
  void step(std::vector<nn::Parameter<T>*>& params);

 private:
  SgdConfig cfg_;
  double lr_ = 1e-3;
  std::int64_t iteration_ = 0;
  std::vector<std::vector<double>> velocity_;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
void sgd_step(std::vector<nn::Parameter<T>*>& params, OptimizerState& state) {
  state.step(params);
}

}  // namespace ddspseg::train
