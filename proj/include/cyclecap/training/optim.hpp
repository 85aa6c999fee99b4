#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cyclecap/nn/params.hpp"

namespace cyclecap::training {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // L2 term added to the gradient
};

/// Adam over a fixed, named parameter set. Parameters that received no
/// gradient in a step are left untouched.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(nn::LayerParams<T> params, AdamConfig config);

  void step();
  void zero_grad() const { nn::zero_grads(params_); }
  const nn::LayerParams<T>& params() const { return params_; }
  std::uint64_t steps() const { return t_; }

  /// Moment buffers by parameter name, for checkpoints.
  std::map<std::string, std::vector<T>>& first_moments() { return m_; }
  std::map<std::string, std::vector<T>>& second_moments() { return v_; }
  const std::map<std::string, std::vector<T>>& first_moments() const { return m_; }
  const std::map<std::string, std::vector<T>>& second_moments() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  nn::LayerParams<T> params_;
  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<T>> m_, v_;
};

}  // namespace cyclecap::training
