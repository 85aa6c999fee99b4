#include "cyclecap/training/optim.hpp"

#include <cmath>

namespace cyclecap::training {

template <typename T>
Adam<T>::Adam(nn::LayerParams<T> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& [name, p] : params_.params) {
    m_[name].assign(p.numel(), T(0));
    v_[name].assign(p.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  const T lr = static_cast<T>(config_.lr), eps = static_cast<T>(config_.eps), wd = static_cast<T>(config_.weight_decay);
  const T c1 = T(1) - static_cast<T>(std::pow(config_.beta1, static_cast<double>(t_)));
  const T c2 = T(1) - static_cast<T>(std::pow(config_.beta2, static_cast<double>(t_)));
  for (auto& [name, p] : params_.params) {
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = m_[name];
    auto& v = v_[name];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = g[i] + wd * w[i];
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace cyclecap::training
