#include "cyclecap/nn/params.hpp"

#include <set>
#include <stdexcept>

namespace cyclecap::nn {

template <typename T>
std::map<std::string, Tensor<T>> LayerParams<T>::by_name() const {
  std::map<std::string, Tensor<T>> out;
  std::set<const ad::Node<T>*> nodes;
  auto add = [&](const std::string& name, const Tensor<T>& t) {
    if (!out.emplace(name, t).second) throw std::logic_error("parameter name registered twice: " + name);
    if (!nodes.insert(t.node().get()).second) {
      throw std::logic_error("tensor registered under a second name: " + name);
    }
  };
  for (const auto& [name, t] : params) add(name, t);
  for (const auto& [name, t] : buffers) add(name, t);
  return out;
}

template <typename T>
void zero_grads(const LayerParams<T>& params) {
  for (auto [name, t] : params.params) {
    if (t.has_grad()) t.zero_grad();
  }
}

template <typename T>
void set_trainable(const LayerParams<T>& params, bool flag) {
  for (auto [name, t] : params.params) t.set_requires_grad(flag);
}

template <typename To, typename From>
void copy_values(const LayerParams<To>& dst, const LayerParams<From>& src) {
  const auto from = src.by_name();
  for (auto [name, t] : dst.by_name()) {
    auto it = from.find(name);
    if (it == from.end()) throw std::invalid_argument("copy_values: no source tensor named " + name);
    if (it->second.shape() != t.shape()) {
      throw ad::ShapeError("copy_values: " + name + " has shape " + ad::to_string(t.shape()) +
                           " but source has " + ad::to_string(it->second.shape()));
    }
    auto out = t.mutable_data();
    const auto in = it->second.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(in[i]);
  }
}

template struct LayerParams<float>;
template struct LayerParams<double>;
template void zero_grads(const LayerParams<float>&);
template void zero_grads(const LayerParams<double>&);
template void set_trainable(const LayerParams<float>&, bool);
template void set_trainable(const LayerParams<double>&, bool);
template void copy_values(const LayerParams<float>&, const LayerParams<float>&);
template void copy_values(const LayerParams<float>&, const LayerParams<double>&);
template void copy_values(const LayerParams<double>&, const LayerParams<float>&);
template void copy_values(const LayerParams<double>&, const LayerParams<double>&);

}  // namespace cyclecap::nn
