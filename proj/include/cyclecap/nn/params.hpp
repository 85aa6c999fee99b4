#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cyclecap/autodiff/tensor.hpp"

namespace cyclecap::nn {

template <typename T>
using Tensor = ad::Tensor<T>;

enum class Mode { train, eval };

/// Flat, path-named view over a network's tensors. `params` are trained by
/// the optimizer; `buffers` are state updated by forward passes (batch-norm
/// running statistics, power-iteration vectors).
template <typename T>
struct LayerParams {
  std::vector<std::pair<std::string, Tensor<T>>> params;
  std::vector<std::pair<std::string, Tensor<T>>> buffers;

  void add_param(std::string name, const Tensor<T>& t) { params.emplace_back(std::move(name), t); }
  void add_buffer(std::string name, const Tensor<T>& t) { buffers.emplace_back(std::move(name), t); }

  void append(const LayerParams& other) {
    params.insert(params.end(), other.params.begin(), other.params.end());
    buffers.insert(buffers.end(), other.buffers.begin(), other.buffers.end());
  }

  /// Every tensor (params then buffers) keyed by name. Throws on duplicate
  /// names or on one tensor registered under two names.
  std::map<std::string, Tensor<T>> by_name() const;

  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& [name, t] : params) out.push_back(t);
    return out;
  }
};

template <typename T>
void zero_grads(const LayerParams<T>& params);

template <typename T>
void set_trainable(const LayerParams<T>& params, bool flag);

/// Copies values by name between two parameter views (any precision).
template <typename To, typename From>
void copy_values(const LayerParams<To>& dst, const LayerParams<From>& src);

}  // namespace cyclecap::nn
