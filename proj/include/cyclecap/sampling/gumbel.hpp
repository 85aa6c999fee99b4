#pragma once

#include <cstddef>

#include "cyclecap/autodiff/ops.hpp"
#include "cyclecap/common/rng.hpp"

namespace cyclecap::sampling {

/// Temperature schedule. With `anneal` set, tau moves linearly from `tau`
/// to `tau_final` over the run; otherwise it stays at `tau`.
struct GumbelConfig {
  double tau = 1.0;
  bool anneal = false;
  double tau_final = 1.0;

  double tau_at(std::size_t epoch, std::size_t total_epochs) const;
  void validate() const;
  bool operator==(const GumbelConfig&) const = default;
};

/// i.i.d. standard Gumbel samples g = -log(-log u), u clamped to [1e-10, 1 - 1e-10].
template <typename T>
ad::Tensor<T> gumbel_noise(const ad::Shape& shape, Rng& rng);

/// Relaxed categorical sample over the last axis from class probabilities.
/// Entries below 1e-10 are floored (the floor is reported through `floored`);
/// renormalizing afterwards would not change the softmax, so it is skipped.
template <typename T>
ad::Tensor<T> gumbel_softmax(const ad::Tensor<T>& probs, const ad::Tensor<T>& noise, T tau,
                             bool* floored = nullptr);

/// Same relaxation from unnormalized logits (no log taken).
template <typename T>
ad::Tensor<T> gumbel_softmax_logits(const ad::Tensor<T>& logits, const ad::Tensor<T>& noise, T tau);

}  // namespace cyclecap::sampling
