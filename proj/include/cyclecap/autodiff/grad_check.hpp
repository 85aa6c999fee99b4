#pragma once

#include <functional>

#include "cyclecap/autodiff/tensor.hpp"

namespace cyclecap::ad {

using ScalarFn = std::function<Tensor<double>(const Tensor<double>&)>;

/// Central-difference check of the reverse-mode gradient of `f` at `x`.
/// Returns max_i |analytic_i - numeric_i| / max(|numeric_i|, 1e-8).
/// `f` must be a pure function of its argument (frozen noise, no state updates).
double grad_check(const ScalarFn& f, const Tensor<double>& x, double eps = 1e-5);

}  // namespace cyclecap::ad
