#include "cyclecap/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cyclecap::ad {

double grad_check(const ScalarFn& f, const Tensor<double>& x, double eps) {
  Tensor<double> probe(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  const auto loss = f(probe);
  if (loss.numel() != 1) throw ShapeError("grad_check: f must return a scalar, got " + to_string(loss.shape()));
  backward(loss);
  std::vector<double> analytic(probe.numel(), 0.0);
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  double worst = 0.0;
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    Tensor<double> plus(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    Tensor<double> minus(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    plus.mutable_data()[i] += eps;
    minus.mutable_data()[i] -= eps;
    // Divide by the step actually taken after rounding.
    const double step = plus.data()[i] - minus.data()[i];
    const double numeric = (f(plus).item() - f(minus).item()) / step;
    const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(numeric), 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace cyclecap::ad
