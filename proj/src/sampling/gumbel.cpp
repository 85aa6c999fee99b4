#include "cyclecap/sampling/gumbel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cyclecap::sampling {

double GumbelConfig::tau_at(std::size_t epoch, std::size_t total_epochs) const {
  if (!anneal || total_epochs <= 1) return tau;
  const double frac = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(total_epochs - 1));
  return tau + (tau_final - tau) * frac;
}

void GumbelConfig::validate() const {
  if (!(tau > 0.0) || (anneal && !(tau_final > 0.0))) {
    throw std::invalid_argument("gumbel: temperature must be positive, got " + std::to_string(tau) + " -> " +
                                std::to_string(tau_final));
  }
}

template <typename T>
ad::Tensor<T> gumbel_noise(const ad::Shape& shape, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<T> g(ad::numel(shape));
  for (auto& x : g) {
    const double u = std::clamp(uniform(rng), 1e-10, 1.0 - 1e-10);
    x = static_cast<T>(-std::log(-std::log(u)));
  }
  return ad::Tensor<T>(shape, std::move(g));
}

namespace {

void check(const ad::Shape& a, const ad::Shape& b, double tau, const char* op) {
  if (a != b || a.empty()) {
    throw ad::ShapeError(std::string(op) + ": input " + ad::to_string(a) + " and noise " + ad::to_string(b) +
                         " must share a non-scalar shape");
  }
  if (!(tau > 0.0)) throw std::invalid_argument(std::string(op) + ": tau must be positive");
}

}  // namespace

template <typename T>
ad::Tensor<T> gumbel_softmax_logits(const ad::Tensor<T>& logits, const ad::Tensor<T>& noise, T tau) {
  check(logits.shape(), noise.shape(), tau, "gumbel_softmax");
  return ad::softmax(ad::scale(ad::add(logits, noise), T(1) / tau), logits.rank() - 1);
}

template <typename T>
ad::Tensor<T> gumbel_softmax(const ad::Tensor<T>& probs, const ad::Tensor<T>& noise, T tau, bool* floored) {
  check(probs.shape(), noise.shape(), tau, "gumbel_softmax");
  const T floor = T(1e-10);
  const bool any = std::any_of(probs.data().begin(), probs.data().end(), [&](T p) { return p < floor; });
  if (floored) *floored = any;
  const auto safe = any ? ad::clamp(probs, floor, T(1)) : probs;
  return gumbel_softmax_logits(ad::log(safe), noise, tau);
}

template ad::Tensor<float> gumbel_noise<float>(const ad::Shape&, Rng&);
template ad::Tensor<double> gumbel_noise<double>(const ad::Shape&, Rng&);
template ad::Tensor<float> gumbel_softmax(const ad::Tensor<float>&, const ad::Tensor<float>&, float, bool*);
template ad::Tensor<double> gumbel_softmax(const ad::Tensor<double>&, const ad::Tensor<double>&, double, bool*);
template ad::Tensor<float> gumbel_softmax_logits(const ad::Tensor<float>&, const ad::Tensor<float>&, float);
template ad::Tensor<double> gumbel_softmax_logits(const ad::Tensor<double>&, const ad::Tensor<double>&, double);

}  // namespace cyclecap::sampling
