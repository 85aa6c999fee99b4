#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "cyclecap/autodiff/tensor.hpp"

// Differentiable primitives. Every function records its backward closure on
// the result node when any operand requires a gradient.
//
// Layout conventions: images and feature maps are NCHW; conv2d kernels are
// [out, in, kh, kw]; conv2d_transpose kernels are [in, out, kh, kw].
namespace cyclecap::ad {

// Elementwise binary ops with numpy-style broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T s);
template <typename T> Tensor<T> neg(const Tensor<T>& x);

/// [m, k] x [k, n] -> [m, n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 Conv2dOptions opts);
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& weight,
                           const std::optional<Tensor<T>>& bias, Conv2dOptions opts);
/// Non-overlapping max pooling with a square window; trailing rows/cols that
/// do not fill a window are dropped.
template <typename T> Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Reduces one axis; the axis is removed from the result shape.
template <typename T> Tensor<T> sum(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> mean(const Tensor<T>& x, std::size_t axis);

template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Half-open range [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
/// x: [n, k], index: n entries -> [n] with out[i] = x[i, index[i]].
template <typename T>
Tensor<T> select_columns(const Tensor<T>& x, const std::vector<std::size_t>& index);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
/// Gradient passes only where lo <= x <= hi.
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }

/// Output shape of broadcasting `a` against `b`; throws ShapeError naming both.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op);

}  // namespace cyclecap::ad
