#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cyclecap/autodiff/ops.hpp"
#include "cyclecap/common/rng.hpp"
#include "cyclecap/nn/params.hpp"

namespace cyclecap::nn {

// Initializers. Linear and recurrent weights use uniform(-k, k) with
// k = 1/sqrt(fan_in); convolution kernels use normal(0, 0.02).
template <typename T>
Tensor<T> init_uniform_fan_in(ad::Shape shape, std::size_t fan_in, Rng& rng);
template <typename T>
Tensor<T> init_normal(ad::Shape shape, double stddev, Rng& rng);

/// Power-iteration state for one weight viewed as a [rows, cols] matrix,
/// rows = first dimension of the weight.
template <typename T>
class SpectralNorm {
 public:
  SpectralNorm() = default;
  SpectralNorm(std::size_t rows, Rng& rng);

  /// Training mode runs `iters` rounds from the stored u and persists the new
  /// u; eval mode reuses the stored u without iterating.
  Tensor<T> apply(const Tensor<T>& weight, Mode mode, std::size_t iters = 1);
  /// Iterates to convergence and stores the result.
  T converge(const Tensor<T>& weight);
  T last_sigma() const { return last_sigma_; }
  bool degenerate() const { return degenerate_; }
  const Tensor<T>& u() const { return u_; }
  void collect(const std::string& prefix, LayerParams<T>& out) const;

 private:
  Tensor<T> u_;
  T last_sigma_ = T(0);
  bool degenerate_ = false;
};

/// sigma_hat and u' of `iters` power-iteration rounds starting from `u`.
template <typename T>
struct SpectralEstimate {
  T sigma;
  std::vector<T> u;
  std::vector<T> v;
  bool degenerate;
};

template <typename T>
SpectralEstimate<T> power_iteration(std::span<const T> weight, std::size_t rows, std::size_t cols,
                                    std::span<const T> u, std::size_t iters);

/// Power iteration until sigma changes by less than `rel_tol` (relative).
template <typename T>
SpectralEstimate<T> power_iteration_converged(std::span<const T> weight, std::size_t rows,
                                              std::size_t cols, std::span<const T> u,
                                              double rel_tol = 1e-12,
                                              std::size_t max_iters = 20000);

/// weight / sigma_hat as a differentiable op; u and v are treated as constants.
/// sigma_hat is clamped below at 1e-12 (flagged as degenerate).
template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, const SpectralEstimate<T>& estimate);

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool spectral = false);

  /// x: [batch, in] -> [batch, out]
  Tensor<T> forward(const Tensor<T>& x, Mode mode = Mode::train);
  Tensor<T> effective_weight(Mode mode);
  void collect(const std::string& prefix, LayerParams<T>& out) const;

  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]
  std::optional<SpectralNorm<T>> sn;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, ad::Conv2dOptions opts, Rng& rng,
         bool spectral = false);

  Tensor<T> forward(const Tensor<T>& x, Mode mode = Mode::train);
  Tensor<T> effective_weight(Mode mode);
  void collect(const std::string& prefix, LayerParams<T>& out) const;

  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out]
  ad::Conv2dOptions opts;
  std::optional<SpectralNorm<T>> sn;
};

template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, ad::Conv2dOptions opts, Rng& rng,
                  bool with_bias = true);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, LayerParams<T>& out) const;

  Tensor<T> weight;  // [in, out, k, k]
  std::optional<Tensor<T>> bias;
  ad::Conv2dOptions opts;
};

/// Per-channel batch normalization over [N, C] or [N, C, H, W].
template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels, T eps = T(1e-5), T momentum = T(0.1));

  /// Training mode standardizes with batch statistics (requires N >= 2) and
  /// updates the running statistics; eval mode uses the running statistics.
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void collect(const std::string& prefix, LayerParams<T>& out) const;

  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);
};

template <typename T>
struct LstmState {
  Tensor<T> hidden;  // [batch, hidden_dim]
  Tensor<T> cell;    // [batch, hidden_dim]

  static LstmState zeros(std::size_t batch, std::size_t hidden_dim);
};

/// Standard LSTM cell, gate order (input, forget, candidate, output).
template <typename T>
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

  /// Returns the next state; the step output is `next.hidden`.
  LstmState<T> step(const Tensor<T>& input, const LstmState<T>& state) const;
  void collect(const std::string& prefix, LayerParams<T>& out) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }

  Tensor<T> w_input;   // [input_dim, 4 * hidden]
  Tensor<T> w_hidden;  // [hidden, 4 * hidden]
  Tensor<T> bias;      // [4 * hidden]

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
};

/// Embeds a soft one-hot token sequence and reads it in both directions.
/// Output is concat(final forward hidden, final backward hidden).
template <typename T>
class BiLstmEncoder {
 public:
  BiLstmEncoder() = default;
  BiLstmEncoder(std::size_t vocab, std::size_t embed_dim, std::size_t hidden_dim, std::size_t seq_len,
                Rng& rng);

  /// tokens: [batch, seq_len, vocab] -> [batch, 2 * hidden_dim]
  Tensor<T> encode(const Tensor<T>& tokens) const;
  void collect(const std::string& prefix, LayerParams<T>& out) const;

  std::size_t output_dim() const { return 2 * forward_cell.hidden_dim(); }
  std::size_t seq_len() const { return seq_len_; }

  Tensor<T> embedding;  // [vocab, embed_dim]
  LstmCell<T> forward_cell;
  LstmCell<T> backward_cell;

 private:
  std::size_t seq_len_ = 0;
};

/// [batch, steps, vocab] soft tokens times an embedding matrix -> per-step
/// inputs [batch, embed_dim], one tensor per step.
template <typename T>
std::vector<Tensor<T>> embed_sequence(const Tensor<T>& tokens, const Tensor<T>& embedding);

}  // namespace cyclecap::nn
