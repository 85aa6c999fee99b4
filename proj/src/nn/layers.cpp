#include "cyclecap/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cyclecap::nn {

using ad::Shape;

template <typename T>
Tensor<T> init_uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-k, k);
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> init_normal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

// ---------------------------------------------------------------------------
// Spectral normalization

namespace {

template <typename T>
T normalize_in_place(std::vector<T>& v) {
  T norm = T(0);
  for (T x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > T(0)) {
    for (auto& x : v) x /= norm;
  }
  return norm;
}

// out = W^T u  (W: rows x cols)
template <typename T>
void mat_t_vec(std::span<const T> w, std::size_t rows, std::size_t cols, const std::vector<T>& u,
               std::vector<T>& out) {
  out.assign(cols, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T ur = u[r];
    const T* row = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += row[c] * ur;
  }
}

// out = W v
template <typename T>
void mat_vec(std::span<const T> w, std::size_t rows, std::size_t cols, const std::vector<T>& v,
             std::vector<T>& out) {
  out.assign(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = w.data() + r * cols;
    T acc = T(0);
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
}

constexpr double kSigmaFloor = 1e-12;

template <typename T>
SpectralEstimate<T> iterate(std::span<const T> weight, std::size_t rows, std::size_t cols,
                            std::span<const T> u0, std::size_t max_iters, double rel_tol) {
  if (weight.size() != rows * cols || u0.size() != rows) {
    throw ad::ShapeError("power_iteration: weight of " + std::to_string(weight.size()) +
                         " values is not " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " or u has " + std::to_string(u0.size()) + " entries");
  }
  SpectralEstimate<T> est{T(0), std::vector<T>(u0.begin(), u0.end()), {}, false};
  std::vector<T> wv;
  T prev = T(-1);
  for (std::size_t it = 0; it < max_iters; ++it) {
    mat_t_vec(weight, rows, cols, est.u, est.v);
    if (normalize_in_place(est.v) <= T(kSigmaFloor)) break;
    mat_vec(weight, rows, cols, est.v, wv);
    const T sigma = normalize_in_place(wv);
    if (sigma <= T(kSigmaFloor)) break;
    est.u = wv;
    if (rel_tol > 0.0 && prev >= T(0) && std::abs(sigma - prev) <= static_cast<T>(rel_tol) * sigma) break;
    prev = sigma;
  }
  // sigma = u^T W v with the final (u, v).
  mat_t_vec(weight, rows, cols, est.u, est.v);
  const T norm = normalize_in_place(est.v);
  if (norm <= T(kSigmaFloor)) {
    est.degenerate = true;
    est.sigma = T(kSigmaFloor);
    return est;
  }
  est.sigma = norm;
  return est;
}

}  // namespace

template <typename T>
SpectralEstimate<T> power_iteration(std::span<const T> weight, std::size_t rows, std::size_t cols,
                                    std::span<const T> u, std::size_t iters) {
  return iterate(weight, rows, cols, u, iters, 0.0);
}

template <typename T>
SpectralEstimate<T> power_iteration_converged(std::span<const T> weight, std::size_t rows, std::size_t cols,
                                              std::span<const T> u, double rel_tol, std::size_t max_iters) {
  return iterate(weight, rows, cols, u, max_iters, rel_tol);
}

template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, const SpectralEstimate<T>& est) {
  const std::size_t rows = weight.dim(0);
  const std::size_t cols = weight.numel() / rows;
  if (est.u.size() != rows || est.v.size() != cols) {
    throw ad::ShapeError("spectral_normalize: weight " + ad::to_string(weight.shape()) +
                         " does not match power-iteration vectors");
  }
  const T sigma = std::max(est.sigma, static_cast<T>(kSigmaFloor));
  std::vector<T> out(weight.data().begin(), weight.data().end());
  for (auto& x : out) x /= sigma;
  auto u = std::make_shared<std::vector<T>>(est.u);
  auto v = std::make_shared<std::vector<T>>(est.v);
  return ad::detail::make_result<T>(
      "spectral_normalize", weight.shape(), std::move(out), {weight.node()},
      [u, v, sigma, rows, cols](ad::Node<T>& self) {
        auto& p = *self.parents[0];
        // d(W/s) = dW/s - W (u^T dW v)/s^2 ; adjoint below.
        T inner = T(0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) inner += self.grad[i] * p.value[i];
        const T coef = inner / (sigma * sigma);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            p.grad[i] += self.grad[i] / sigma - coef * (*u)[r] * (*v)[c];
          }
      });
}

template <typename T>
SpectralNorm<T>::SpectralNorm(std::size_t rows, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> u(rows);
  for (auto& x : u) x = static_cast<T>(dist(rng));
  normalize_in_place(u);
  u_ = Tensor<T>({rows}, std::move(u));
}

template <typename T>
Tensor<T> SpectralNorm<T>::apply(const Tensor<T>& weight, Mode mode, std::size_t iters) {
  const std::size_t rows = weight.dim(0);
  const std::size_t cols = weight.numel() / rows;
  auto est = power_iteration<T>(weight.data(), rows, cols, u_.data(), mode == Mode::train ? iters : 0);
  if (mode == Mode::train && !est.degenerate) std::copy(est.u.begin(), est.u.end(), u_.mutable_data().begin());
  last_sigma_ = est.sigma;
  degenerate_ = est.degenerate;
  return spectral_normalize(weight, est);
}

template <typename T>
T SpectralNorm<T>::converge(const Tensor<T>& weight) {
  const std::size_t rows = weight.dim(0);
  const std::size_t cols = weight.numel() / rows;
  auto est = power_iteration_converged<T>(weight.data(), rows, cols, u_.data());
  if (!est.degenerate) std::copy(est.u.begin(), est.u.end(), u_.mutable_data().begin());
  last_sigma_ = est.sigma;
  degenerate_ = est.degenerate;
  return est.sigma;
}

template <typename T>
void SpectralNorm<T>::collect(const std::string& prefix, LayerParams<T>& out) const {
  out.add_buffer(prefix + "sn_u", u_);
}

// ---------------------------------------------------------------------------
// Linear / convolution layers

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng, bool spectral)
    : weight(init_uniform_fan_in<T>({in, out}, in, rng)), bias(init_uniform_fan_in<T>({out}, in, rng)) {
  if (spectral) sn.emplace(in, rng);
}

template <typename T>
Tensor<T> Linear<T>::effective_weight(Mode mode) {
  return sn ? sn->apply(weight, mode) : weight;
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode mode) {
  return ad::add(ad::matmul(x, effective_weight(mode)), bias);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, LayerParams<T>& out) const {
  out.add_param(prefix + "weight", weight);
  out.add_param(prefix + "bias", bias);
  if (sn) sn->collect(prefix, out);
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, ad::Conv2dOptions o, Rng& rng,
                  bool spectral)
    : weight(init_normal<T>({out, in, kernel, kernel}, 0.02, rng)),
      bias(Tensor<T>::zeros({out}, true)),
      opts(o) {
  if (spectral) sn.emplace(out, rng);
}

template <typename T>
Tensor<T> Conv2d<T>::effective_weight(Mode mode) {
  return sn ? sn->apply(weight, mode) : weight;
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode mode) {
  return ad::conv2d<T>(x, effective_weight(mode), bias, opts);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, LayerParams<T>& out) const {
  out.add_param(prefix + "weight", weight);
  out.add_param(prefix + "bias", bias);
  if (sn) sn->collect(prefix, out);
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, ad::Conv2dOptions o,
                                    Rng& rng, bool with_bias)
    : weight(init_normal<T>({in, out, kernel, kernel}, 0.02, rng)), opts(o) {
  if (with_bias) bias = Tensor<T>::zeros({out}, true);
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x) const {
  return ad::conv2d_transpose<T>(x, weight, bias, opts);
}

template <typename T>
void ConvTranspose2d<T>::collect(const std::string& prefix, LayerParams<T>& out) const {
  out.add_param(prefix + "weight", weight);
  if (bias) out.add_param(prefix + "bias", *bias);
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, T e, T m)
    : gamma(Tensor<T>::full({channels}, T(1), true)),
      beta(Tensor<T>::zeros({channels}, true)),
      running_mean(Tensor<T>::zeros({channels})),
      running_var(Tensor<T>::full({channels}, T(1))),
      eps(e),
      momentum(m) {}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  if ((x.rank() != 2 && x.rank() != 4) || x.dim(1) != gamma.numel()) {
    throw ad::ShapeError("batch_norm: input " + ad::to_string(x.shape()) + " does not match " +
                         std::to_string(gamma.numel()) + " channels");
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const std::size_t count = batch * spatial;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();

  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  std::vector<T> out(x.numel());
  auto index = [=](std::size_t n, std::size_t c, std::size_t s) { return (n * channels + c) * spatial + s; };

  if (mode == Mode::train) {
    if (batch < 2) {
      throw std::invalid_argument("batch_norm: training mode needs a batch of at least 2, got " +
                                  std::to_string(batch));
    }
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) {
      T mu = T(0);
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t s = 0; s < spatial; ++s) mu += xv[index(n, c, s)];
      mu /= static_cast<T>(count);
      T var = T(0);
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t s = 0; s < spatial; ++s) {
          const T d = xv[index(n, c, s)] - mu;
          var += d * d;
        }
      var /= static_cast<T>(count);
      const T is = T(1) / std::sqrt(var + eps);
      (*inv_std)[c] = is;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t s = 0; s < spatial; ++s) {
          const auto i = index(n, c, s);
          (*xhat)[i] = (xv[i] - mu) * is;
          out[i] = gv[c] * (*xhat)[i] + bv[c];
        }
      const T unbiased = var * static_cast<T>(count) / static_cast<T>(count - 1);
      rm[c] = (T(1) - momentum) * rm[c] + momentum * mu;
      rv[c] = (T(1) - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    const auto rm = running_mean.data();
    const auto rv = running_var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      const T is = T(1) / std::sqrt(rv[c] + eps);
      (*inv_std)[c] = is;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t s = 0; s < spatial; ++s) {
          const auto i = index(n, c, s);
          (*xhat)[i] = (xv[i] - rm[c]) * is;
          out[i] = gv[c] * (*xhat)[i] + bv[c];
        }
    }
  }
  const bool batch_stats = mode == Mode::train;
  return ad::detail::make_result<T>(
      "batch_norm", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [=](ad::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        for (std::size_t c = 0; c < channels; ++c) {
          T sum_g = T(0), sum_gx = T(0);
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t s = 0; s < spatial; ++s) {
              const auto i = index(n, c, s);
              sum_g += self.grad[i];
              sum_gx += self.grad[i] * (*xhat)[i];
            }
          if (pg.requires_grad) pg.grad[c] += sum_gx;
          if (pb.requires_grad) pb.grad[c] += sum_g;
          if (!px.requires_grad) continue;
          const T g = pg.value[c];
          const T is = (*inv_std)[c];
          const T m = static_cast<T>(count);
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t s = 0; s < spatial; ++s) {
              const auto i = index(n, c, s);
              if (batch_stats) {
                px.grad[i] += g * is * (self.grad[i] - sum_g / m - (*xhat)[i] * sum_gx / m);
              } else {
                px.grad[i] += g * is * self.grad[i];
              }
            }
        }
      });
}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix, LayerParams<T>& out) const {
  out.add_param(prefix + "gamma", gamma);
  out.add_param(prefix + "beta", beta);
  out.add_buffer(prefix + "running_mean", running_mean);
  out.add_buffer(prefix + "running_var", running_var);
}

// ---------------------------------------------------------------------------
// Recurrent layers

template <typename T>
LstmState<T> LstmState<T>::zeros(std::size_t batch, std::size_t hidden_dim) {
  return {Tensor<T>::zeros({batch, hidden_dim}), Tensor<T>::zeros({batch, hidden_dim})};
}

template <typename T>
LstmCell<T>::LstmCell(std::size_t input_dim, std::size_t hidden_dim, Rng& rng)
    : w_input(init_uniform_fan_in<T>({input_dim, 4 * hidden_dim}, hidden_dim, rng)),
      w_hidden(init_uniform_fan_in<T>({hidden_dim, 4 * hidden_dim}, hidden_dim, rng)),
      bias(init_uniform_fan_in<T>({4 * hidden_dim}, hidden_dim, rng)),
      input_dim_(input_dim),
      hidden_dim_(hidden_dim) {}

template <typename T>
LstmState<T> LstmCell<T>::step(const Tensor<T>& input, const LstmState<T>& state) const {
  if (input.rank() != 2 || input.dim(1) != input_dim_ || state.hidden.rank() != 2 ||
      state.hidden.dim(0) != input.dim(0) || state.hidden.dim(1) != hidden_dim_ ||
      state.cell.shape() != state.hidden.shape()) {
    throw ad::ShapeError("lstm_step: input " + ad::to_string(input.shape()) + " with state " +
                         ad::to_string(state.hidden.shape()) + "/" + ad::to_string(state.cell.shape()) +
                         " for a cell of input " + std::to_string(input_dim_) + ", hidden " +
                         std::to_string(hidden_dim_));
  }
  const std::size_t h = hidden_dim_;
  auto gates = ad::add(ad::add(ad::matmul(input, w_input), ad::matmul(state.hidden, w_hidden)), bias);
  auto in_gate = ad::sigmoid(ad::slice(gates, 1, 0, h));
  auto forget_gate = ad::sigmoid(ad::slice(gates, 1, h, 2 * h));
  auto candidate = ad::tanh(ad::slice(gates, 1, 2 * h, 3 * h));
  auto out_gate = ad::sigmoid(ad::slice(gates, 1, 3 * h, 4 * h));
  auto cell = ad::add(ad::mul(forget_gate, state.cell), ad::mul(in_gate, candidate));
  auto hidden = ad::mul(out_gate, ad::tanh(cell));
  return {hidden, cell};
}

template <typename T>
void LstmCell<T>::collect(const std::string& prefix, LayerParams<T>& out) const {
  out.add_param(prefix + "w_input", w_input);
  out.add_param(prefix + "w_hidden", w_hidden);
  out.add_param(prefix + "bias", bias);
}

template <typename T>
std::vector<Tensor<T>> embed_sequence(const Tensor<T>& tokens, const Tensor<T>& embedding) {
  if (tokens.rank() != 3 || embedding.rank() != 2 || tokens.dim(2) != embedding.dim(0)) {
    throw ad::ShapeError("embed_sequence: tokens " + ad::to_string(tokens.shape()) +
                         " do not match embedding " + ad::to_string(embedding.shape()));
  }
  const std::size_t batch = tokens.dim(0), steps = tokens.dim(1), vocab = tokens.dim(2);
  const std::size_t dim = embedding.dim(1);
  auto flat = ad::matmul(ad::reshape(tokens, {batch * steps, vocab}), embedding);
  auto seq = ad::reshape(flat, {batch, steps, dim});
  std::vector<Tensor<T>> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) out.push_back(ad::reshape(ad::slice(seq, 1, t, t + 1), {batch, dim}));
  return out;
}

template <typename T>
BiLstmEncoder<T>::BiLstmEncoder(std::size_t vocab, std::size_t embed_dim, std::size_t hidden_dim,
                                std::size_t seq_len, Rng& rng)
    : embedding(init_uniform_fan_in<T>({vocab, embed_dim}, vocab, rng)),
      forward_cell(embed_dim, hidden_dim, rng),
      backward_cell(embed_dim, hidden_dim, rng),
      seq_len_(seq_len) {}

template <typename T>
Tensor<T> BiLstmEncoder<T>::encode(const Tensor<T>& tokens) const {
  if (tokens.rank() != 3 || tokens.dim(1) != seq_len_) {
    throw ad::ShapeError("bilstm_encode: expected [batch, " + std::to_string(seq_len_) + ", vocab], got " +
                         ad::to_string(tokens.shape()));
  }
  const auto inputs = embed_sequence(tokens, embedding);
  const std::size_t batch = tokens.dim(0);
  auto fwd = LstmState<T>::zeros(batch, forward_cell.hidden_dim());
  for (std::size_t t = 0; t < seq_len_; ++t) fwd = forward_cell.step(inputs[t], fwd);
  auto bwd = LstmState<T>::zeros(batch, backward_cell.hidden_dim());
  for (std::size_t t = seq_len_; t-- > 0;) bwd = backward_cell.step(inputs[t], bwd);
  return ad::concat<T>({fwd.hidden, bwd.hidden}, 1);
}

template <typename T>
void BiLstmEncoder<T>::collect(const std::string& prefix, LayerParams<T>& out) const {
  out.add_param(prefix + "embedding", embedding);
  forward_cell.collect(prefix + "forward.", out);
  backward_cell.collect(prefix + "backward.", out);
}

#define CYCLECAP_INSTANTIATE_NN(T)                                                                       \
  template Tensor<T> init_uniform_fan_in<T>(Shape, std::size_t, Rng&);                                  \
  template Tensor<T> init_normal<T>(Shape, double, Rng&);                                               \
  template SpectralEstimate<T> power_iteration<T>(std::span<const T>, std::size_t, std::size_t,         \
                                                  std::span<const T>, std::size_t);                     \
  template SpectralEstimate<T> power_iteration_converged<T>(std::span<const T>, std::size_t,            \
                                                            std::size_t, std::span<const T>, double,    \
                                                            std::size_t);                               \
  template Tensor<T> spectral_normalize<T>(const Tensor<T>&, const SpectralEstimate<T>&);               \
  template std::vector<Tensor<T>> embed_sequence<T>(const Tensor<T>&, const Tensor<T>&);                \
  template class SpectralNorm<T>;                                                                       \
  template class Linear<T>;                                                                             \
  template class Conv2d<T>;                                                                             \
  template class ConvTranspose2d<T>;                                                                    \
  template class BatchNorm<T>;                                                                          \
  template struct LstmState<T>;                                                                         \
  template class LstmCell<T>;                                                                           \
  template class BiLstmEncoder<T>;

CYCLECAP_INSTANTIATE_NN(float)
CYCLECAP_INSTANTIATE_NN(double)

}  // namespace cyclecap::nn
