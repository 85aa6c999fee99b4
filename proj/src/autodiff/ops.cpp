#include "cyclecap/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cyclecap::ad {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

using detail::make_result;

// Maps an output flat index to an operand flat index under broadcasting.
class BroadcastIndex {
 public:
  BroadcastIndex(const Shape& operand, const Shape& out) {
    const std::size_t n = numel(operand);
    if (operand == out) {
      mode_ = Mode::identity;
      return;
    }
    if (n == 1) {
      mode_ = Mode::scalar;
      return;
    }
    // Operand equal to the trailing dims of out (ignoring leading ones).
    std::size_t lead = 0;
    while (lead < operand.size() && operand[lead] == 1) ++lead;
    const std::size_t tail = operand.size() - lead;
    if (tail <= out.size() &&
        std::equal(operand.begin() + static_cast<std::ptrdiff_t>(lead), operand.end(),
                   out.end() - static_cast<std::ptrdiff_t>(tail))) {
      mode_ = Mode::modulo;
      modulus_ = n;
      return;
    }
    mode_ = Mode::table;
    const std::size_t rank = out.size();
    std::vector<std::size_t> strides(rank, 0);
    std::size_t stride = 1;
    for (std::size_t k = 0; k < operand.size(); ++k) {
      const std::size_t src = operand.size() - 1 - k;
      const std::size_t dst = rank - 1 - k;
      strides[dst] = operand[src] == 1 ? 0 : stride;
      stride *= operand[src];
    }
    const std::size_t total = numel(out);
    table_.resize(total);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < total; ++i) {
      table_[i] = pos;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        pos += strides[d];
        if (idx[d] < out[d]) break;
        pos -= strides[d] * idx[d];
        idx[d] = 0;
      }
    }
  }

  std::size_t operator()(std::size_t i) const {
    switch (mode_) {
      case Mode::identity: return i;
      case Mode::scalar: return 0;
      case Mode::modulo: return i % modulus_;
      case Mode::table: return table_[i];
    }
    return i;
  }

 private:
  enum class Mode { identity, scalar, modulo, table };
  Mode mode_ = Mode::identity;
  std::size_t modulus_ = 1;
  std::vector<std::size_t> table_;
};

// f(x, y) forward; dfx(x, y, out) and dfy(x, y, out) local partials.
template <typename T, typename F, typename DX, typename DY>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DX dfx, DY dfy) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
  const std::size_t n = numel(out_shape);
  auto ia = std::make_shared<BroadcastIndex>(a.shape(), out_shape);
  auto ib = std::make_shared<BroadcastIndex>(b.shape(), out_shape);
  std::vector<T> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[(*ia)(i)], bv[(*ib)(i)]);
  return make_result<T>(op, std::move(out_shape), std::move(out), {a.node(), b.node()},
                        [ia, ib, dfx, dfy](Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          const std::size_t n = self.value.size();
                          for (std::size_t i = 0; i < n; ++i) {
                            const T g = self.grad[i];
                            const std::size_t ja = (*ia)(i), jb = (*ib)(i);
                            const T x = pa.value[ja], y = pb.value[jb];
                            if (pa.requires_grad) pa.grad[ja] += g * dfx(x, y, self.value[i]);
                            if (pb.requires_grad) pb.grad[jb] += g * dfy(x, y, self.value[i]);
                          }
                        });
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x.node()}, [df](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      p.grad[i] += self.grad[i] * df(p.value[i], self.value[i]);
    }
  });
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

struct ConvGeometry {
  std::size_t channels, height, width;  // image side
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;              // sliding positions
};

// image [c, h, w] -> cols[(c*kh + i)*kw + j, offset + oh*out_w + ow] with leading dim ld.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols, std::size_t ld, std::size_t offset) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ld + offset;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(g.height) &&
                                iw < static_cast<std::ptrdiff_t>(g.width);
            row[oh * g.out_w + ow] =
                inside ? image[(c * g.height + static_cast<std::size_t>(ih)) * g.width +
                               static_cast<std::size_t>(iw)]
                       : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates cols back into image.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* image, std::size_t ld, std::size_t offset) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ld + offset;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
            image[(c * g.height + static_cast<std::size_t>(ih)) * g.width +
                  static_cast<std::size_t>(iw)] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

void check_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + to_string(s));
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                       to_string(b));
    }
    out[rank - 1 - k] = std::max(da, db);
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T x, T y, T) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return unary<T>("add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return unary<T>("scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                     to_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  MapR<T>(out.data(), m, n).noalias() = CMapR<T>(a.data().data(), m, k) * CMapR<T>(b.data().data(), k, n);
  return make_result<T>("matmul", {a.dim(0), b.dim(1)}, std::move(out), {a.node(), b.node()},
                        [m, k, n](Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          CMapR<T> g(self.grad.data(), m, n);
                          if (pa.requires_grad) {
                            MapR<T>(pa.grad.data(), m, k).noalias() +=
                                g * CMapR<T>(pb.value.data(), k, n).transpose();
                          }
                          if (pb.requires_grad) {
                            MapR<T>(pb.grad.data(), k, n).noalias() +=
                                CMapR<T>(pa.value.data(), m, k).transpose() * g;
                          }
                        });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 Conv2dOptions opts) {
  check_rank(x.shape(), 4, "conv2d", "input");
  check_rank(weight.shape(), 4, "conv2d", "weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin || opts.stride == 0 || h + 2 * opts.padding < kh ||
      w + 2 * opts.padding < kw) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " does not fit weight " +
                     to_string(weight.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) {
    throw ShapeError("conv2d: bias " + to_string(bias->shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  const ConvGeometry geo{cin,  h,           w,
                         kh,   kw,          opts.stride,
                         opts.padding, (h + 2 * opts.padding - kh) / opts.stride + 1,
                         (w + 2 * opts.padding - kw) / opts.stride + 1};
  const std::size_t positions = geo.out_h * geo.out_w;
  const std::size_t ld = batch * positions;
  const std::size_t patch = cin * kh * kw;

  auto cols = std::make_shared<std::vector<T>>(patch * ld);
  const auto xv = x.data();
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(xv.data() + n * cin * h * w, geo, cols->data(), ld, n * positions);
  }
  MatR<T> prod = CMapR<T>(weight.data().data(), static_cast<Eigen::Index>(cout),
                          static_cast<Eigen::Index>(patch)) *
                 CMapR<T>(cols->data(), static_cast<Eigen::Index>(patch),
                          static_cast<Eigen::Index>(ld));
  std::vector<T> out(batch * cout * positions);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      const T b = bias ? bias->data()[o] : T(0);
      const T* src = prod.data() + o * ld + n * positions;
      T* dst = out.data() + (n * cout + o) * positions;
      for (std::size_t p = 0; p < positions; ++p) dst[p] = src[p] + b;
    }
  }
  std::vector<NodePtr<T>> parents{x.node(), weight.node()};
  if (bias) parents.push_back(bias->node());
  return make_result<T>(
      "conv2d", {batch, cout, geo.out_h, geo.out_w}, std::move(out), std::move(parents),
      [geo, cols, batch, cout, positions, ld, patch](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        MatR<T> g(static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(ld));
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t o = 0; o < cout; ++o) {
            std::copy_n(self.grad.data() + (n * cout + o) * positions, positions,
                        g.data() + o * ld + n * positions);
          }
        }
        const auto ecout = static_cast<Eigen::Index>(cout);
        const auto epatch = static_cast<Eigen::Index>(patch);
        const auto eld = static_cast<Eigen::Index>(ld);
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& pb = *self.parents[2];
          for (std::size_t o = 0; o < cout; ++o) pb.grad[o] += g.row(static_cast<Eigen::Index>(o)).sum();
        }
        if (pw.requires_grad) {
          MapR<T>(pw.grad.data(), ecout, epatch).noalias() +=
              g * CMapR<T>(cols->data(), epatch, eld).transpose();
        }
        if (px.requires_grad) {
          MatR<T> dcols = CMapR<T>(pw.value.data(), ecout, epatch).transpose() * g;
          const std::size_t image = geo.channels * geo.height * geo.width;
          for (std::size_t n = 0; n < batch; ++n) {
            col2im(dcols.data(), geo, px.grad.data() + n * image, ld, n * positions);
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& weight,
                           const std::optional<Tensor<T>>& bias, Conv2dOptions opts) {
  check_rank(x.shape(), 4, "conv2d_transpose", "input");
  check_rank(weight.shape(), 4, "conv2d_transpose", "weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(0) != cin || opts.stride == 0 || (h - 1) * opts.stride + kh < 2 * opts.padding + 1 ||
      (w - 1) * opts.stride + kw < 2 * opts.padding + 1) {
    throw ShapeError("conv2d_transpose: input " + to_string(x.shape()) +
                     " does not fit weight " + to_string(weight.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) {
    throw ShapeError("conv2d_transpose: bias " + to_string(bias->shape()) +
                     " does not match weight " + to_string(weight.shape()));
  }
  const std::size_t out_h = (h - 1) * opts.stride + kh - 2 * opts.padding;
  const std::size_t out_w = (w - 1) * opts.stride + kw - 2 * opts.padding;
  // The output plays the image role; input pixels are the sliding positions.
  const ConvGeometry geo{cout, out_h, out_w, kh, kw, opts.stride, opts.padding, h, w};
  const std::size_t positions = h * w;
  const std::size_t ld = batch * positions;
  const std::size_t patch = cout * kh * kw;

  auto xmat = std::make_shared<MatR<T>>(static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(ld));
  const auto xv = x.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < cin; ++c) {
      std::copy_n(xv.data() + (n * cin + c) * positions, positions,
                  xmat->data() + c * ld + n * positions);
    }
  }
  const auto ecin = static_cast<Eigen::Index>(cin);
  const auto epatch = static_cast<Eigen::Index>(patch);
  MatR<T> cols = CMapR<T>(weight.data().data(), ecin, epatch).transpose() * (*xmat);
  const std::size_t image = cout * out_h * out_w;
  std::vector<T> out(batch * image, T(0));
  for (std::size_t n = 0; n < batch; ++n) {
    col2im(cols.data(), geo, out.data() + n * image, ld, n * positions);
  }
  if (bias) {
    const auto bv = bias->data();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t o = 0; o < cout; ++o) {
        T* dst = out.data() + n * image + o * out_h * out_w;
        for (std::size_t p = 0; p < out_h * out_w; ++p) dst[p] += bv[o];
      }
  }
  std::vector<NodePtr<T>> parents{x.node(), weight.node()};
  if (bias) parents.push_back(bias->node());
  return make_result<T>(
      "conv2d_transpose", {batch, cout, out_h, out_w}, std::move(out), std::move(parents),
      [geo, xmat, batch, cin, cout, positions, ld, patch, image](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const auto ecin = static_cast<Eigen::Index>(cin);
        const auto epatch = static_cast<Eigen::Index>(patch);
        const auto eld = static_cast<Eigen::Index>(ld);
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& pb = *self.parents[2];
          const std::size_t plane = geo.height * geo.width;
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t o = 0; o < cout; ++o) {
              const T* src = self.grad.data() + n * image + o * plane;
              T acc = T(0);
              for (std::size_t p = 0; p < plane; ++p) acc += src[p];
              pb.grad[o] += acc;
            }
        }
        if (!px.requires_grad && !pw.requires_grad) return;
        MatR<T> gcols(epatch, eld);
        for (std::size_t n = 0; n < batch; ++n) {
          im2col(self.grad.data() + n * image, geo, gcols.data(), ld, n * positions);
        }
        if (pw.requires_grad) {
          MapR<T>(pw.grad.data(), ecin, epatch).noalias() += (*xmat) * gcols.transpose();
        }
        if (px.requires_grad) {
          MatR<T> dx = CMapR<T>(pw.value.data(), ecin, epatch) * gcols;
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t c = 0; c < cin; ++c) {
              const T* src = dx.data() + c * ld + n * positions;
              T* dst = px.grad.data() + (n * cin + c) * positions;
              for (std::size_t p = 0; p < positions; ++p) dst[p] += src[p];
            }
        }
      });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window) {
  check_rank(x.shape(), 4, "max_pool2d", "input");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (window == 0 || h < window || w < window) {
    throw ShapeError("max_pool2d: window " + std::to_string(window) + " does not fit input " +
                     to_string(x.shape()));
  }
  const std::size_t oh = h / window, ow = w / window;
  std::vector<T> out(batch * ch * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto xv = x.data();
  for (std::size_t plane = 0; plane < batch * ch; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = base + (i * window) * w + j * window;
        for (std::size_t di = 0; di < window; ++di)
          for (std::size_t dj = 0; dj < window; ++dj) {
            const std::size_t idx = base + (i * window + di) * w + j * window + dj;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (plane * oh + i) * ow + j;
        out[o] = xv[best];
        (*argmax)[o] = best;
      }
  }
  return make_result<T>("max_pool2d", {batch, ch, oh, ow}, std::move(out), {x.node()},
                        [argmax](Node<T>& self) {
                          auto& p = *self.parents[0];
                          for (std::size_t o = 0; o < self.grad.size(); ++o)
                            p.grad[(*argmax)[o]] += self.grad[o];
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const auto xv = x.data();
  T acc = T(0);
  for (T v : xv) acc += v;
  return make_result<T>("sum", {}, {acc}, {x.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    const T g = self.grad[0];
    for (auto& v : p.grad) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const auto n = x.numel();
  if (n == 0) throw ShapeError("mean: empty tensor " + to_string(x.shape()));
  const auto xv = x.data();
  T acc = T(0);
  for (T v : xv) acc += v;
  const T inv = T(1) / static_cast<T>(n);
  return make_result<T>("mean", {}, {acc * inv}, {x.node()}, [inv](Node<T>& self) {
    auto& p = *self.parents[0];
    const T g = self.grad[0] * inv;
    for (auto& v : p.grad) v += g;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis, "sum");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t a = 0; a < s.extent; ++a)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xv[(o * s.extent + a) * s.inner + i];
  return make_result<T>("sum_axis", std::move(out_shape), std::move(out), {x.node()},
                        [s](Node<T>& self) {
                          auto& p = *self.parents[0];
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t a = 0; a < s.extent; ++a)
                              for (std::size_t i = 0; i < s.inner; ++i)
                                p.grad[(o * s.extent + a) * s.inner + i] += self.grad[o * s.inner + i];
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis, "mean");
  if (s.extent == 0) throw ShapeError("mean: empty axis in " + to_string(x.shape()));
  return scale(sum(x, axis), T(1) / static_cast<T>(s.extent));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  split_axis(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t d = 0; ok && d < first.size(); ++d)
      if (d != axis && p.shape()[d] != first[d]) ok = false;
    if (!ok) {
      throw ShapeError("concat: shape " + to_string(p.shape()) + " does not conform to " +
                       to_string(first) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += p.shape()[axis];
  }
  const auto s = split_axis(out_shape, axis, "concat");
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> extents;
  std::vector<NodePtr<T>> parents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = p.shape()[axis] * s.inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.data() + o * block, block, out.data() + o * s.extent * s.inner + offset);
    offset += block;
    extents.push_back(p.shape()[axis]);
    parents.push_back(p.node());
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), std::move(parents),
                        [s, extents](Node<T>& self) {
                          std::size_t offset = 0;
                          for (std::size_t k = 0; k < extents.size(); ++k) {
                            auto& p = *self.parents[k];
                            const std::size_t block = extents[k] * s.inner;
                            if (p.requires_grad) {
                              for (std::size_t o = 0; o < s.outer; ++o) {
                                const T* src = self.grad.data() + o * s.extent * s.inner + offset;
                                T* dst = p.grad.data() + o * block;
                                for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                              }
                            }
                            offset += block;
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x.node()},
                        [](Node<T>& self) {
                          auto& p = *self.parents[0];
                          for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = split_axis(x.shape(), axis, "slice");
  if (begin > end || end > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for axis " + std::to_string(axis) + " of " +
                     to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * s.inner;
  std::vector<T> out(s.outer * block);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + (o * s.extent + begin) * s.inner, block, out.data() + o * block);
  return make_result<T>("slice", std::move(out_shape), std::move(out), {x.node()},
                        [s, begin, block](Node<T>& self) {
                          auto& p = *self.parents[0];
                          for (std::size_t o = 0; o < s.outer; ++o) {
                            T* dst = p.grad.data() + (o * s.extent + begin) * s.inner;
                            const T* src = self.grad.data() + o * block;
                            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                          }
                        });
}

template <typename T>
Tensor<T> select_columns(const Tensor<T>& x, const std::vector<std::size_t>& index) {
  if (x.rank() != 2 || index.size() != x.dim(0)) {
    throw ShapeError("select_columns: input " + to_string(x.shape()) + " with " +
                     std::to_string(index.size()) + " indices");
  }
  const std::size_t cols = x.dim(1);
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= cols) {
      throw ShapeError("select_columns: index " + std::to_string(index[i]) +
                       " out of range for " + to_string(x.shape()));
    }
    out[i] = x.data()[i * cols + index[i]];
  }
  return make_result<T>("select_columns", {index.size()}, std::move(out), {x.node()},
                        [index, cols](Node<T>& self) {
                          auto& p = *self.parents[0];
                          for (std::size_t i = 0; i < index.size(); ++i)
                            p.grad[i * cols + index[i]] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary<T>(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return unary<T>(
      "clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis, "softmax");
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t a = 0; a < s.extent; ++a) mx = std::max(mx, xv[base + a * s.inner]);
      T total = T(0);
      for (std::size_t a = 0; a < s.extent; ++a) {
        const T e = std::exp(xv[base + a * s.inner] - mx);
        out[base + a * s.inner] = e;
        total += e;
      }
      for (std::size_t a = 0; a < s.extent; ++a) out[base + a * s.inner] /= total;
    }
  return make_result<T>("softmax", x.shape(), std::move(out), {x.node()}, [s](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        T dot = T(0);
        for (std::size_t a = 0; a < s.extent; ++a) {
          const std::size_t k = base + a * s.inner;
          dot += self.grad[k] * self.value[k];
        }
        for (std::size_t a = 0; a < s.extent; ++a) {
          const std::size_t k = base + a * s.inner;
          p.grad[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis, "log_softmax");
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t a = 0; a < s.extent; ++a) mx = std::max(mx, xv[base + a * s.inner]);
      T total = T(0);
      for (std::size_t a = 0; a < s.extent; ++a) total += std::exp(xv[base + a * s.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t a = 0; a < s.extent; ++a)
        out[base + a * s.inner] = xv[base + a * s.inner] - lse;
    }
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x.node()},
                        [s](Node<T>& self) {
                          auto& p = *self.parents[0];
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t i = 0; i < s.inner; ++i) {
                              const std::size_t base = o * s.extent * s.inner + i;
                              T total = T(0);
                              for (std::size_t a = 0; a < s.extent; ++a)
                                total += self.grad[base + a * s.inner];
                              for (std::size_t a = 0; a < s.extent; ++a) {
                                const std::size_t k = base + a * s.inner;
                                p.grad[k] += self.grad[k] - std::exp(self.value[k]) * total;
                              }
                            }
                        });
}

#define CYCLECAP_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> neg(const Tensor<T>&);                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const std::optional<Tensor<T>>&, \
                            Conv2dOptions);                                                     \
  template Tensor<T> conv2d_transpose(const Tensor<T>&, const Tensor<T>&,                       \
                                      const std::optional<Tensor<T>>&, Conv2dOptions);          \
  template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> sum(const Tensor<T>&, std::size_t);                                        \
  template Tensor<T> mean(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);            \
  template Tensor<T> select_columns(const Tensor<T>&, const std::vector<std::size_t>&);         \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                           \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                 \
  template Tensor<T> tanh(const Tensor<T>&);                                                    \
  template Tensor<T> exp(const Tensor<T>&);                                                     \
  template Tensor<T> log(const Tensor<T>&);                                                     \
  template Tensor<T> abs(const Tensor<T>&);                                                     \
  template Tensor<T> square(const Tensor<T>&);                                                  \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                             \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);

CYCLECAP_INSTANTIATE_OPS(float)
CYCLECAP_INSTANTIATE_OPS(double)

#undef CYCLECAP_INSTANTIATE_OPS

}  // namespace cyclecap::ad
