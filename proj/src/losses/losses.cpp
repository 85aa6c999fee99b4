#include "cyclecap/losses/losses.hpp"

#include <stdexcept>
#include <string>

namespace cyclecap::losses {

void LossWeights::validate() const {
  for (double v : {lambda_kl, lambda1, lambda2, lambda3}) {
    if (!(v >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
  }
}

namespace {

template <typename T>
Tensor<T> clamp_scores(const Tensor<T>& s) {
  return ad::clamp(s, T(kScoreClamp), T(1.0 - kScoreClamp));
}

template <typename T>
Tensor<T> one_minus(const Tensor<T>& s) {
  return ad::add_scalar(ad::neg(s), T(1));
}

template <typename T>
Tensor<T> zero() {
  return Tensor<T>::scalar(T(0));
}

template <typename T>
Tensor<T> or_zero(const Tensor<T>& t) {
  return t.defined() ? t : zero<T>();
}

}  // namespace

template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& score_real, const Tensor<T>& score_fake) {
  if (score_real.shape() != score_fake.shape()) {
    throw ad::ShapeError("discriminator_loss: real scores " + ad::to_string(score_real.shape()) +
                         " vs fake scores " + ad::to_string(score_fake.shape()));
  }
  auto real = ad::log(clamp_scores(score_real));
  auto fake = ad::log(one_minus(clamp_scores(score_fake)));
  return ad::neg(ad::mean(ad::add(real, fake)));
}

template <typename T>
Tensor<T> g_y_loss(const Tensor<T>& score_fake) {
  auto s = clamp_scores(score_fake);
  return ad::neg(ad::mean(ad::sub(ad::log(s), ad::log(one_minus(s)))));
}

template <typename T>
Tensor<T> kl_diag_gauss(const Tensor<T>& mu, const Tensor<T>& log_var) {
  if (mu.shape() != log_var.shape() || mu.rank() == 0) {
    throw ad::ShapeError("kl_diag_gauss: mu " + ad::to_string(mu.shape()) + " vs log_var " +
                         ad::to_string(log_var.shape()));
  }
  auto terms = ad::add_scalar(ad::sub(ad::add(ad::square(mu), ad::exp(log_var)), log_var), T(-1));
  const T per_sample = mu.rank() >= 2 ? T(1) / static_cast<T>(mu.dim(0)) : T(1);
  return ad::scale(ad::sum(terms), T(0.5) * per_sample);
}

template <typename T>
Tensor<T> g_x_loss(const Tensor<T>& score_fake, const Tensor<T>& mu, const Tensor<T>& log_var, const LossWeights& w) {
  auto adv = ad::mean(ad::log(one_minus(clamp_scores(score_fake))));
  return ad::add(adv, ad::scale(kl_diag_gauss(mu, log_var), static_cast<T>(w.lambda_kl)));
}

template <typename T>
Tensor<T> sequence_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target, const Tensor<T>* mask) {
  if (logits.rank() != 3 || logits.shape() != target.shape()) {
    throw ad::ShapeError("sequence_cross_entropy: logits " + ad::to_string(logits.shape()) + " vs target " +
                         ad::to_string(target.shape()));
  }
  auto per_step = ad::neg(ad::sum(ad::mul(target, ad::log_softmax(logits, 2)), 2));  // [batch, T]
  if (mask) {
    if (mask->shape() != per_step.shape()) {
      throw ad::ShapeError("sequence_cross_entropy: mask " + ad::to_string(mask->shape()) + " vs steps " +
                           ad::to_string(per_step.shape()));
    }
    per_step = ad::mul(per_step, *mask);
  }
  return ad::scale(ad::sum(per_step), T(1) / static_cast<T>(logits.dim(0)));
}

template <typename T>
Tensor<T> until_eos_mask(const Tensor<T>& target) {
  if (target.rank() != 3) throw ad::ShapeError("until_eos_mask: expected [batch, T, vocab], got " + ad::to_string(target.shape()));
  const std::size_t batch = target.dim(0), len = target.dim(1), vocab = target.dim(2);
  std::vector<T> m(batch * len, T(0));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t) {
      m[b * len + t] = T(1);
      if (target.at((b * len + t) * vocab) > T(0.5)) break;  // id 0 is <eos>
    }
  return Tensor<T>({batch, len}, std::move(m));
}

template <typename T>
CycleTerms<T> cycle_loss(const Tensor<T>& x, const Tensor<T>& x_regen, const Tensor<T>& feat_x,
                         const Tensor<T>& feat_regen, const Tensor<T>& y_logits, const Tensor<T>& y_ref,
                         const LossWeights& w) {
  CycleTerms<T> out;
  auto total = zero<T>();
  if (x.defined()) {
    if (x.shape() != x_regen.shape()) {
      throw ad::ShapeError("cycle_loss: image " + ad::to_string(x.shape()) + " vs regenerated " +
                           ad::to_string(x_regen.shape()));
    }
    out.pixel = ad::mean(ad::abs(ad::sub(x_regen, x)));
    total = ad::add(total, ad::scale(out.pixel, static_cast<T>(w.lambda1)));
  }
  if (feat_x.defined()) {
    if (feat_x.shape() != feat_regen.shape()) {
      throw ad::ShapeError("cycle_loss: features " + ad::to_string(feat_x.shape()) + " vs regenerated " +
                           ad::to_string(feat_regen.shape()));
    }
    out.feature = ad::mean(ad::abs(ad::sub(feat_regen, feat_x)));
    total = ad::add(total, ad::scale(out.feature, static_cast<T>(w.lambda2)));
  }
  if (y_logits.defined()) {
    out.text = sequence_cross_entropy(y_logits, y_ref);
    total = ad::add(total, ad::scale(out.text, static_cast<T>(w.lambda3)));
  }
  out.total = total;
  return out;
}

template <typename T>
Totals<T> total_losses(const Components<T>& c, bool cycle_enabled) {
  Totals<T> t;
  t.v_d = ad::add(or_zero(c.d_y), or_zero(c.d_x));
  t.v_g = ad::add(or_zero(c.g_y), or_zero(c.g_x));
  if (cycle_enabled) t.v_g = ad::add(t.v_g, or_zero(c.cycle));
  return t;
}

#define CYCLECAP_INSTANTIATE_LOSSES(T)                                                                   \
  template Tensor<T> discriminator_loss(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> g_y_loss(const Tensor<T>&);                                                         \
  template Tensor<T> kl_diag_gauss(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> g_x_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const LossWeights&); \
  template Tensor<T> sequence_cross_entropy(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);       \
  template Tensor<T> until_eos_mask(const Tensor<T>&);                                                   \
  template CycleTerms<T> cycle_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                    const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                    const LossWeights&);                                                 \
  template Totals<T> total_losses(const Components<T>&, bool);

CYCLECAP_INSTANTIATE_LOSSES(float)
CYCLECAP_INSTANTIATE_LOSSES(double)

}  // namespace cyclecap::losses
