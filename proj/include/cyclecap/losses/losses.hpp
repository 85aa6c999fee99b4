#pragma once

#include <vector>

#include "cyclecap/autodiff/ops.hpp"
#include "cyclecap/models/networks.hpp"
#include "cyclecap/models/vocab.hpp"

// Every loss reduces to a scalar by averaging over the batch; per-sample
// terms are as documented on each function.
namespace cyclecap::losses {

template <typename T>
using Tensor = ad::Tensor<T>;

struct LossWeights {
  double lambda_kl = 2.0;
  double lambda1 = 1.0;     // pixel L1
  double lambda2 = 1000.0;  // F_IE feature L1
  double lambda3 = 0.01;    // caption cross-entropy

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Scores are clamped to [1e-7, 1 - 1e-7] before any log.
constexpr double kScoreClamp = 1e-7;

/// -[log D(real) + log(1 - D(fake))]; shared by D_Y and D_X.
template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& score_real, const Tensor<T>& score_fake);
template <typename T>
Tensor<T> d_y_loss(const Tensor<T>& score_real, const Tensor<T>& score_fake) {
  return discriminator_loss(score_real, score_fake);
}
template <typename T>
Tensor<T> d_x_loss(const Tensor<T>& score_real, const Tensor<T>& score_fake) {
  return discriminator_loss(score_real, score_fake);
}

/// -log(D(fake) / (1 - D(fake)))
template <typename T>
Tensor<T> g_y_loss(const Tensor<T>& score_fake);

/// 0.5 * sum_i (mu_i^2 + sigma_i^2 - log sigma_i^2 - 1) per sample, sigma^2 = exp(log_var).
template <typename T>
Tensor<T> kl_diag_gauss(const Tensor<T>& mu, const Tensor<T>& log_var);

/// log(1 - D(fake)) + lambda_kl * KL
template <typename T>
Tensor<T> g_x_loss(const Tensor<T>& score_fake, const Tensor<T>& mu, const Tensor<T>& log_var,
                   const LossWeights& w);

/// sum_t cross_entropy(logits_t, target_t) per sample; logits and target are
/// [batch, T, vocab] (target one-hot or soft). An optional [batch, T] mask
/// keeps only the positions where it is 1.
template <typename T>
Tensor<T> sequence_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target, const Tensor<T>* mask = nullptr);

/// [batch, T] mask that is 1 up to and including the first <eos>.
template <typename T>
Tensor<T> until_eos_mask(const Tensor<T>& target_one_hot);

template <typename T>
struct CycleTerms {
  Tensor<T> pixel;    // mean |x_regen - x|
  Tensor<T> feature;  // mean |F(x_regen) - F(x)|
  Tensor<T> text;     // sequence_cross_entropy over all T steps
  Tensor<T> total;    // lambda1 * pixel + lambda2 * feature + lambda3 * text
};

/// Any term may be left undefined (that cycle direction was not run); it
/// then contributes nothing.
template <typename T>
CycleTerms<T> cycle_loss(const Tensor<T>& x, const Tensor<T>& x_regen, const Tensor<T>& feat_x,
                         const Tensor<T>& feat_regen, const Tensor<T>& y_logits, const Tensor<T>& y_ref,
                         const LossWeights& w);

/// Same, with the image features taken from the frozen encoder and the
/// reference given as hard captions.
template <typename T>
CycleTerms<T> cycle_loss(const Tensor<T>& x, const Tensor<T>& x_regen, const Tensor<T>& y_logits,
                         const std::vector<models::Caption>& y_ref, models::ImageEncoder<T>& fie,
                         const LossWeights& w) {
  Tensor<T> fx, fr;
  if (x.defined()) {
    fx = fie.features(x);
    fr = fie.features(x_regen);
  }
  Tensor<T> ref;
  if (y_logits.defined()) ref = models::one_hot<T>(y_ref, y_logits.dim(2));
  return cycle_loss(x, x_regen, fx, fr, y_logits, ref, w);
}

template <typename T>
struct Components {
  Tensor<T> d_y, d_x, g_y, g_x, cycle;
};

template <typename T>
struct Totals {
  Tensor<T> v_d, v_g;
};

/// V_D = L_DY + L_DX; V_G = L_GY + L_GX + L_cyc, with L_cyc dropped when
/// the cycle is disabled. Undefined components count as zero.
template <typename T>
Totals<T> total_losses(const Components<T>& c, bool cycle_enabled);

}  // namespace cyclecap::losses
