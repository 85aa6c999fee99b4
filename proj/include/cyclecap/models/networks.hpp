#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cyclecap/models/vocab.hpp"
#include "cyclecap/nn/layers.hpp"

namespace cyclecap::models {

using nn::Mode;
template <typename T>
using Tensor = ad::Tensor<T>;

/// Network sizes. `reference()` follows the published setup where one is
/// stated (64x64 images, T = 20, 512 per text-encoder direction, z of 100);
/// `smoke()` is the small profile used for CPU end-to-end runs.
struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t vocab_size = 0;
  std::size_t seq_len = 20;
  std::size_t embed_dim = 128;
  std::size_t captioner_hidden = 256;
  std::size_t dy_hidden = 256;
  std::size_t fusion_dim = 256;
  std::size_t text_embed_dim = 128;
  std::size_t text_hidden = 512;  // per direction
  std::size_t cond_dim = 128;
  std::size_t z_dim = 100;
  std::size_t gen_channels = 64;   // channels of the last hidden deconv stage
  std::size_t disc_channels = 64;  // channels of the first conv stage
  std::size_t disc_text_dim = 128;
  std::size_t fie_channels1 = 16, fie_channels2 = 32, fie_channels3 = 64;
  std::size_t num_shapes = 5, num_colors = 8, num_sizes = 3;
  /// "product": elementwise product then linear; "inner": scaled inner product.
  std::string dy_fusion = "product";

  static ModelConfig reference(std::size_t vocab_size);
  static ModelConfig smoke(std::size_t vocab_size);

  /// F_IE pools to 2x2 at its last block.
  std::size_t feature_dim() const { return fie_channels3 * 4; }
  std::size_t text_feature_dim() const { return 2 * text_hidden; }
  /// Number of stride-2 stages between 4x4 and image_size.
  std::size_t up_stages() const;
  void validate() const;
};

/// Per-attribute classifier logits of F_IE.
template <typename T>
struct AttributeLogits {
  Tensor<T> shape, color, size;
};

/// F_IE: three conv + max-pool blocks trained as an attribute classifier,
/// then frozen; its last pooled activations are the image features.
template <typename T>
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const ModelConfig& config, Rng& rng);

  /// Pooled activations, flattened: [batch, feature_dim]. Works before
  /// freezing; used by classifier training.
  Tensor<T> trunk(const Tensor<T>& pixels);
  AttributeLogits<T> classify_features(const Tensor<T>& features);
  AttributeLogits<T> classify(const Tensor<T>& pixels) { return classify_features(trunk(pixels)); }
  /// Features of the frozen encoder; rejects an encoder that was never frozen.
  Tensor<T> features(const Tensor<T>& pixels);

  void freeze();
  bool frozen() const { return frozen_; }
  void set_frozen_flag(bool f) { frozen_ = f; }
  void collect(const std::string& prefix, nn::LayerParams<T>& out) const;

  nn::Conv2d<T> conv1, conv2, conv3;
  nn::Linear<T> shape_head, color_head, size_head;

 private:
  std::size_t last_pool_ = 2;
  bool frozen_ = false;
};

/// Output of a caption rollout: soft one-hot tokens and the pre-softmax
/// logits of each step, both [batch, T, vocab].
template <typename T>
struct CaptionOutput {
  Tensor<T> soft;
  Tensor<T> logits;
};

/// G_Y: image feature -> linear -> initial LSTM hidden; each step's input is
/// the previous token embedding concatenated with a projection of the image
/// feature (<bos> at step 0). One parameter set serves every decoding mode.
template <typename T>
class Captioner {
 public:
  Captioner() = default;
  Captioner(const ModelConfig& config, Rng& rng);

  /// Gumbel-softmax rollout; `noise` is [batch, T, vocab] standard Gumbel
  /// noise drawn by the caller. The soft sample of step t times the
  /// embedding matrix is the input of step t + 1.
  CaptionOutput<T> rollout(const Tensor<T>& features, const Tensor<T>& noise, T tau);
  /// Teacher forcing on `reference` ([batch, T, vocab] one-hot or soft).
  /// `soft` holds softmax(logits).
  CaptionOutput<T> teacher_forced(const Tensor<T>& features, const Tensor<T>& reference);
  /// Deterministic argmax decoding; `soft` holds the emitted one-hot tokens.
  CaptionOutput<T> greedy(const Tensor<T>& features);

  void collect(const std::string& prefix, nn::LayerParams<T>& out) const;

  Tensor<T> embedding;  // [vocab, embed_dim]
  nn::Linear<T> init_hidden;
  nn::LstmCell<T> cell;
  nn::Linear<T> out;
  nn::Linear<T> image_input;  // features -> per-step input alongside the token

 private:
  enum class Feed { gumbel, teacher, greedy };
  CaptionOutput<T> run(const Tensor<T>& features, Feed feed, const Tensor<T>* aux, T tau);
  std::size_t seq_len_ = 0;
  std::size_t vocab_ = 0;
};

/// D_Y: scores whether a caption describes an image. LSTM caption feature
/// and image feature are projected to a common width and fused.
template <typename T>
class CaptionDiscriminator {
 public:
  CaptionDiscriminator() = default;
  CaptionDiscriminator(const ModelConfig& config, Rng& rng);

  /// tokens [batch, T, vocab], features [batch, feature_dim] -> [batch] in (0, 1).
  Tensor<T> score(const Tensor<T>& tokens, const Tensor<T>& features);
  void collect(const std::string& prefix, nn::LayerParams<T>& out) const;

  Tensor<T> embedding;
  nn::LstmCell<T> cell;
  nn::Linear<T> image_proj, text_proj, out;

 private:
  std::size_t seq_len_ = 0;
  bool inner_ = false;
};

/// Text features and the conditioning-augmentation sample.
template <typename T>
struct TextEncoding {
  Tensor<T> phi;      // [batch, 2 * text_hidden]
  Tensor<T> mu;       // [batch, cond_dim]
  Tensor<T> log_var;  // [batch, cond_dim]
  Tensor<T> c;        // mu + exp(log_var / 2) * eps
};

template <typename T>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const ModelConfig& config, Rng& rng);

  /// eps: [batch, cond_dim] standard normal noise drawn by the caller.
  TextEncoding<T> encode(const Tensor<T>& tokens, const Tensor<T>& eps);
  void collect(const std::string& prefix, nn::LayerParams<T>& out) const;

  nn::BiLstmEncoder<T> encoder;
  nn::Linear<T> mu_head, log_var_head;
};

/// G_X: concat(z, c) -> linear -> 4x4 map -> stride-2 deconvs -> tanh.
template <typename T>
class ImageGenerator {
 public:
  ImageGenerator() = default;
  ImageGenerator(const ModelConfig& config, Rng& rng);

  /// -> [batch, 3, image_size, image_size] in [-1, 1]
  Tensor<T> generate(const Tensor<T>& c, const Tensor<T>& z, Mode mode);
  void collect(const std::string& prefix, nn::LayerParams<T>& out) const;

  nn::Linear<T> fc;
  nn::BatchNorm<T> fc_norm;
  std::vector<nn::ConvTranspose2d<T>> deconvs;
  std::vector<nn::BatchNorm<T>> norms;  // one per deconv except the last

 private:
  std::size_t base_channels_ = 0;
};

/// D_X: spectral-normalized conv stack down to 4x4; compressed text
/// features are tiled and concatenated there; conv + linear -> sigmoid.
template <typename T>
class ImageDiscriminator {
 public:
  ImageDiscriminator() = default;
  ImageDiscriminator(const ModelConfig& config, Rng& rng);

  /// pixels [batch, 3, H, W], phi [batch, text_feature_dim] -> [batch] in (0, 1).
  Tensor<T> score(const Tensor<T>& pixels, const Tensor<T>& phi, Mode mode);
  /// Runs every power iteration to convergence (evaluation setting).
  void converge_spectral();
  /// Effective (normalized) weight of every layer as used in eval mode,
  /// each flattened to [rows, rest].
  std::vector<std::pair<std::string, Tensor<T>>> normalized_weights();
  void collect(const std::string& prefix, nn::LayerParams<T>& out) const;

  std::vector<nn::Conv2d<T>> convs;
  nn::Linear<T> text_proj;
  nn::Conv2d<T> joint;
  nn::Linear<T> out;
};

}  // namespace cyclecap::models
