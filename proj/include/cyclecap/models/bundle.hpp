#pragma once

#include <string>
#include <vector>

#include "cyclecap/models/networks.hpp"

namespace cyclecap::models {

enum class Part { fie, g_y, d_y, text, g_x, d_x };

const char* part_name(Part part);
std::vector<Part> all_parts();

/// The six networks with one shared parameter namespace. G_Y is a single
/// Captioner, so every caption pathway uses the same parameter objects.
template <typename T>
class ModelBundle {
 public:
  ModelBundle() = default;
  ModelBundle(const ModelConfig& config, Rng& init_rng);

  nn::LayerParams<T> params(Part part) const;
  nn::LayerParams<T> params(const std::vector<Part>& parts) const;
  nn::LayerParams<T> all_params() const { return params(all_parts()); }

  /// Deep copy in precision U (values, buffers, and the freeze flag).
  template <typename U>
  ModelBundle<U> convert() const;
  ModelBundle clone() const { return convert<T>(); }

  Tensor<T> image_encode(const Tensor<T>& pixels) { return fie.features(pixels); }
  CaptionOutput<T> caption_rollout(const Tensor<T>& pixels, const Tensor<T>& noise, T tau) {
    return g_y.rollout(fie.features(pixels), noise, tau);
  }
  CaptionOutput<T> caption_teacher_forced(const Tensor<T>& pixels, const Tensor<T>& reference) {
    return g_y.teacher_forced(fie.features(pixels), reference);
  }
  Tensor<T> discriminate_caption(const Tensor<T>& tokens, const Tensor<T>& pixels) {
    return d_y.score(tokens, fie.features(pixels));
  }
  TextEncoding<T> encode_text(const Tensor<T>& tokens, const Tensor<T>& eps) { return text.encode(tokens, eps); }
  Tensor<T> image_from_text(const Tensor<T>& c, const Tensor<T>& z, Mode mode) { return g_x.generate(c, z, mode); }
  Tensor<T> discriminate_image(const Tensor<T>& pixels, const Tensor<T>& phi, Mode mode) {
    return d_x.score(pixels, phi, mode);
  }

  ModelConfig config;
  ImageEncoder<T> fie;
  Captioner<T> g_y;
  CaptionDiscriminator<T> d_y;
  TextEncoder<T> text;
  ImageGenerator<T> g_x;
  ImageDiscriminator<T> d_x;
};

/// Standard normal noise of the given shape.
template <typename T>
Tensor<T> normal_noise(const ad::Shape& shape, Rng& rng);

}  // namespace cyclecap::models
