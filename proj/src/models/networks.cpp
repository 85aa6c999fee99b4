#include "cyclecap/models/networks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cyclecap/sampling/gumbel.hpp"

namespace cyclecap::models {

using ad::Shape;

ModelConfig ModelConfig::reference(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::smoke(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.image_size = 32;
  c.seq_len = 12;
  c.embed_dim = 32;
  c.captioner_hidden = 64;
  c.dy_hidden = 32;
  c.fusion_dim = 32;
  c.text_embed_dim = 32;
  c.text_hidden = 32;
  c.cond_dim = 16;
  c.z_dim = 16;
  c.gen_channels = 16;
  c.disc_channels = 16;
  c.disc_text_dim = 16;
  c.fie_channels1 = 8;
  c.fie_channels2 = 16;
  c.fie_channels3 = 32;
  return c;
}

std::size_t ModelConfig::up_stages() const {
  std::size_t stages = 0;
  for (std::size_t s = 4; s < image_size; s *= 2) ++stages;
  return stages;
}

void ModelConfig::validate() const {
  const auto stages = up_stages();
  if (image_size < 8 || (std::size_t{4} << stages) != image_size) {
    throw std::invalid_argument("model config: image_size must be 4 * 2^k with k >= 1, got " +
                                std::to_string(image_size));
  }
  if (vocab_size < 4) throw std::invalid_argument("model config: vocabulary too small");
  if (seq_len < 1) throw std::invalid_argument("model config: seq_len must be positive");
  for (std::size_t d : {embed_dim, captioner_hidden, dy_hidden, fusion_dim, text_embed_dim, text_hidden, cond_dim,
                        z_dim, gen_channels, disc_channels, disc_text_dim, fie_channels1, fie_channels2,
                        fie_channels3}) {
    if (d == 0) throw std::invalid_argument("model config: every width must be positive");
  }
  if (dy_fusion != "product" && dy_fusion != "inner") {
    throw std::invalid_argument("model config: dy_fusion must be 'product' or 'inner', got '" + dy_fusion + "'");
  }
}

namespace {

template <typename T>
Tensor<T> stack_steps(const std::vector<Tensor<T>>& steps) {
  std::vector<Tensor<T>> parts;
  parts.reserve(steps.size());
  for (const auto& s : steps) parts.push_back(ad::reshape(s, {s.dim(0), 1, s.dim(1)}));
  return ad::concat(parts, 1);
}

template <typename T>
Tensor<T> step_of(const Tensor<T>& seq, std::size_t t) {
  return ad::reshape(ad::slice(seq, 1, t, t + 1), {seq.dim(0), seq.dim(2)});
}

template <typename T>
void expect_rank(const Tensor<T>& x, std::size_t rank, std::size_t axis, std::size_t size, const char* what) {
  if (x.rank() != rank || x.dim(axis) != size) {
    throw ad::ShapeError(std::string(what) + ": got shape " + ad::to_string(x.shape()) + ", expected rank " +
                         std::to_string(rank) + " with dimension " + std::to_string(axis) + " = " +
                         std::to_string(size));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// F_IE

template <typename T>
ImageEncoder<T>::ImageEncoder(const ModelConfig& c, Rng& rng)
    : conv1(3, c.fie_channels1, 3, {1, 1}, rng),
      conv2(c.fie_channels1, c.fie_channels2, 3, {1, 1}, rng),
      conv3(c.fie_channels2, c.fie_channels3, 3, {1, 1}, rng),
      shape_head(c.feature_dim(), c.num_shapes, rng),
      color_head(c.feature_dim(), c.num_colors, rng),
      size_head(c.feature_dim(), c.num_sizes, rng),
      last_pool_(c.image_size / 8) {
  // He init: with the 0.02 default the pooled features are ~1e-3 and the
  // captioner's initial hidden state carries no image information.
  for (auto* conv : {&conv1, &conv2, &conv3}) {
    const auto& s = conv->weight.shape();
    const std::size_t fan_in = s[1] * s[2] * s[3];
    const T scale = T(std::sqrt(2.0 / double(fan_in)) / 0.02);
    for (auto& v : conv->weight.mutable_data()) v *= scale;
  }
}

template <typename T>
Tensor<T> ImageEncoder<T>::trunk(const Tensor<T>& pixels) {
  expect_rank(pixels, 4, 1, 3, "image_encode");
  auto h = ad::max_pool2d(ad::relu(conv1.forward(pixels)), 2);
  h = ad::max_pool2d(ad::relu(conv2.forward(h)), 2);
  h = ad::max_pool2d(ad::relu(conv3.forward(h)), last_pool_);
  if (h.dim(2) != 2 || h.dim(3) != 2) {
    throw ad::ShapeError("image_encode: image " + ad::to_string(pixels.shape()) + " does not match the encoder");
  }
  return ad::reshape(h, {h.dim(0), h.numel() / h.dim(0)});
}

template <typename T>
AttributeLogits<T> ImageEncoder<T>::classify_features(const Tensor<T>& f) {
  return {shape_head.forward(f), color_head.forward(f), size_head.forward(f)};
}

template <typename T>
Tensor<T> ImageEncoder<T>::features(const Tensor<T>& pixels) {
  if (!frozen_) throw std::logic_error("image_encode: the image encoder has not been trained and frozen");
  return trunk(pixels);
}

template <typename T>
void ImageEncoder<T>::freeze() {
  nn::LayerParams<T> p;
  collect("", p);
  nn::set_trainable(p, false);
  frozen_ = true;
}

template <typename T>
void ImageEncoder<T>::collect(const std::string& prefix, nn::LayerParams<T>& out) const {
  conv1.collect(prefix + "conv1.", out);
  conv2.collect(prefix + "conv2.", out);
  conv3.collect(prefix + "conv3.", out);
  shape_head.collect(prefix + "shape_head.", out);
  color_head.collect(prefix + "color_head.", out);
  size_head.collect(prefix + "size_head.", out);
}

// ---------------------------------------------------------------------------
// G_Y

template <typename T>
Captioner<T>::Captioner(const ModelConfig& c, Rng& rng)
    : embedding(nn::init_uniform_fan_in<T>({c.vocab_size, c.embed_dim}, c.embed_dim, rng)),
      init_hidden(c.feature_dim(), c.captioner_hidden, rng),
      cell(2 * c.embed_dim, c.captioner_hidden, rng),
      out(c.captioner_hidden, c.vocab_size, rng),
      image_input(c.feature_dim(), c.embed_dim, rng),
      seq_len_(c.seq_len),
      vocab_(c.vocab_size) {}

template <typename T>
CaptionOutput<T> Captioner<T>::run(const Tensor<T>& features, Feed feed, const Tensor<T>* aux, T tau) {
  if (features.rank() != 2 || features.dim(1) != init_hidden.weight.dim(0)) {
    throw ad::ShapeError("caption_from_image: features " + ad::to_string(features.shape()) +
                         " do not match the captioner input " + std::to_string(init_hidden.weight.dim(0)));
  }
  const std::size_t batch = features.dim(0);
  if (aux && (aux->rank() != 3 || aux->dim(0) != batch || aux->dim(1) != seq_len_ || aux->dim(2) != vocab_)) {
    throw ad::ShapeError("caption_from_image: expected [" + std::to_string(batch) + ", " + std::to_string(seq_len_) +
                         ", " + std::to_string(vocab_) + "] reference or noise, got " + ad::to_string(aux->shape()));
  }
  nn::LstmState<T> state{init_hidden.forward(features), Tensor<T>::zeros({batch, cell.hidden_dim()})};
  const auto bos = ad::slice(embedding, 0, Vocab::kBos, Vocab::kBos + 1);
  auto input = ad::add(Tensor<T>::zeros({batch, embedding.dim(1)}), bos);
  // The image is also fed at every step; through h0 alone the late colour
  // words were never conditioned on it.
  const auto image_in = image_input.forward(features);
  std::vector<Tensor<T>> soft, logits;
  for (std::size_t t = 0; t < seq_len_; ++t) {
    state = cell.step(ad::concat<T>({input, image_in}, 1), state);
    auto l = out.forward(state.hidden);
    logits.push_back(l);
    switch (feed) {
      case Feed::gumbel: {
        auto z = sampling::gumbel_softmax_logits(l, step_of(*aux, t), tau);
        soft.push_back(z);
        if (t + 1 < seq_len_) input = ad::matmul(z, embedding);
        break;
      }
      case Feed::teacher:
        soft.push_back(ad::softmax(l, 1));
        if (t + 1 < seq_len_) input = ad::matmul(step_of(*aux, t), embedding);
        break;
      case Feed::greedy: {
        std::vector<T> hot(batch * vocab_, T(0));
        for (std::size_t b = 0; b < batch; ++b) {
          const auto row = l.data().subspan(b * vocab_, vocab_);
          hot[b * vocab_ + static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())] = T(1);
        }
        Tensor<T> z({batch, vocab_}, std::move(hot));
        soft.push_back(z);
        input = ad::matmul(z, embedding);
        break;
      }
    }
  }
  return {stack_steps(soft), stack_steps(logits)};
}

template <typename T>
CaptionOutput<T> Captioner<T>::rollout(const Tensor<T>& features, const Tensor<T>& noise, T tau) {
  return run(features, Feed::gumbel, &noise, tau);
}

template <typename T>
CaptionOutput<T> Captioner<T>::teacher_forced(const Tensor<T>& features, const Tensor<T>& reference) {
  if (reference.rank() != 3 || reference.dim(1) != seq_len_) {
    throw ad::ShapeError("caption_from_image: reference caption " + ad::to_string(reference.shape()) +
                         " does not have length " + std::to_string(seq_len_));
  }
  return run(features, Feed::teacher, &reference, T(1));
}

template <typename T>
CaptionOutput<T> Captioner<T>::greedy(const Tensor<T>& features) {
  return run(features, Feed::greedy, nullptr, T(1));
}

template <typename T>
void Captioner<T>::collect(const std::string& prefix, nn::LayerParams<T>& o) const {
  o.add_param(prefix + "embedding", embedding);
  init_hidden.collect(prefix + "init_hidden.", o);
  cell.collect(prefix + "lstm.", o);
  out.collect(prefix + "out.", o);
  image_input.collect(prefix + "image_input.", o);
}

// ---------------------------------------------------------------------------
// D_Y

template <typename T>
CaptionDiscriminator<T>::CaptionDiscriminator(const ModelConfig& c, Rng& rng)
    : embedding(nn::init_uniform_fan_in<T>({c.vocab_size, c.embed_dim}, c.embed_dim, rng)),
      cell(c.embed_dim, c.dy_hidden, rng),
      image_proj(c.feature_dim(), c.fusion_dim, rng),
      text_proj(c.dy_hidden, c.fusion_dim, rng),
      seq_len_(c.seq_len),
      inner_(c.dy_fusion == "inner") {
  if (!inner_) out = nn::Linear<T>(c.fusion_dim, 1, rng);
}

template <typename T>
Tensor<T> CaptionDiscriminator<T>::score(const Tensor<T>& tokens, const Tensor<T>& features) {
  expect_rank(tokens, 3, 1, seq_len_, "discriminate_caption");
  const std::size_t batch = tokens.dim(0);
  if (features.rank() != 2 || features.dim(0) != batch) {
    throw ad::ShapeError("discriminate_caption: caption batch " + ad::to_string(tokens.shape()) +
                         " and image features " + ad::to_string(features.shape()) + " disagree");
  }
  const auto inputs = nn::embed_sequence(tokens, embedding);
  auto state = nn::LstmState<T>::zeros(batch, cell.hidden_dim());
  for (const auto& x : inputs) state = cell.step(x, state);
  auto fused = ad::mul(image_proj.forward(features), text_proj.forward(state.hidden));
  Tensor<T> logit;
  if (inner_) {
    logit = ad::scale(ad::sum(fused, 1), T(1) / std::sqrt(static_cast<T>(fused.dim(1))));
  } else {
    logit = ad::reshape(out.forward(fused), {batch});
  }
  return ad::sigmoid(logit);
}

template <typename T>
void CaptionDiscriminator<T>::collect(const std::string& prefix, nn::LayerParams<T>& o) const {
  o.add_param(prefix + "embedding", embedding);
  cell.collect(prefix + "lstm.", o);
  image_proj.collect(prefix + "image_proj.", o);
  text_proj.collect(prefix + "text_proj.", o);
  if (!inner_) out.collect(prefix + "out.", o);
}

// ---------------------------------------------------------------------------
// Text encoder + conditioning augmentation

template <typename T>
TextEncoder<T>::TextEncoder(const ModelConfig& c, Rng& rng)
    : encoder(c.vocab_size, c.text_embed_dim, c.text_hidden, c.seq_len, rng),
      mu_head(c.text_feature_dim(), c.cond_dim, rng),
      log_var_head(c.text_feature_dim(), c.cond_dim, rng) {}

template <typename T>
TextEncoding<T> TextEncoder<T>::encode(const Tensor<T>& tokens, const Tensor<T>& eps) {
  auto phi = encoder.encode(tokens);
  auto mu = mu_head.forward(phi);
  auto log_var = log_var_head.forward(phi);
  if (eps.shape() != mu.shape()) {
    throw ad::ShapeError("encode_text: noise " + ad::to_string(eps.shape()) + " does not match condition " +
                         ad::to_string(mu.shape()));
  }
  auto c = ad::add(mu, ad::mul(ad::exp(ad::scale(log_var, T(0.5))), eps));
  return {phi, mu, log_var, c};
}

template <typename T>
void TextEncoder<T>::collect(const std::string& prefix, nn::LayerParams<T>& o) const {
  encoder.collect(prefix + "bilstm.", o);
  mu_head.collect(prefix + "mu_head.", o);
  log_var_head.collect(prefix + "log_var_head.", o);
}

// ---------------------------------------------------------------------------
// G_X

template <typename T>
ImageGenerator<T>::ImageGenerator(const ModelConfig& c, Rng& rng) {
  const std::size_t stages = c.up_stages();
  base_channels_ = c.gen_channels << (stages - 1);
  fc = nn::Linear<T>(c.z_dim + c.cond_dim, base_channels_ * 16, rng);
  fc_norm = nn::BatchNorm<T>(base_channels_ * 16);
  std::size_t ch = base_channels_;
  for (std::size_t s = 0; s < stages; ++s) {
    const bool last = s + 1 == stages;
    const std::size_t next = last ? 3 : ch / 2;
    deconvs.emplace_back(ch, next, 4, ad::Conv2dOptions{2, 1}, rng, last);
    if (!last) norms.emplace_back(next);
    ch = next;
  }
}

template <typename T>
Tensor<T> ImageGenerator<T>::generate(const Tensor<T>& c, const Tensor<T>& z, Mode mode) {
  if (c.rank() != 2 || z.rank() != 2 || c.dim(0) != z.dim(0) || c.dim(1) + z.dim(1) != fc.weight.dim(0)) {
    throw ad::ShapeError("image_from_text: condition " + ad::to_string(c.shape()) + " and latent " +
                         ad::to_string(z.shape()) + " do not match the generator input " +
                         std::to_string(fc.weight.dim(0)));
  }
  const std::size_t batch = c.dim(0);
  auto h = ad::relu(fc_norm.forward(fc.forward(ad::concat<T>({z, c}, 1)), mode));
  h = ad::reshape(h, {batch, base_channels_, 4, 4});
  for (std::size_t s = 0; s < deconvs.size(); ++s) {
    h = deconvs[s].forward(h);
    h = s < norms.size() ? ad::relu(norms[s].forward(h, mode)) : ad::tanh(h);
  }
  return h;
}

template <typename T>
void ImageGenerator<T>::collect(const std::string& prefix, nn::LayerParams<T>& o) const {
  fc.collect(prefix + "fc.", o);
  fc_norm.collect(prefix + "fc_norm.", o);
  for (std::size_t s = 0; s < deconvs.size(); ++s) {
    deconvs[s].collect(prefix + "deconv" + std::to_string(s) + ".", o);
    if (s < norms.size()) norms[s].collect(prefix + "norm" + std::to_string(s) + ".", o);
  }
}

// ---------------------------------------------------------------------------
// D_X

template <typename T>
ImageDiscriminator<T>::ImageDiscriminator(const ModelConfig& c, Rng& rng) {
  const std::size_t stages = c.up_stages();
  std::size_t in = 3, ch = c.disc_channels;
  for (std::size_t s = 0; s < stages; ++s) {
    convs.emplace_back(in, ch, 4, ad::Conv2dOptions{2, 1}, rng, true);
    in = ch;
    if (s + 1 < stages) ch *= 2;
  }
  text_proj = nn::Linear<T>(c.text_feature_dim(), c.disc_text_dim, rng, true);
  joint = nn::Conv2d<T>(ch + c.disc_text_dim, ch, 3, {1, 1}, rng, true);
  out = nn::Linear<T>(ch * 16, 1, rng, true);
}

template <typename T>
Tensor<T> ImageDiscriminator<T>::score(const Tensor<T>& pixels, const Tensor<T>& phi, Mode mode) {
  expect_rank(pixels, 4, 1, 3, "discriminate_image");
  const std::size_t batch = pixels.dim(0);
  if (phi.rank() != 2 || phi.dim(0) != batch) {
    throw ad::ShapeError("discriminate_image: images " + ad::to_string(pixels.shape()) + " and text features " +
                         ad::to_string(phi.shape()) + " disagree");
  }
  const T slope = T(0.2);
  auto h = pixels;
  for (auto& conv : convs) h = ad::leaky_relu(conv.forward(h, mode), slope);
  if (h.dim(2) != 4 || h.dim(3) != 4) {
    throw ad::ShapeError("discriminate_image: image " + ad::to_string(pixels.shape()) + " does not reduce to 4x4");
  }
  auto t = ad::leaky_relu(text_proj.forward(phi, mode), slope);
  auto tiled = ad::mul(ad::reshape(t, {batch, t.dim(1), 1, 1}), Tensor<T>::full({1, 1, 4, 4}, T(1)));
  h = ad::leaky_relu(joint.forward(ad::concat<T>({h, tiled}, 1), mode), slope);
  auto logit = out.forward(ad::reshape(h, {batch, h.numel() / batch}), mode);
  return ad::sigmoid(ad::reshape(logit, {batch}));
}

template <typename T>
void ImageDiscriminator<T>::converge_spectral() {
  for (auto& c : convs) c.sn->converge(c.weight);
  text_proj.sn->converge(text_proj.weight);
  joint.sn->converge(joint.weight);
  out.sn->converge(out.weight);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ImageDiscriminator<T>::normalized_weights() {
  std::vector<std::pair<std::string, Tensor<T>>> result;
  auto flat = [](const Tensor<T>& w) { return ad::reshape(w, {w.dim(0), w.numel() / w.dim(0)}); };
  for (std::size_t s = 0; s < convs.size(); ++s)
    result.emplace_back("conv" + std::to_string(s), flat(convs[s].effective_weight(Mode::eval)));
  result.emplace_back("text_proj", flat(text_proj.effective_weight(Mode::eval)));
  result.emplace_back("joint", flat(joint.effective_weight(Mode::eval)));
  result.emplace_back("out", flat(out.effective_weight(Mode::eval)));
  return result;
}

template <typename T>
void ImageDiscriminator<T>::collect(const std::string& prefix, nn::LayerParams<T>& o) const {
  for (std::size_t s = 0; s < convs.size(); ++s) convs[s].collect(prefix + "conv" + std::to_string(s) + ".", o);
  text_proj.collect(prefix + "text_proj.", o);
  joint.collect(prefix + "joint.", o);
  out.collect(prefix + "out.", o);
}

#define CYCLECAP_INSTANTIATE_MODELS(T) \
  template class ImageEncoder<T>;      \
  template class Captioner<T>;         \
  template class CaptionDiscriminator<T>; \
  template class TextEncoder<T>;       \
  template class ImageGenerator<T>;    \
  template class ImageDiscriminator<T>;

CYCLECAP_INSTANTIATE_MODELS(float)
CYCLECAP_INSTANTIATE_MODELS(double)

}  // namespace cyclecap::models
