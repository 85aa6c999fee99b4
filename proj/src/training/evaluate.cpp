#include "cyclecap/training/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include "cyclecap/sampling/gumbel.hpp"

namespace cyclecap::training {

namespace {

using Tensor = ad::Tensor<float>;

template <typename Fn>
void for_batches(const std::vector<std::size_t>& records, std::size_t batch, Fn fn) {
  for (std::size_t i = 0; i < records.size(); i += batch) {
    fn(std::vector<std::size_t>(records.begin() + i, records.begin() + std::min(records.size(), i + batch)));
  }
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto row = logits.data().subspan(i * k, k);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace

AttributeAccuracy fie_accuracy(const Bundle& bundle, const data::Dataset& d, const std::vector<std::size_t>& records) {
  auto b = bundle.clone();
  AttributeAccuracy acc;
  for_batches(records, 64, [&](const std::vector<std::size_t>& ids) {
    auto logits = b.fie.classify(d.images<float>(ids));
    auto s = argmax_rows(logits.shape), c = argmax_rows(logits.color), z = argmax_rows(logits.size);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto& a = d.record(ids[i]).attrs;
      acc.shape += s[i] == a.shape;
      acc.color += c[i] == a.fill;
      acc.size += z[i] == a.size;
    }
  });
  const double n = static_cast<double>(records.size());
  return {acc.shape / n, acc.color / n, acc.size / n};
}

std::vector<models::Caption> greedy_captions(const Bundle& bundle, const data::Dataset& d,
                                             const std::vector<std::size_t>& records, std::size_t batch) {
  auto b = bundle.clone();
  std::vector<models::Caption> out;
  for_batches(records, batch, [&](const std::vector<std::size_t>& ids) {
    auto caps = models::harden(b.g_y.greedy(b.fie.features(d.images<float>(ids))).soft);
    out.insert(out.end(), caps.begin(), caps.end());
  });
  return out;
}

int first_color(const models::Caption& caption, const models::Vocab& vocab) {
  for (const auto& w : caption.words(vocab))
    if (auto c = data::color_index(w)) return *c;
  return -1;
}

double color_accuracy(const Bundle& bundle, const data::Dataset& d, const std::vector<std::size_t>& records) {
  auto caps = greedy_captions(bundle, d, records);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < records.size(); ++i) hits += first_color(caps[i], d.vocab()) == d.record(records[i]).attrs.fill;
  return records.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(records.size());
}

CycleImageLoss heldout_cycle_image_loss(const Bundle& bundle, const data::Dataset& d,
                                        const std::vector<std::size_t>& records, const TrainConfig& config,
                                        std::size_t batch) {
  auto b = bundle.clone();
  const auto& m = b.config;
  Rng rng = derive_stream(config.seed, Stream::eval);
  double pix = 0, feat = 0;
  std::size_t n_pix = 0, n_feat = 0;
  for_batches(records, batch, [&](const std::vector<std::size_t>& ids) {
    const std::size_t n = ids.size();
    auto x = d.images<float>(ids);
    auto fx = b.fie.features(x);
    auto noise = sampling::gumbel_noise<float>({n, m.seq_len, m.vocab_size}, rng);
    auto roll = b.g_y.rollout(fx, noise, static_cast<float>(config.gumbel.tau));
    auto enc = b.text.encode(roll.soft, models::normal_noise<float>({n, m.cond_dim}, rng));
    auto xr = b.g_x.generate(enc.c, models::normal_noise<float>({n, m.z_dim}, rng), nn::Mode::eval);
    auto fr = b.fie.features(xr);
    for (std::size_t i = 0; i < x.numel(); ++i) pix += std::abs(static_cast<double>(xr.at(i)) - x.at(i));
    for (std::size_t i = 0; i < fx.numel(); ++i) feat += std::abs(static_cast<double>(fr.at(i)) - fx.at(i));
    n_pix += x.numel();
    n_feat += fx.numel();
  });
  CycleImageLoss out;
  out.pixel = pix / static_cast<double>(n_pix);
  out.feature = feat / static_cast<double>(n_feat);
  out.total = config.weights.lambda1 * out.pixel + config.weights.lambda2 * out.feature;
  return out;
}

double dx_accuracy(const Bundle& bundle, const data::Dataset& d, const std::vector<std::size_t>& records,
                   const TrainConfig& config, std::size_t batch) {
  auto b = bundle.clone();
  b.d_x.converge_spectral();
  const auto& m = b.config;
  Rng rng = derive_stream(config.seed, Stream::eval, 1);
  std::size_t real_hits = 0, fake_hits = 0;
  for_batches(records, batch, [&](const std::vector<std::size_t>& ids) {
    const std::size_t n = ids.size();
    std::vector<models::Caption> caps;
    for (auto r : ids) caps.push_back(data::pick_caption(d.captions(r), rng, r));
    auto enc = b.text.encode(models::one_hot<float>(caps, m.vocab_size), models::normal_noise<float>({n, m.cond_dim}, rng));
    auto fake = b.g_x.generate(enc.c, models::normal_noise<float>({n, m.z_dim}, rng), nn::Mode::eval);
    auto real = b.d_x.score(d.images<float>(ids), enc.phi, nn::Mode::eval);
    auto fs = b.d_x.score(fake, enc.phi, nn::Mode::eval);
    for (std::size_t i = 0; i < n; ++i) {
      real_hits += real.at(i) > 0.5f;
      fake_hits += fs.at(i) < 0.5f;
    }
  });
  const double n = static_cast<double>(records.size());
  return 0.5 * (real_hits / n + fake_hits / n);
}

metrics::InceptionScore generated_inception_score(const Bundle& bundle, const data::Dataset& d,
                                                  const std::vector<std::size_t>& records, const TrainConfig& config,
                                                  std::size_t splits, std::size_t batch) {
  auto b = bundle.clone();
  const auto& m = b.config;
  Rng rng = derive_stream(config.seed, Stream::eval, 2);
  std::vector<std::vector<double>> probs;
  for_batches(records, batch, [&](const std::vector<std::size_t>& ids) {
    const std::size_t n = ids.size();
    std::vector<models::Caption> caps;
    for (auto r : ids) caps.push_back(data::pick_caption(d.captions(r), rng, r));
    auto enc = b.text.encode(models::one_hot<float>(caps, m.vocab_size), models::normal_noise<float>({n, m.cond_dim}, rng));
    auto fake = b.g_x.generate(enc.c, models::normal_noise<float>({n, m.z_dim}, rng), nn::Mode::eval);
    auto p = ad::softmax(b.fie.classify(fake).shape, 1);
    const std::size_t k = p.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = p.data().subspan(i * k, k);
      probs.emplace_back(row.begin(), row.end());
    }
  });
  return metrics::inception_score(probs, splits);
}

}  // namespace cyclecap::training
