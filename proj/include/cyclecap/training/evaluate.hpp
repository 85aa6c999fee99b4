#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cyclecap/data/dataset.hpp"
#include "cyclecap/metrics/metrics.hpp"
#include "cyclecap/training/trainer.hpp"

// All evaluations work on a clone, so the trained bundle (including
// power-iteration vectors and batch-norm statistics) is never touched.
namespace cyclecap::training {

struct AttributeAccuracy {
  double shape = 0, color = 0, size = 0;
};
AttributeAccuracy fie_accuracy(const Bundle& bundle, const data::Dataset& data, const std::vector<std::size_t>& records);

/// Greedy captions in batches of `batch`.
std::vector<models::Caption> greedy_captions(const Bundle& bundle, const data::Dataset& data,
                                             const std::vector<std::size_t>& records, std::size_t batch = 32);

/// First palette color word of a caption, -1 if none.
int first_color(const models::Caption& caption, const models::Vocab& vocab);
/// Share of records whose greedy caption names the fill color first.
double color_accuracy(const Bundle& bundle, const data::Dataset& data, const std::vector<std::size_t>& records);

struct CycleImageLoss {
  double pixel = 0, feature = 0, total = 0;  // total = lambda1 * pixel + lambda2 * feature
};
/// Image -> caption -> image cycle with fixed evaluation noise (Gumbel,
/// conditioning and latent), generator in eval mode.
CycleImageLoss heldout_cycle_image_loss(const Bundle& bundle, const data::Dataset& data,
                                        const std::vector<std::size_t>& records, const TrainConfig& config,
                                        std::size_t batch = 32);

/// Mean of the real-pair hit rate (score > 0.5) and fake rejection rate
/// (score < 0.5) of D_X with converged spectral norms.
double dx_accuracy(const Bundle& bundle, const data::Dataset& data, const std::vector<std::size_t>& records,
                   const TrainConfig& config, std::size_t batch = 32);

/// Inception score of images generated from one caption per record, with
/// the F_IE shape head as the classifier.
metrics::InceptionScore generated_inception_score(const Bundle& bundle, const data::Dataset& data,
                                                  const std::vector<std::size_t>& records, const TrainConfig& config,
                                                  std::size_t splits, std::size_t batch = 32);

}  // namespace cyclecap::training
