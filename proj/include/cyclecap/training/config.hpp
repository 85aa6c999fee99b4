#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cyclecap/losses/losses.hpp"
#include "cyclecap/models/networks.hpp"
#include "cyclecap/sampling/gumbel.hpp"

namespace cyclecap::training {

struct TrainConfig {
  std::string profile = "smoke";  // "smoke" or "reference" network sizes
  std::size_t seq_len = 0;        // 0: the profile's default
  std::string dy_fusion = "product";
  std::size_t epochs_fie = 20;
  std::size_t epochs_pretrain = 50;
  std::size_t epochs_main = 20;
  std::size_t batch_size = 16;
  double lr = 2e-4;
  double fie_lr = 1e-3;  // attribute classifier only
  double captioner_lr = 1e-3;  // MLE pretraining of the captioner
  double beta1 = 0.5;
  double beta2 = 0.999;
  double weight_decay = 1e-5;
  losses::LossWeights weights;
  sampling::GumbelConfig gumbel;
  bool cycle = true;
  bool unpaired = false;
  std::uint64_t seed = 1;

  void validate() const;
  /// Applies one `key = value` setting; unknown keys and bad values throw
  /// std::invalid_argument.
  void set(const std::string& key, const std::string& value);
  /// Every setting in a fixed order, formatted so that `set` reads it back.
  std::vector<std::pair<std::string, std::string>> settings() const;
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);

  bool operator==(const TrainConfig&) const = default;
};

/// Network sizes for this run.
models::ModelConfig model_config(const TrainConfig& config, std::size_t vocab_size, std::size_t image_size);
/// Caption length the profile implies.
std::size_t resolved_seq_len(const TrainConfig& config);

}  // namespace cyclecap::training
