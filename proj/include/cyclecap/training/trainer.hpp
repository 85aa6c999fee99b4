#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

#include "cyclecap/data/dataset.hpp"
#include "cyclecap/models/bundle.hpp"
#include "cyclecap/training/config.hpp"
#include "cyclecap/training/optim.hpp"

namespace cyclecap::training {

using Bundle = models::ModelBundle<float>;

/// Training phases in the order they run.
enum class Phase { fie, captioner, t2i, main };
const char* phase_name(Phase phase);

/// A loss became NaN or infinite. Earlier epochs are intact on disk when
/// the caller checkpoints from the epoch hook.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to continue training bit-exactly.
struct TrainState {
  TrainConfig config;
  models::Vocab vocab;
  models::ModelConfig model;
  Bundle bundle;
  std::map<std::string, Adam<float>> optimizers;
  std::map<std::string, std::size_t> epochs_done;  // per phase name
  std::uint64_t step = 0;
  data::Pairing pairing;  // main-phase caption sources
  Rng shuffle, pick, gumbel, latent, cond;

  /// Fresh networks for a dataset with this vocabulary and image size.
  static TrainState create(const TrainConfig& config, const models::Vocab& vocab, std::size_t image_size);
  std::size_t done(Phase p) const;
};

void save_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_state(const std::filesystem::path& path);

struct TrainHooks {
  /// Per-step loss CSVs (loss_<phase>.csv) and eval_main.csv go here; empty disables logging.
  std::filesystem::path log_dir;
  /// Called after each finished epoch (state.done(phase) already counts it).
  std::function<void(const TrainState&, Phase)> on_epoch_end;
  /// Stop this call after this many epochs; a later call resumes.
  std::size_t max_epochs = std::numeric_limits<std::size_t>::max();
  /// Held-out evaluation before the first and after every main epoch.
  bool evaluate_main = true;
  /// Called right after each optimizer step with that optimizer's name;
  /// the gradients of the step are still in place.
  std::function<void(const TrainState&, Phase, const std::string&)> after_update;
};

/// Phase 1: F_IE attribute classifier (then frozen), followed by
/// teacher-forced G_Y cross-entropy up to the first <eos>. D_Y is untouched.
void pretrain_captioner(TrainState& state, const data::Dataset& data, const TrainHooks& hooks = {});
/// Phase 2: alternating D_X / G_X steps; the text encoder learns only
/// from the generator loss.
void pretrain_t2i(TrainState& state, const data::Dataset& data, const TrainHooks& hooks = {});
/// Phase 3: per batch a D step on V_D, then a G step on V_G with both
/// cycle directions (dropped when config.cycle is false).
void train_cycle(TrainState& state, const data::Dataset& data, const TrainHooks& hooks = {});

/// Resets the phase's random streams from the master seed, so a phase's
/// randomness never depends on how much earlier phases consumed.
void reseed_streams(TrainState& state, Phase phase);

}  // namespace cyclecap::training
