#include "cyclecap/training/trainer.hpp"

#include <cmath>
#include <sstream>

#include "cyclecap/losses/losses.hpp"
#include "cyclecap/sampling/gumbel.hpp"
#include "cyclecap/training/checkpoint.hpp"
#include "cyclecap/training/csv.hpp"
#include "cyclecap/training/evaluate.hpp"

namespace cyclecap::training {

using models::Part;
using Tensor = ad::Tensor<float>;

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::fie: return "fie";
    case Phase::captioner: return "captioner";
    case Phase::t2i: return "t2i";
    case Phase::main: return "main";
  }
  return "?";
}

namespace {

// Which networks each optimizer owns. The D/G split is the update partition.
const std::map<std::string, std::vector<Part>>& optimizer_parts() {
  static const std::map<std::string, std::vector<Part>> parts{
      {"fie", {Part::fie}},
      {"captioner", {Part::g_y}},
      {"t2i_d", {Part::d_x}},
      {"t2i_g", {Part::g_x, Part::text}},
      {"main_d", {Part::d_y, Part::d_x}},
      {"main_g", {Part::g_y, Part::g_x, Part::text}},
  };
  return parts;
}

AdamConfig adam_config(const TrainConfig& c, const std::string& name) {
  const double lr = name == "fie" ? c.fie_lr : name == "captioner" ? c.captioner_lr : c.lr;
  return {lr, c.beta1, c.beta2, 1e-8, c.weight_decay};
}

Adam<float>& optimizer(TrainState& s, const std::string& name) {
  auto it = s.optimizers.find(name);
  if (it == s.optimizers.end()) {
    it = s.optimizers.emplace(name, Adam<float>(s.bundle.params(optimizer_parts().at(name)), adam_config(s.config, name)))
             .first;
  }
  return it->second;
}

void zero_all(const TrainState& s) { nn::zero_grads(s.bundle.all_params()); }

void update(TrainState& s, const TrainHooks& hooks, Phase phase, const std::string& name) {
  optimizer(s, name).step();
  if (hooks.after_update) hooks.after_update(s, phase, name);
}

// Mean over the batch of the cross-entropy against integer labels.
Tensor class_ce(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  std::vector<float> hot(b * k, 0.0f);
  for (std::size_t i = 0; i < b; ++i) hot[i * k + static_cast<std::size_t>(labels[i])] = 1.0f;
  Tensor target({b, k}, std::move(hot));
  return ad::scale(ad::sum(ad::mul(target, ad::log_softmax(logits, 1))), -1.0f / static_cast<float>(b));
}

std::vector<models::Caption> own_captions(TrainState& s, const data::Dataset& d, const std::vector<std::size_t>& ids) {
  std::vector<models::Caption> out;
  for (auto r : ids) out.push_back(data::pick_caption(d.captions(r), s.pick, r));
  return out;
}

/// Shared epoch loop: reseeding on a fresh phase, shuffling, logging,
/// divergence checks and the epoch hook. Returns epochs run in this call.
template <typename StepFn>
std::size_t run_epochs(TrainState& s, const data::Dataset& d, Phase phase, std::size_t total,
                       const std::vector<std::string>& columns, const TrainHooks& hooks, std::size_t budget,
                       StepFn step, const std::function<void(std::size_t)>& after_epoch = {}) {
  const std::string name = phase_name(phase);
  auto& done = s.epochs_done[name];
  if (done >= total || budget == 0) return 0;
  if (done == 0) reseed_streams(s, phase);

  CsvLog log;
  if (!hooks.log_dir.empty()) {
    std::vector<std::string> header{"epoch", "step"};
    header.insert(header.end(), columns.begin(), columns.end());
    log = CsvLog(hooks.log_dir / ("loss_" + name + ".csv"), header, done > 0);
  }
  const auto train = d.indices(data::Split::train);
  std::size_t ran = 0;
  while (done < total && ran < budget) {
    for (const auto& batch : data::epoch_batches(train, s.config.batch_size, s.shuffle)) {
      const auto values = step(batch, done);
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
          std::ostringstream msg;
          msg << name << " epoch " << done + 1 << " step " << s.step << ": loss " << columns.at(i) << " is "
              << values[i];
          throw TrainingDiverged(msg.str());
        }
      }
      if (log.is_open()) {
        std::vector<double> row{static_cast<double>(done + 1), static_cast<double>(s.step)};
        row.insert(row.end(), values.begin(), values.end());
        log.row(row);
      }
      ++s.step;
    }
    ++done;
    ++ran;
    if (log.is_open()) log.flush();
    if (after_epoch) after_epoch(done);
    if (hooks.on_epoch_end) hooks.on_epoch_end(s, phase);
  }
  return ran;
}

std::vector<float> flat(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

std::size_t TrainState::done(Phase p) const {
  auto it = epochs_done.find(phase_name(p));
  return it == epochs_done.end() ? 0 : it->second;
}

TrainState TrainState::create(const TrainConfig& config, const models::Vocab& vocab, std::size_t image_size) {
  config.validate();
  TrainState s;
  s.config = config;
  s.vocab = vocab;
  s.model = model_config(config, vocab.size(), image_size);
  Rng init = derive_stream(config.seed, Stream::init);
  s.bundle = Bundle(s.model, init);
  reseed_streams(s, Phase::fie);
  return s;
}

void reseed_streams(TrainState& s, Phase phase) {
  const auto salt = static_cast<std::uint64_t>(phase);
  s.shuffle = derive_stream(s.config.seed, Stream::shuffle, salt);
  s.pick = derive_stream(s.config.seed, Stream::caption_pick, salt);
  s.gumbel = derive_stream(s.config.seed, Stream::gumbel, salt);
  s.latent = derive_stream(s.config.seed, Stream::latent, salt);
  s.cond = derive_stream(s.config.seed, Stream::cond_noise, salt);
}

void pretrain_captioner(TrainState& s, const data::Dataset& d, const TrainHooks& hooks) {
  std::size_t budget = hooks.max_epochs;
  if (!s.bundle.fie.frozen()) {
    budget -= run_epochs(
        s, d, Phase::fie, s.config.epochs_fie, {"ce_shape", "ce_color", "ce_size", "total"}, hooks, budget,
        [&](const std::vector<std::size_t>& ids, std::size_t) {
          std::vector<int> shape, color, size;
          for (auto r : ids) {
            const auto& a = d.record(r).attrs;
            shape.push_back(a.shape);
            color.push_back(a.fill);
            size.push_back(a.size);
          }
          auto logits = s.bundle.fie.classify(d.images<float>(ids));
          auto ls = class_ce(logits.shape, shape), lc = class_ce(logits.color, color), lz = class_ce(logits.size, size);
          auto total = ad::add(ad::add(ls, lc), lz);
          zero_all(s);
          ad::backward(total);
          update(s, hooks, Phase::fie, "fie");
          return std::vector<double>{ls.item(), lc.item(), lz.item(), total.item()};
        },
        [&](std::size_t done) {
          if (done == s.config.epochs_fie) {
            s.bundle.fie.freeze();
            s.optimizers.erase("fie");
          }
        });
    if (!s.bundle.fie.frozen()) return;
  }
  const auto V = s.model.vocab_size;
  run_epochs(s, d, Phase::captioner, s.config.epochs_pretrain, {"ce"}, hooks, budget,
             [&](const std::vector<std::size_t>& ids, std::size_t) {
               auto ref = models::one_hot<float>(own_captions(s, d, ids), V);
               auto out = s.bundle.g_y.teacher_forced(s.bundle.fie.features(d.images<float>(ids)), ref);
               auto mask = losses::until_eos_mask(ref);
               auto loss = losses::sequence_cross_entropy(out.logits, ref, &mask);
               zero_all(s);
               ad::backward(loss);
               update(s, hooks, Phase::captioner, "captioner");
               return std::vector<double>{loss.item()};
             });
}

void pretrain_t2i(TrainState& s, const data::Dataset& d, const TrainHooks& hooks) {
  const auto V = s.model.vocab_size;
  const auto& w = s.config.weights;
  run_epochs(s, d, Phase::t2i, s.config.epochs_pretrain, {"d_x", "g_x", "kl"}, hooks, hooks.max_epochs,
             [&](const std::vector<std::size_t>& ids, std::size_t) {
               const std::size_t b = ids.size();
               auto x = d.images<float>(ids);
               auto ref = models::one_hot<float>(own_captions(s, d, ids), V);
               auto enc = s.bundle.text.encode(ref, models::normal_noise<float>({b, s.model.cond_dim}, s.cond));
               auto fake = s.bundle.g_x.generate(enc.c, models::normal_noise<float>({b, s.model.z_dim}, s.latent),
                                                 nn::Mode::train);

               // D step: the text features enter as constants.
               auto phi = enc.phi.detach();
               auto ld = losses::d_x_loss(s.bundle.d_x.score(x, phi, nn::Mode::train),
                                          s.bundle.d_x.score(fake.detach(), phi, nn::Mode::train));
               zero_all(s);
               ad::backward(ld);
               update(s, hooks, Phase::t2i, "t2i_d");

               auto lg = losses::g_x_loss(s.bundle.d_x.score(fake, enc.phi, nn::Mode::train), enc.mu, enc.log_var, w);
               zero_all(s);
               ad::backward(lg);
               update(s, hooks, Phase::t2i, "t2i_g");
               return std::vector<double>{ld.item(), lg.item(), losses::kl_diag_gauss(enc.mu, enc.log_var).item()};
             });
}

void train_cycle(TrainState& s, const data::Dataset& d, const TrainHooks& hooks) {
  if (!s.bundle.fie.frozen()) throw std::logic_error("train_cycle: the image encoder has not been pretrained");
  const auto V = s.model.vocab_size;
  const auto& w = s.config.weights;
  const auto train = d.indices(data::Split::train);
  const auto test = d.indices(data::Split::test);

  if (s.done(Phase::main) == 0) {
    if (s.config.unpaired) {
      Rng pr = derive_stream(s.config.seed, Stream::pairing);
      s.pairing = data::Pairing::shuffled(train, pr);
    } else {
      s.pairing = data::Pairing::paired(train);
    }
  }

  CsvLog eval_log;
  auto evaluate = [&](std::size_t epoch) {
    if (!eval_log.is_open()) return;
    auto cyc = heldout_cycle_image_loss(s.bundle, d, test, s.config);
    eval_log.row({static_cast<double>(epoch), cyc.total, cyc.pixel, cyc.feature, color_accuracy(s.bundle, d, test)});
    eval_log.flush();
  };
  if (hooks.evaluate_main && !hooks.log_dir.empty() && s.done(Phase::main) < s.config.epochs_main &&
      hooks.max_epochs > 0) {
    const bool fresh = s.done(Phase::main) == 0;
    eval_log = CsvLog(hooks.log_dir / "eval_main.csv",
                      {"epoch", "cycle_image", "cycle_pixel", "cycle_feature", "color_accuracy"}, !fresh);
    if (fresh) evaluate(0);
  }

  run_epochs(
      s, d, Phase::main, s.config.epochs_main,
      {"d_y", "d_x", "g_y", "g_x", "kl", "cyc_pixel", "cyc_feature", "cyc_text", "cyc_total", "v_d", "v_g"}, hooks,
      hooks.max_epochs,
      [&](const std::vector<std::size_t>& ids, std::size_t epoch) {
        const std::size_t b = ids.size();
        auto batch = data::make_batch(d, ids, s.pairing, s.pick);
        auto x = d.images<float>(ids);
        auto y = models::one_hot<float>(batch.captions, V);
        auto fx = s.bundle.fie.features(x);
        const float tau = static_cast<float>(s.config.gumbel.tau_at(epoch, s.config.epochs_main));

        // Generator forward passes shared by both steps.
        auto roll = s.bundle.g_y.rollout(fx, sampling::gumbel_noise<float>({b, s.model.seq_len, V}, s.gumbel), tau);
        auto enc = s.bundle.text.encode(y, models::normal_noise<float>({b, s.model.cond_dim}, s.cond));
        auto x_fake = s.bundle.g_x.generate(enc.c, models::normal_noise<float>({b, s.model.z_dim}, s.latent),
                                            nn::Mode::train);

        auto phi = enc.phi.detach();
        auto l_dy = losses::d_y_loss(s.bundle.d_y.score(y, fx), s.bundle.d_y.score(roll.soft.detach(), fx));
        auto l_dx = losses::d_x_loss(s.bundle.d_x.score(x, phi, nn::Mode::train),
                                     s.bundle.d_x.score(x_fake.detach(), phi, nn::Mode::train));
        losses::Components<float> parts;
        parts.d_y = l_dy;
        parts.d_x = l_dx;
        auto v_d = losses::total_losses(parts, false).v_d;
        zero_all(s);
        ad::backward(v_d);
        update(s, hooks, Phase::main, "main_d");

        parts.g_y = losses::g_y_loss(s.bundle.d_y.score(roll.soft, fx));
        parts.g_x = losses::g_x_loss(s.bundle.d_x.score(x_fake, enc.phi, nn::Mode::train), enc.mu, enc.log_var, w);
        losses::CycleTerms<float> cyc;
        if (s.config.cycle) {
          // image -> caption -> image
          auto enc_fake = s.bundle.text.encode(roll.soft, models::normal_noise<float>({b, s.model.cond_dim}, s.cond));
          auto x_regen = s.bundle.g_x.generate(
              enc_fake.c, models::normal_noise<float>({b, s.model.z_dim}, s.latent), nn::Mode::train);
          // caption -> image -> caption, scored against the dataset caption
          auto y_logits = s.bundle.g_y.teacher_forced(s.bundle.fie.features(x_fake), y).logits;
          cyc = losses::cycle_loss(x, x_regen, fx, s.bundle.fie.features(x_regen), y_logits, y, w);
          parts.cycle = cyc.total;
        }
        auto v_g = losses::total_losses(parts, s.config.cycle).v_g;
        zero_all(s);
        ad::backward(v_g);
        update(s, hooks, Phase::main, "main_g");

        auto val = [](const Tensor& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; };
        return std::vector<double>{val(l_dy),      val(l_dx),        val(parts.g_y),
                                   val(parts.g_x), val(losses::kl_diag_gauss(enc.mu, enc.log_var)),
                                   val(cyc.pixel), val(cyc.feature), val(cyc.text),
                                   val(cyc.total), val(v_d),         val(v_g)};
      },
      [&](std::size_t done) { evaluate(done); });
}

void save_state(const std::filesystem::path& path, const TrainState& s) {
  CheckpointData ck;
  ck.meta["kind"] = "train_state";
  ck.meta["config"] = s.config.to_text();
  ck.meta["vocab"] = s.vocab.words();
  ck.meta["image_size"] = s.model.image_size;
  ck.meta["epochs_done"] = s.epochs_done;
  ck.meta["step"] = s.step;
  ck.meta["fie_frozen"] = s.bundle.fie.frozen();
  ck.meta["pairing"] = s.pairing.to_json();
  ck.meta["rng"] = {{"shuffle", serialize_rng(s.shuffle)},
                    {"pick", serialize_rng(s.pick)},
                    {"gumbel", serialize_rng(s.gumbel)},
                    {"latent", serialize_rng(s.latent)},
                    {"cond", serialize_rng(s.cond)}};
  auto all = s.bundle.all_params();
  for (const auto* group : {&all.params, &all.buffers})
    for (const auto& [name, t] : *group) ck.tensors.push_back({name, t.shape(), flat(t)});
  ck.meta["optimizers"] = nlohmann::json::object();
  for (const auto& [name, opt] : s.optimizers) {
    ck.meta["optimizers"][name] = {{"steps", opt.steps()}};
    for (const auto& [pname, t] : opt.params().params) {
      ck.tensors.push_back({"opt." + name + ".m." + pname, t.shape(), opt.first_moments().at(pname)});
      ck.tensors.push_back({"opt." + name + ".v." + pname, t.shape(), opt.second_moments().at(pname)});
    }
  }
  write_checkpoint(path, ck);
}

TrainState load_state(const std::filesystem::path& path) {
  auto ck = read_checkpoint(path);
  TrainState s;
  try {
    if (ck.meta.at("kind") != "train_state") throw CheckpointError(path.string() + " does not hold a training state");
    s.config = TrainConfig::from_text(ck.meta.at("config").get<std::string>());
    s.vocab = models::Vocab(ck.meta.at("vocab").get<std::vector<std::string>>());
    s.model = model_config(s.config, s.vocab.size(), ck.meta.at("image_size").get<std::size_t>());
    Rng init = derive_stream(s.config.seed, Stream::init);
    s.bundle = Bundle(s.model, init);
    if (ck.meta.at("fie_frozen").get<bool>()) s.bundle.fie.freeze();
    auto named = s.bundle.all_params().by_name();
    for (auto& [name, t] : named) {
      const auto& saved = ck.tensor(name);
      if (saved.shape != t.shape()) {
        throw CheckpointError("tensor '" + name + "' has shape " + ad::to_string(saved.shape) + ", expected " +
                              ad::to_string(t.shape()));
      }
      std::copy(saved.values.begin(), saved.values.end(), t.mutable_data().begin());
    }
    s.epochs_done = ck.meta.at("epochs_done").get<std::map<std::string, std::size_t>>();
    s.step = ck.meta.at("step").get<std::uint64_t>();
    s.pairing = data::Pairing::from_json(ck.meta.at("pairing").get<std::string>());
    const auto& rng = ck.meta.at("rng");
    s.shuffle = deserialize_rng(rng.at("shuffle").get<std::string>());
    s.pick = deserialize_rng(rng.at("pick").get<std::string>());
    s.gumbel = deserialize_rng(rng.at("gumbel").get<std::string>());
    s.latent = deserialize_rng(rng.at("latent").get<std::string>());
    s.cond = deserialize_rng(rng.at("cond").get<std::string>());
    for (const auto& [name, info] : ck.meta.at("optimizers").items()) {
      auto& opt = optimizer(s, name);
      opt.set_steps(info.at("steps").get<std::uint64_t>());
      for (const auto& [pname, t] : opt.params().params) {
        opt.first_moments()[pname] = ck.tensor("opt." + name + ".m." + pname).values;
        opt.second_moments()[pname] = ck.tensor("opt." + name + ".v." + pname).values;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed metadata: " + e.what());
  } catch (const std::out_of_range&) {
    throw CheckpointError(path.string() + ": unknown optimizer in metadata");
  }
  return s;
}

}  // namespace cyclecap::training
