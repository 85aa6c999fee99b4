// cyclecap: corpus synthesis, training, inference, evaluation and the
// binomial test behind one binary. Exit codes: 0 ok, 2 bad arguments,
// 3 bad data, 4 training aborted.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cyclecap/data/dataset.hpp"
#include "cyclecap/data/image.hpp"
#include "cyclecap/data/synth.hpp"
#include "cyclecap/losses/losses.hpp"
#include "cyclecap/metrics/metrics.hpp"
#include "cyclecap/training/checkpoint.hpp"
#include "cyclecap/training/evaluate.hpp"
#include "cyclecap/training/trainer.hpp"

namespace fs = std::filesystem;
using namespace cyclecap;
using training::TrainConfig;
using training::TrainState;

namespace {

struct CliError {
  int code;
  std::string kind;
  std::string message;
};

[[noreturn]] void bad_args(const std::string& m) { throw CliError{2, "bad_args", m}; }
[[noreturn]] void bad_data(const std::string& m) { throw CliError{3, "bad_data", m}; }

constexpr const char* kDataEnv = "CYCLECAP_DATA";

// Config file values, then --set overrides, then dedicated flags.
struct RunConfig {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // key -> value, only when given
  std::map<std::string, std::string> paths;

  TrainConfig resolve(TrainConfig base) const {
    try {
      if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) bad_args("cannot read config file " + config_file);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
          ++n;
          if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          auto eq = line.find('=');
          if (eq == std::string::npos) bad_args(config_file + ":" + std::to_string(n) + ": expected key = value");
          apply(base, line.substr(0, eq), line.substr(eq + 1));
        }
      }
      for (const auto& s : sets) {
        auto eq = s.find('=');
        if (eq == std::string::npos) bad_args("--set expects key=value, got '" + s + "'");
        apply(base, s.substr(0, eq), s.substr(eq + 1));
      }
      for (const auto& [k, v] : flags) base.set(k, v);
      base.validate();
    } catch (const std::invalid_argument& e) {
      bad_args(e.what());
    }
    return base;
  }

  void apply(TrainConfig& c, std::string key, std::string value) const {
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    key = trim(key);
    value = trim(value);
    if (key == "data" || key == "out" || key == "from_pretrain") return;  // paths come from flags
    c.set(key, value);
  }
};

void add_train_flags(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--config", rc.config_file, "key = value config file");
  cmd->add_option("--set", rc.sets, "override one setting, key=value (repeatable)");
  for (const char* key : {"seed", "profile", "epochs_fie", "epochs_pretrain", "epochs_main", "batch_size", "lr"}) {
    std::string flag = std::string("--") + key;
    for (auto& ch : flag)
      if (ch == '_') ch = '-';
    cmd->add_option_function<std::string>(flag, [&rc, key](const std::string& v) { rc.flags[key] = v; }, key);
  }
}

std::string default_data(const std::string& given) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv(kDataEnv)) return env;
  bad_args(std::string("--data is required (or set ") + kDataEnv + ")");
}

data::Dataset load_data(const std::string& dir, std::size_t seq_len) {
  try {
    return data::Dataset(dir, seq_len);
  } catch (const std::exception& e) {
    bad_data(e.what());
  }
}

TrainState load_ckpt(const std::string& path) {
  try {
    return training::load_state(path);
  } catch (const std::exception& e) {
    bad_data(e.what());
  }
}

data::Image load_image(const std::string& path, std::size_t size) {
  data::Image img;
  try {
    img = data::read_png(path);
  } catch (const std::exception& e) {
    bad_data(e.what());
  }
  if (img.width != size || img.height != size) {
    bad_data(path + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) + ", the model expects " +
             std::to_string(size) + "x" + std::to_string(size));
  }
  return img;
}

ad::Tensor<float> image_tensor(const data::Image& img) {
  return ad::Tensor<float>({1, 3, img.height, img.width}, [&] {
    auto p = data::to_planar(img);
    return std::vector<float>(p.begin(), p.end());
  }());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void persist_config(const fs::path& out, const TrainConfig& c, const std::map<std::string, std::string>& paths) {
  std::string text = c.to_text();
  for (const auto& [k, v] : paths) text += "# " + k + " = " + v + "\n";
  write_text(out / "config.txt", text);
}

void prepare_out(const fs::path& out, const fs::path& data_dir) {
  std::error_code ec;
  if (fs::exists(data_dir) && fs::exists(out) && fs::equivalent(out, data_dir, ec)) {
    bad_args("the output directory must differ from the dataset directory");
  }
  fs::create_directories(out);
}

training::TrainHooks hooks_for(const fs::path& out, const std::string& last_name) {
  training::TrainHooks h;
  h.log_dir = out;
  h.on_epoch_end = [out, last_name](const TrainState& s, training::Phase p) {
    training::save_state(out / last_name, s);
    std::fprintf(stderr, "[%s] epoch %zu done (step %llu)\n", training::phase_name(p), s.done(p),
                 static_cast<unsigned long long>(s.step));
  };
  return h;
}

template <typename Fn>
void guard_training(const fs::path& last, Fn fn) {
  try {
    fn();
  } catch (const training::TrainingDiverged& e) {
    throw CliError{4, "training_aborted",
                   std::string(e.what()) + (fs::exists(last) ? "; last good checkpoint: " + last.string() : "")};
  }
}

std::vector<std::string> caption_words(const models::Caption& c, const models::Vocab& v) { return c.words(v); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cycle-consistent image/caption GAN on a synthetic shapes corpus"};
  app.require_subcommand(1);

  // synth-data
  std::size_t synth_n = 2000, image_size = 32;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-data", "render a synthetic image+caption corpus");
  synth->add_option("--n", synth_n, "number of images")->required();
  synth->add_option("--seed", synth_seed, "corpus seed")->required();
  synth->add_option("--out", synth_out, "dataset directory")->required();
  synth->add_option("--image-size", image_size, "image side in pixels");

  // pretrain / train
  RunConfig pre_rc, train_rc;
  std::string pre_data, pre_out, train_data, train_out, from_pretrain;
  bool resume = false, no_cycle = false, unpaired = false;
  auto* pre = app.add_subcommand("pretrain", "F_IE + captioner pretraining, then text-to-image GAN pretraining");
  pre->add_option("--data", pre_data, "dataset directory");
  pre->add_option("--out", pre_out, "run directory")->required();
  pre->add_flag("--resume", resume, "continue from <out>/last.ckpt");
  add_train_flags(pre, pre_rc);

  auto* train = app.add_subcommand("train", "joint cycle training from a pretraining checkpoint");
  train->add_option("--data", train_data, "dataset directory");
  train->add_option("--from-pretrain", from_pretrain, "checkpoint written by pretrain, or its run directory")->required();
  train->add_option("--out", train_out, "run directory")->required();
  train->add_flag("--no-cycle", no_cycle, "comparison method without the cycle-consistency loss");
  train->add_flag("--unpaired", unpaired, "random image/caption pairing");
  add_train_flags(train, train_rc);

  // inference
  std::string ckpt, image_path, text, out_path, out_dir;
  std::uint64_t infer_seed = 1;
  auto* caption = app.add_subcommand("caption", "caption one image");
  caption->add_option("--ckpt", ckpt)->required();
  caption->add_option("--image", image_path)->required();

  auto* imagine = app.add_subcommand("imagine", "render an image from a caption");
  imagine->add_option("--ckpt", ckpt)->required();
  imagine->add_option("--text", text)->required();
  imagine->add_option("--seed", infer_seed);
  imagine->add_option("--out", out_path, "output PNG")->required();

  auto* cycle = app.add_subcommand("cycle", "image -> caption -> image round trip");
  cycle->add_option("--ckpt", ckpt)->required();
  cycle->add_option("--image", image_path)->required();
  cycle->add_option("--out-dir", out_dir)->required();
  cycle->add_option("--seed", infer_seed);

  std::string eval_data, eval_out;
  std::size_t eval_splits = 10;
  auto* eval = app.add_subcommand("eval", "caption metrics and inception score on the test split");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--data", eval_data);
  eval->add_option("--out", eval_out)->required();
  eval->add_option("--splits", eval_splits, "inception-score splits");

  long binom_k = 0, binom_n = 0;
  double binom_p0 = 0.5;
  auto* stats = app.add_subcommand("stats", "significance tests");
  stats->require_subcommand(1);
  auto* binom = stats->add_subcommand("binom", "exact two-sided binomial test");
  binom->add_option("--k", binom_k)->required();
  binom->add_option("--n", binom_n)->required();
  binom->add_option("--p0", binom_p0);

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      bad_args(e.what());
    }

    if (*synth) {
      if (synth_n < 10) bad_args("--n must be at least 10");
      data::synth_generate(synth_n, synth_seed, synth_out, {image_size, 0.1});
      std::printf("%s\n", synth_out.c_str());
    } else if (*pre) {
      const auto data_dir = default_data(pre_data);
      const fs::path out = pre_out;
      const auto last = out / "last.ckpt";
      TrainState state;
      TrainConfig cfg = pre_rc.resolve(TrainConfig{});
      prepare_out(out, data_dir);
      auto d = load_data(data_dir, training::resolved_seq_len(cfg));
      if (resume && fs::exists(last)) {
        state = load_ckpt(last.string());
      } else {
        state = TrainState::create(cfg, d.vocab(), d.image_size());
      }
      persist_config(out, state.config, {{"data", data_dir}, {"out", out.string()}});
      guard_training(last, [&] {
        auto hooks = hooks_for(out, "last.ckpt");
        training::pretrain_captioner(state, d, hooks);
        training::save_state(out / "captioner.ckpt", state);
        training::pretrain_t2i(state, d, hooks);
        training::save_state(out / "pretrain.ckpt", state);
      });
      std::printf("%s\n", (out / "pretrain.ckpt").c_str());
    } else if (*train) {
      const auto data_dir = default_data(train_data);
      const fs::path out = train_out;
      // A pretraining run directory stands for its final checkpoint.
      if (fs::is_directory(from_pretrain)) from_pretrain = (fs::path(from_pretrain) / "pretrain.ckpt").string();
      auto state = load_ckpt(from_pretrain);
      if (state.done(training::Phase::t2i) < state.config.epochs_pretrain) {
        bad_data(from_pretrain + " has not finished pretraining");
      }
      if (no_cycle) train_rc.flags["cycle"] = "false";
      if (unpaired) train_rc.flags["unpaired"] = "true";
      auto cfg = train_rc.resolve(state.config);
      if (cfg.profile != state.config.profile || training::resolved_seq_len(cfg) != state.model.seq_len ||
          cfg.dy_fusion != state.config.dy_fusion) {
        bad_args("profile, seq_len and dy_fusion must match the pretraining checkpoint");
      }
      state.config = cfg;
      prepare_out(out, data_dir);
      auto d = load_data(data_dir, state.model.seq_len);
      if (d.vocab().words() != state.vocab.words() || d.image_size() != state.model.image_size) {
        bad_data("dataset " + data_dir + " does not match the checkpoint's vocabulary or image size");
      }
      persist_config(out, cfg, {{"data", data_dir}, {"from_pretrain", from_pretrain}, {"out", out.string()}});
      const auto last = out / "last.ckpt";
      guard_training(last, [&] {
        training::train_cycle(state, d, hooks_for(out, "last.ckpt"));
        training::save_state(out / "main.ckpt", state);
      });
      write_text(out / "pairing.json", state.pairing.to_json() + "\n");
      std::printf("%s\n", (out / "main.ckpt").c_str());
    } else if (*caption) {
      auto state = load_ckpt(ckpt);
      auto x = image_tensor(load_image(image_path, state.model.image_size));
      auto& b = state.bundle;
      auto cap = models::harden(b.g_y.greedy(b.fie.features(x)).soft).front();
      std::printf("%s\n", cap.text(state.vocab).c_str());
    } else if (*imagine) {
      auto state = load_ckpt(ckpt);
      models::Caption cap;
      try {
        cap = data::preprocess_caption(text, state.vocab, state.model.seq_len);
      } catch (const std::invalid_argument& e) {
        bad_args(e.what());
      }
      auto& b = state.bundle;
      Rng cond = derive_stream(infer_seed, Stream::cond_noise), latent = derive_stream(infer_seed, Stream::latent);
      auto enc = b.text.encode(models::one_hot<float>({cap}, state.model.vocab_size),
                               models::normal_noise<float>({1, state.model.cond_dim}, cond));
      auto img = b.g_x.generate(enc.c, models::normal_noise<float>({1, state.model.z_dim}, latent), nn::Mode::eval);
      data::write_png(out_path, data::from_tensor(img, 0));
      std::printf("%s\n", out_path.c_str());
    } else if (*cycle) {
      auto state = load_ckpt(ckpt);
      auto& b = state.bundle;
      const auto& m = state.model;
      auto x = image_tensor(load_image(image_path, m.image_size));
      auto fx = b.fie.features(x);
      auto cap = models::harden(b.g_y.greedy(fx).soft).front();
      auto hot = models::one_hot<float>({cap}, m.vocab_size);
      Rng cond = derive_stream(infer_seed, Stream::cond_noise), latent = derive_stream(infer_seed, Stream::latent);
      auto enc = b.text.encode(hot, models::normal_noise<float>({1, m.cond_dim}, cond));
      auto xr = b.g_x.generate(enc.c, models::normal_noise<float>({1, m.z_dim}, latent), nn::Mode::eval);
      auto fr = b.fie.features(xr);
      auto cap_regen = models::harden(b.g_y.greedy(fr).soft).front();
      auto logits = b.g_y.teacher_forced(fr, hot).logits;
      auto terms = losses::cycle_loss(x, xr, fx, fr, logits, hot, state.config.weights);
      fs::create_directories(out_dir);
      data::write_png(fs::path(out_dir) / "regenerated.png", data::from_tensor(xr, 0));
      nlohmann::json report{{"caption", cap.text(state.vocab)},
                            {"regenerated_caption", cap_regen.text(state.vocab)},
                            {"pixel_l1", terms.pixel.item()},
                            {"feature_l1", terms.feature.item()},
                            {"text_ce", terms.text.item()},
                            {"total", terms.total.item()}};
      write_text(fs::path(out_dir) / "cycle.json", report.dump(2) + "\n");
      std::printf("%s\n", report.dump(2).c_str());
    } else if (*eval) {
      auto state = load_ckpt(ckpt);
      const auto data_dir = default_data(eval_data);
      auto d = load_data(data_dir, state.model.seq_len);
      if (d.vocab().words() != state.vocab.words() || d.image_size() != state.model.image_size) {
        bad_data("dataset " + data_dir + " does not match the checkpoint's vocabulary or image size");
      }
      const auto test = d.indices(data::Split::test);
      if (eval_splits == 0 || eval_splits > test.size()) bad_args("--splits must lie in [1, test size]");
      auto caps = training::greedy_captions(state.bundle, d, test);
      metrics::Corpus corpus;
      std::size_t color_hits = 0;
      for (std::size_t i = 0; i < test.size(); ++i) {
        metrics::EvalPair p;
        p.candidate = caption_words(caps[i], state.vocab);
        for (const auto& c : d.captions(test[i])) p.references.push_back(caption_words(c, state.vocab));
        corpus.push_back(std::move(p));
        color_hits += training::first_color(caps[i], state.vocab) == d.record(test[i]).attrs.fill;
      }
      metrics::MetricReport report;
      report.bleu4 = metrics::bleu4(corpus);
      report.rouge_l = metrics::rouge_l(corpus);
      report.meteor = metrics::meteor_lite(corpus);
      report.cider = metrics::cider(corpus);
      report.color_accuracy = double(color_hits) / double(test.size());
      auto is = training::generated_inception_score(state.bundle, d, test, state.config, eval_splits);
      report.inception_mean = is.mean;
      report.inception_std = is.std;
      report.write(eval_out);
      std::ofstream(fs::path(eval_out) / "captions.txt") << [&] {
        std::ostringstream o;
        for (std::size_t i = 0; i < test.size(); ++i) o << d.record(test[i]).image << '\t' << caps[i].text(state.vocab) << '\n';
        return o.str();
      }();
      std::ifstream txt(fs::path(eval_out) / "report.txt");
      std::cout << txt.rdbuf();
    } else if (*stats) {
      if (binom_k < 0 || binom_n < 0 || binom_k > binom_n) bad_args("binom needs 0 <= k <= n");
      if (!(binom_p0 > 0 && binom_p0 < 1)) bad_args("--p0 must lie in (0, 1)");
      std::printf("%.4g\n", metrics::binomial_test_two_sided(binom_k, binom_n, binom_p0));
    }
  } catch (const CliError& e) {
    std::fprintf(stderr, "error[%s]: %s\n", e.kind.c_str(), e.message.c_str());
    return e.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return 1;
  }
  return 0;
}
