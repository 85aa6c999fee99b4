#include "cyclecap/training/config.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace cyclecap::training {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("bad value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("bad value '" + value + "' for " + key + " (expected true or false)");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (profile != "smoke" && profile != "reference") throw std::invalid_argument("profile must be smoke or reference");
  if (dy_fusion != "product" && dy_fusion != "inner") throw std::invalid_argument("dy_fusion must be product or inner");
  if (epochs_fie < 1 || epochs_pretrain < 1 || epochs_main < 1) throw std::invalid_argument("epochs must be at least 1");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2 (batch normalization)");
  if (!(lr > 0) || !(fie_lr > 0) || !(captioner_lr > 0))
    throw std::invalid_argument("lr, fie_lr and captioner_lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("adam betas must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be non-negative");
  weights.validate();
  gumbel.validate();
}

void TrainConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const auto key = trim(raw_key);
  const auto value = trim(raw_value);
  if (key == "profile") profile = value;
  else if (key == "seq_len") seq_len = parse_number<std::size_t>(key, value);
  else if (key == "dy_fusion") dy_fusion = value;
  else if (key == "epochs_fie") epochs_fie = parse_number<std::size_t>(key, value);
  else if (key == "epochs_pretrain") epochs_pretrain = parse_number<std::size_t>(key, value);
  else if (key == "epochs_main") epochs_main = parse_number<std::size_t>(key, value);
  else if (key == "batch_size") batch_size = parse_number<std::size_t>(key, value);
  else if (key == "lr") lr = parse_number<double>(key, value);
  else if (key == "fie_lr") fie_lr = parse_number<double>(key, value);
  else if (key == "captioner_lr") captioner_lr = parse_number<double>(key, value);
  else if (key == "beta1") beta1 = parse_number<double>(key, value);
  else if (key == "beta2") beta2 = parse_number<double>(key, value);
  else if (key == "weight_decay") weight_decay = parse_number<double>(key, value);
  else if (key == "lambda_kl") weights.lambda_kl = parse_number<double>(key, value);
  else if (key == "lambda1") weights.lambda1 = parse_number<double>(key, value);
  else if (key == "lambda2") weights.lambda2 = parse_number<double>(key, value);
  else if (key == "lambda3") weights.lambda3 = parse_number<double>(key, value);
  else if (key == "tau") gumbel.tau = parse_number<double>(key, value);
  else if (key == "tau_anneal") gumbel.anneal = parse_bool(key, value);
  else if (key == "tau_final") gumbel.tau_final = parse_number<double>(key, value);
  else if (key == "cycle") cycle = parse_bool(key, value);
  else if (key == "unpaired") unpaired = parse_bool(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::settings() const {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {{"profile", profile},
          {"seq_len", std::to_string(seq_len)},
          {"dy_fusion", dy_fusion},
          {"epochs_fie", std::to_string(epochs_fie)},
          {"epochs_pretrain", std::to_string(epochs_pretrain)},
          {"epochs_main", std::to_string(epochs_main)},
          {"batch_size", std::to_string(batch_size)},
          {"lr", fmt(lr)},
          {"fie_lr", fmt(fie_lr)},
          {"captioner_lr", fmt(captioner_lr)},
          {"beta1", fmt(beta1)},
          {"beta2", fmt(beta2)},
          {"weight_decay", fmt(weight_decay)},
          {"lambda_kl", fmt(weights.lambda_kl)},
          {"lambda1", fmt(weights.lambda1)},
          {"lambda2", fmt(weights.lambda2)},
          {"lambda3", fmt(weights.lambda3)},
          {"tau", fmt(gumbel.tau)},
          {"tau_anneal", b(gumbel.anneal)},
          {"tau_final", fmt(gumbel.tau_final)},
          {"cycle", b(cycle)},
          {"unpaired", b(unpaired)},
          {"seed", std::to_string(seed)}};
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  for (const auto& [k, v] : settings()) out << k << " = " << v << '\n';
  return out.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    c.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return c;
}

std::size_t resolved_seq_len(const TrainConfig& config) {
  if (config.seq_len > 0) return config.seq_len;
  return config.profile == "reference" ? 20 : 12;
}

models::ModelConfig model_config(const TrainConfig& config, std::size_t vocab_size, std::size_t image_size) {
  auto m = config.profile == "reference" ? models::ModelConfig::reference(vocab_size)
                                         : models::ModelConfig::smoke(vocab_size);
  m.image_size = image_size;
  m.seq_len = resolved_seq_len(config);
  m.dy_fusion = config.dy_fusion;
  m.validate();
  return m;
}

}  // namespace cyclecap::training
