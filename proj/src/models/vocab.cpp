#include "cyclecap/models/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace cyclecap::models {

Vocab::Vocab() {
  add("<eos>");
  add("<bos>");
  add("<unk>");
}

Vocab::Vocab(const std::vector<std::string>& words) : Vocab() {
  for (const auto& w : words) add(w);
}

TokenId Vocab::add(const std::string& word) {
  if (word.empty() || word.find_first_of(" \t\r\n") != std::string::npos) {
    throw std::invalid_argument("vocab: token must be a non-empty word without whitespace: '" + word + "'");
  }
  auto [it, inserted] = index_.emplace(word, static_cast<TokenId>(words_.size()));
  if (inserted) words_.push_back(word);
  return it->second;
}

TokenId Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw std::out_of_range("vocab: id " + std::to_string(id) + " outside [0, " + std::to_string(words_.size()) + ")");
  }
  return words_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("vocab: cannot write " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("vocab: cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < 3 || lines[0] != "<eos>" || lines[1] != "<bos>" || lines[2] != "<unk>") {
    throw std::runtime_error("vocab: " + path.string() + " does not start with <eos>, <bos>, <unk>");
  }
  Vocab v;
  for (std::size_t i = 3; i < lines.size(); ++i) {
    if (v.contains(lines[i])) throw std::runtime_error("vocab: duplicate token '" + lines[i] + "'");
    v.add(lines[i]);
  }
  return v;
}

std::size_t Caption::word_count() const {
  auto it = std::find(tokens.begin(), tokens.end(), Vocab::kEos);
  return static_cast<std::size_t>(it - tokens.begin());
}

bool Caption::eos_suffix_valid() const {
  const auto n = word_count();
  return std::all_of(tokens.begin() + static_cast<std::ptrdiff_t>(n), tokens.end(),
                     [](TokenId t) { return t == Vocab::kEos; });
}

std::vector<std::string> Caption::words(const Vocab& vocab) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word_count(); ++i) out.push_back(vocab.word(tokens[i]));
  return out;
}

std::string Caption::text(const Vocab& vocab) const {
  std::string out;
  for (const auto& w : words(vocab)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

template <typename T>
ad::Tensor<T> one_hot(const std::vector<Caption>& captions, std::size_t vocab_size) {
  if (captions.empty()) throw std::invalid_argument("one_hot: empty batch");
  const std::size_t len = captions.front().length();
  std::vector<T> v(captions.size() * len * vocab_size, T(0));
  for (std::size_t b = 0; b < captions.size(); ++b) {
    if (captions[b].length() != len) {
      throw ad::ShapeError("one_hot: caption " + std::to_string(b) + " has length " +
                           std::to_string(captions[b].length()) + ", expected " + std::to_string(len));
    }
    for (std::size_t t = 0; t < len; ++t) {
      const auto id = captions[b].tokens[t];
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw std::out_of_range("one_hot: token id " + std::to_string(id) + " outside vocabulary");
      }
      v[(b * len + t) * vocab_size + static_cast<std::size_t>(id)] = T(1);
    }
  }
  return ad::Tensor<T>({captions.size(), len, vocab_size}, std::move(v));
}

template <typename T>
std::vector<Caption> harden(const ad::Tensor<T>& soft) {
  if (soft.rank() != 3) throw ad::ShapeError("harden: expected [batch, T, vocab], got " + ad::to_string(soft.shape()));
  const std::size_t batch = soft.dim(0), len = soft.dim(1), vocab = soft.dim(2);
  std::vector<Caption> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    bool ended = false;
    for (std::size_t t = 0; t < len; ++t) {
      const auto row = soft.data().subspan((b * len + t) * vocab, vocab);
      auto id = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
      if (ended) id = Vocab::kEos;
      ended = ended || id == Vocab::kEos;
      out[b].tokens.push_back(id);
    }
  }
  return out;
}

template ad::Tensor<float> one_hot<float>(const std::vector<Caption>&, std::size_t);
template ad::Tensor<double> one_hot<double>(const std::vector<Caption>&, std::size_t);
template std::vector<Caption> harden(const ad::Tensor<float>&);
template std::vector<Caption> harden(const ad::Tensor<double>&);

}  // namespace cyclecap::models
