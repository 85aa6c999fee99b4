#include "cyclecap/data/text.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace cyclecap::data {

std::vector<std::string> normalize_words(std::string_view raw) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : raw) {
    const auto u = static_cast<unsigned char>(ch);
    if (ch == '.' || ch == ',' || ch == ';') continue;
    if (std::isspace(u)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
      continue;
    }
    cur.push_back(static_cast<char>(std::tolower(u)));
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Caption preprocess_caption(std::string_view raw, const Vocab& vocab, std::size_t seq_len) {
  if (seq_len == 0) throw std::invalid_argument("preprocess_caption: caption length must be positive");
  auto words = normalize_words(raw);
  if (words.empty()) throw std::invalid_argument("preprocess_caption: caption '" + std::string(raw) + "' has no words");
  Caption c;
  c.tokens.assign(seq_len, Vocab::kEos);
  const std::size_t n = std::min(seq_len, words.size());
  for (std::size_t i = 0; i < n; ++i) {
    // Reserved ids may only come from padding, never from text.
    const auto id = vocab.id(words[i]);
    c.tokens[i] = id <= Vocab::kUnk ? Vocab::kUnk : id;
  }
  return c;
}

Vocab build_vocab(const std::vector<std::string>& corpus) {
  std::set<std::string> words;
  for (const auto& raw : corpus)
    for (auto& w : normalize_words(raw)) words.insert(std::move(w));
  Vocab v;
  for (const auto& w : words)
    if (!v.contains(w)) v.add(w);
  return v;
}

const Caption& pick_caption(const std::vector<Caption>& captions, Rng& rng, std::size_t record_id) {
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < captions.size(); ++i)
    if (captions[i].word_count() >= kMinPickWords) ok.push_back(i);
  if (ok.empty()) {
    throw std::invalid_argument("record " + std::to_string(record_id) + " has no caption with at least " +
                                std::to_string(kMinPickWords) + " words");
  }
  std::uniform_int_distribution<std::size_t> d(0, ok.size() - 1);
  return captions[ok[d(rng)]];
}

}  // namespace cyclecap::data
