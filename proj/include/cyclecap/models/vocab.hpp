#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "cyclecap/autodiff/tensor.hpp"

namespace cyclecap::models {

using TokenId = std::int32_t;

/// Token <-> id bijection. Ids 0..2 are reserved: 0 = <eos>, 1 = <bos>,
/// 2 = <unk>; corpus words follow in the order they were added.
class Vocab {
 public:
  static constexpr TokenId kEos = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kUnk = 2;

  Vocab();
  explicit Vocab(const std::vector<std::string>& words);

  TokenId add(const std::string& word);
  TokenId id(const std::string& word) const;  // kUnk when absent
  const std::string& word(TokenId id) const;
  bool contains(const std::string& word) const { return index_.count(word) > 0; }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  /// One token per line; the line number is the id.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Hard caption: exactly T ids; once <eos> appears every later id is <eos>.
struct Caption {
  std::vector<TokenId> tokens;

  std::size_t length() const { return tokens.size(); }
  /// Number of tokens before the first <eos>.
  std::size_t word_count() const;
  bool eos_suffix_valid() const;
  /// Words before the first <eos>, joined by single spaces.
  std::string text(const Vocab& vocab) const;
  std::vector<std::string> words(const Vocab& vocab) const;

  bool operator==(const Caption&) const = default;
};

/// [batch, T, vocab] exact one-hot encoding of hard captions.
template <typename T>
ad::Tensor<T> one_hot(const std::vector<Caption>& captions, std::size_t vocab_size);

/// Argmax per position of a [batch, T, vocab] soft caption, EOS suffix enforced.
template <typename T>
std::vector<Caption> harden(const ad::Tensor<T>& soft);

}  // namespace cyclecap::models
