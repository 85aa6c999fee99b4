#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "cyclecap/common/rng.hpp"
#include "cyclecap/models/vocab.hpp"

namespace cyclecap::data {

using models::Caption;
using models::Vocab;

/// Lowercase, drop '.', ',' and ';', split on whitespace.
std::vector<std::string> normalize_words(std::string_view raw);

/// Normalized words truncated to T, mapped to ids (unknown and reserved
/// words become <unk>), padded with <eos> to exactly T.
Caption preprocess_caption(std::string_view raw, const Vocab& vocab, std::size_t seq_len);

/// Vocabulary over every word of `corpus`, words in sorted order after the
/// reserved ids.
Vocab build_vocab(const std::vector<std::string>& corpus);

/// Captions shorter than this many words are never picked for training.
inline constexpr std::size_t kMinPickWords = 5;

/// Uniform choice among the captions with at least kMinPickWords words.
const Caption& pick_caption(const std::vector<Caption>& captions, Rng& rng, std::size_t record_id);

}  // namespace cyclecap::data
