#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace cyclecap {

using Rng = std::mt19937_64;

/// Independent random streams derived from one master seed. Changing one
/// stream's consumption never shifts another stream.
enum class Stream : std::uint64_t {
  init = 1,
  shuffle = 2,
  caption_pick = 3,
  gumbel = 4,
  latent = 5,
  cond_noise = 6,
  pairing = 7,
  eval = 8,
  synth = 9,
  split = 10,
};

Rng derive_stream(std::uint64_t master_seed, Stream stream, std::uint64_t salt = 0);

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& text);

}  // namespace cyclecap
