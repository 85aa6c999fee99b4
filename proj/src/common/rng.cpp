#include "cyclecap/common/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace cyclecap {

Rng derive_stream(std::uint64_t master_seed, Stream stream, std::uint64_t salt) {
  const auto id = static_cast<std::uint64_t>(stream);
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(salt),
                    static_cast<std::uint32_t>(salt >> 32)};
  return Rng(seq);
}

std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng deserialize_rng(const std::string& text) {
  Rng rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw std::runtime_error("deserialize_rng: malformed generator state");
  return rng;
}

}  // namespace cyclecap
