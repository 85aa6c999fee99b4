#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cyclecap/common/rng.hpp"
#include "cyclecap/data/attributes.hpp"
#include "cyclecap/data/dataset.hpp"
#include "cyclecap/data/image.hpp"

namespace cyclecap::data {

struct SynthConfig {
  std::size_t image_size = 64;
  double test_fraction = 0.1;
};

inline constexpr std::size_t kCaptionsPerImage = 10;

/// Number of caption frames the paraphrases are drawn from.
std::size_t caption_template_count();

Attributes sample_attributes(Rng& rng);
/// One centered shape on a plain neutral background; `rng` only jitters
/// the position by a few pixels.
Image render(const Attributes& attrs, std::size_t image_size, Rng& rng);
/// Ten paraphrases from distinct frames. The fill color is always named
/// before the outline color; the background is never mentioned.
std::vector<std::string> describe(const Attributes& attrs, Rng& rng);

/// Writes images/*.png, vocab.txt and manifest.json under `out_dir`.
Manifest synth_generate(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir,
                        const SynthConfig& config = {});

}  // namespace cyclecap::data
