#include "cyclecap/data/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace cyclecap::data {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{
    {220, 30, 30},    // red
    {245, 140, 20},   // orange
    {240, 225, 40},   // yellow
    {40, 170, 60},    // green
    {40, 80, 220},    // blue
    {140, 50, 170},   // purple
    {245, 130, 190},  // pink
    {15, 15, 15},     // black
}};
constexpr std::array<std::uint8_t, 3> kBackground{150, 150, 150};
constexpr std::array<double, 3> kRadius{0.18, 0.28, 0.40};  // of the image side

const double kPi = std::acos(-1.0);

using Point = std::array<double, 2>;

bool in_polygon(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
  }
  return in;
}

std::vector<Point> star_polygon() {
  std::vector<Point> p;
  for (int k = 0; k < 10; ++k) {
    const double r = k % 2 ? 0.42 : 1.0;
    const double a = -kPi / 2 + k * kPi / 5;
    p.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return p;
}

// Membership in the unit-radius shape; (u, v) in shape coordinates, y down.
bool inside(int shape, double u, double v) {
  static const std::vector<Point> star = star_polygon();
  static const std::vector<Point> triangle{{0.0, -1.0}, {0.866, 0.5}, {-0.866, 0.5}};
  switch (shape) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::abs(u) <= 0.82 && std::abs(v) <= 0.82;
    case 2: return in_polygon(triangle, u, v - 0.15);
    case 3: return in_polygon(star, u, v);
    case 4: return (std::abs(u) <= 0.3 && std::abs(v) <= 0.95) || (std::abs(v) <= 0.3 && std::abs(u) <= 0.95);
  }
  throw std::logic_error("unknown shape index");
}

std::string article_fix(std::string s) {
  // "a" before a vowel sound becomes "an".
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    const bool word_start = i == 0 || s[i - 1] == ' ';
    if (word_start && s.compare(i, 2, "a ") == 0 && i + 2 < s.size() &&
        std::string_view("aeiou").find(s[i + 2]) != std::string_view::npos) {
      out += "an ";
      i += 2;
      continue;
    }
    out += s[i++];
  }
  return out;
}

const std::array<std::vector<std::string_view>, 5> kShapeWords{{
    {"circle", "disc", "round shape"},
    {"square", "box", "square shape"},
    {"triangle", "triangular shape"},
    {"star", "star shape", "five pointed star"},
    {"cross", "plus sign", "cross shape"},
}};
const std::array<std::vector<std::string_view>, 3> kSizeWords{{
    {"small", "little", "tiny"},
    {"medium", "medium sized", "moderate"},
    {"large", "big", "huge"},
}};

// {s} size, {f} fill color, {o} outline color, {h} shape.
const std::vector<std::string_view> kTemplates{
    "a {s} {f} {h} with a {o} outline.",
    "this is a {s} {h} that is {f} with a {o} border.",
    "the {h} is {s} and {f}, outlined in {o}.",
    "a {f} {h} of {s} size, edged in {o}.",
    "there is a {s} {f} {h} bordered by {o}.",
    "{s} {h}, colored {f}, with {o} edges.",
    "a picture of a {s} {h} filled with {f} and traced in {o}.",
    "this {f} {h} is {s} and has a thin {o} rim.",
    "an image showing one {s} {f} {h} with {o} lines around it.",
    "the {f} {h} here is {s}; its outline is {o}.",
    "a {s} {h} painted {f} sits in the middle, outlined {o}.",
    "{f} is the color of this {s} {h}, and the border is {o}.",
    "we see a {f} {h}, {s} in size, with a {o} contour.",
    "one {s} {f} {h} surrounded by a {o} outline.",
};

std::string fill_template(std::string_view frame, const Attributes& a, Rng& rng) {
  auto choose = [&](const std::vector<std::string_view>& options) {
    std::uniform_int_distribution<std::size_t> d(0, options.size() - 1);
    return options[d(rng)];
  };
  const auto shape = choose(kShapeWords[a.shape]);
  const auto size = choose(kSizeWords[a.size]);
  std::string out;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (frame[i] == '{' && i + 2 < frame.size() && frame[i + 2] == '}') {
      switch (frame[i + 1]) {
        case 's': out += size; break;
        case 'f': out += kColors[a.fill]; break;
        case 'o': out += kColors[a.outline]; break;
        case 'h': out += shape; break;
        default: throw std::logic_error("bad caption template");
      }
      i += 2;
    } else {
      out += frame[i];
    }
  }
  return article_fix(std::move(out));
}

}  // namespace

std::size_t caption_template_count() { return kTemplates.size(); }

Attributes sample_attributes(Rng& rng) {
  Attributes a;
  a.shape = std::uniform_int_distribution<int>(0, kShapes.size() - 1)(rng);
  a.fill = std::uniform_int_distribution<int>(0, kColors.size() - 1)(rng);
  // Uniform over the other seven colors.
  a.outline = std::uniform_int_distribution<int>(0, kColors.size() - 2)(rng);
  if (a.outline >= a.fill) ++a.outline;
  a.size = std::uniform_int_distribution<int>(0, kSizes.size() - 1)(rng);
  return a;
}

Image render(const Attributes& a, std::size_t image_size, Rng& rng) {
  if (image_size < 8) throw std::invalid_argument("render: image size must be at least 8");
  const double n = static_cast<double>(image_size);
  const double radius = kRadius.at(a.size) * n;
  const double slack = std::max(0.0, 0.5 * n - radius - 1.0);
  std::uniform_real_distribution<double> jitter(-std::min(slack, n / 16), std::min(slack, n / 16));
  const double cx = 0.5 * n + jitter(rng), cy = 0.5 * n + jitter(rng);
  const double border = std::min(std::max(1.5, n / 20), 0.22 * radius);
  const double band = border / radius;  // outline width in shape units

  Image img(image_size, image_size);
  constexpr int kSub = 4;  // 4x4 supersampling per pixel
  const auto& fill = kPalette[a.fill];
  const auto& edge = kPalette[a.outline];
  for (std::size_t y = 0; y < image_size; ++y)
    for (std::size_t x = 0; x < image_size; ++x) {
      std::array<double, 3> acc{0, 0, 0};
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const double u = (x + (sx + 0.5) / kSub - cx) / radius;
          const double v = (y + (sy + 0.5) / kSub - cy) / radius;
          const auto* c = &kBackground;
          if (inside(a.shape, u, v)) {
            // Fill where the whole disc of radius `band` stays inside, so
            // the outline has constant width even at sharp corners.
            c = &fill;
            for (int k = 0; k < 8 && c == &fill; ++k) {
              const double t = k * kPi / 4;
              if (!inside(a.shape, u + band * std::cos(t), v + band * std::sin(t))) c = &edge;
            }
          }
          for (int k = 0; k < 3; ++k) acc[k] += (*c)[k];
        }
      auto* p = img.pixel(x, y);
      for (int k = 0; k < 3; ++k) p[k] = static_cast<std::uint8_t>(std::lround(acc[k] / (kSub * kSub)));
    }
  return img;
}

std::vector<std::string> describe(const Attributes& a, Rng& rng) {
  std::vector<std::size_t> frames(kTemplates.size());
  std::iota(frames.begin(), frames.end(), 0);
  std::shuffle(frames.begin(), frames.end(), rng);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kCaptionsPerImage; ++i) out.push_back(fill_template(kTemplates[frames[i]], a, rng));
  return out;
}

Manifest synth_generate(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir,
                        const SynthConfig& config) {
  if (n < 10) throw std::invalid_argument("synth_generate: need at least 10 images, got " + std::to_string(n));
  if (!(config.test_fraction > 0.0 && config.test_fraction < 1.0)) {
    throw std::invalid_argument("synth_generate: test fraction must lie in (0, 1)");
  }
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");

  Manifest m;
  m.image_size = config.image_size;
  m.seed = seed;
  m.records.resize(n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = derive_stream(seed, Stream::split);
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(config.test_fraction * n)));

  std::vector<std::string> corpus;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = derive_stream(seed, Stream::synth, i);
    auto& r = m.records[i];
    r.id = i;
    r.attrs = sample_attributes(rng);
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.png", i);
    r.image = name;
    write_png(out_dir / r.image, render(r.attrs, config.image_size, rng));
    r.captions = describe(r.attrs, rng);
    corpus.insert(corpus.end(), r.captions.begin(), r.captions.end());
  }
  for (std::size_t k = 0; k < n_test; ++k) m.records[order[k]].split = Split::test;

  build_vocab(corpus).save(out_dir / m.vocab_file);
  m.save(out_dir / "manifest.json");
  return m;
}

}  // namespace cyclecap::data
