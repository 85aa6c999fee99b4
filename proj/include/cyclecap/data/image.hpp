#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cyclecap/autodiff/tensor.hpp"

namespace cyclecap::data {

/// 8-bit RGB raster, row major, interleaved.
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}
  std::uint8_t* pixel(std::size_t x, std::size_t y) { return &rgb[(y * width + x) * 3]; }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return &rgb[(y * width + x) * 3]; }
  bool operator==(const Image&) const = default;
};

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Planar [3, H, W] values in [-1, 1] (v / 127.5 - 1).
std::vector<float> to_planar(const Image& image);
/// Inverse of to_planar for one [3, H, W] slice; values are clamped to [-1, 1].
template <typename T>
Image from_planar(const T* values, std::size_t width, std::size_t height);
/// Image `index` of a [batch, 3, H, W] tensor.
template <typename T>
Image from_tensor(const ad::Tensor<T>& pixels, std::size_t index);

}  // namespace cyclecap::data
