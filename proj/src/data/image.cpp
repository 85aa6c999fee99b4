#include "cyclecap/data/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cyclecap::data {

void write_png(const std::filesystem::path& path, const Image& image) {
  png_image info{};
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(image.width);
  info.height = static_cast<png_uint_32>(image.height);
  info.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&info, path.c_str(), 0, image.rgb.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write " + path.string() + ": " + info.message);
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image info{};
  info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&info, path.c_str())) {
    throw std::runtime_error("cannot read " + path.string() + ": " + info.message);
  }
  info.format = PNG_FORMAT_RGB;
  Image out(info.width, info.height);
  if (!png_image_finish_read(&info, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&info);
    throw std::runtime_error("cannot decode " + path.string() + ": " + info.message);
  }
  return out;
}

std::vector<float> to_planar(const Image& image) {
  const std::size_t hw = image.width * image.height;
  std::vector<float> out(3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) out[c * hw + p] = image.rgb[p * 3 + c] / 127.5f - 1.0f;
  return out;
}

template <typename T>
Image from_planar(const T* values, std::size_t width, std::size_t height) {
  Image out(width, height);
  const std::size_t hw = width * height;
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(values[c * hw + p]), -1.0, 1.0);
      out.rgb[p * 3 + c] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
    }
  return out;
}

template <typename T>
Image from_tensor(const ad::Tensor<T>& pixels, std::size_t index) {
  if (pixels.rank() != 4 || pixels.dim(1) != 3 || index >= pixels.dim(0)) {
    throw ad::ShapeError("from_tensor: expected [batch, 3, H, W] with index < batch, got " +
                         ad::to_string(pixels.shape()));
  }
  const std::size_t h = pixels.dim(2), w = pixels.dim(3);
  return from_planar(pixels.data().data() + index * 3 * h * w, w, h);
}

template Image from_planar(const float*, std::size_t, std::size_t);
template Image from_planar(const double*, std::size_t, std::size_t);
template Image from_tensor(const ad::Tensor<float>&, std::size_t);
template Image from_tensor(const ad::Tensor<double>&, std::size_t);

}  // namespace cyclecap::data
