#include "cyclecap/models/bundle.hpp"

namespace cyclecap::models {

const char* part_name(Part part) {
  switch (part) {
    case Part::fie: return "fie";
    case Part::g_y: return "g_y";
    case Part::d_y: return "d_y";
    case Part::text: return "text";
    case Part::g_x: return "g_x";
    case Part::d_x: return "d_x";
  }
  return "?";
}

std::vector<Part> all_parts() { return {Part::fie, Part::g_y, Part::d_y, Part::text, Part::g_x, Part::d_x}; }

template <typename T>
ModelBundle<T>::ModelBundle(const ModelConfig& c, Rng& rng) : config(c) {
  config.validate();
  fie = ImageEncoder<T>(config, rng);
  g_y = Captioner<T>(config, rng);
  d_y = CaptionDiscriminator<T>(config, rng);
  text = TextEncoder<T>(config, rng);
  g_x = ImageGenerator<T>(config, rng);
  d_x = ImageDiscriminator<T>(config, rng);
}

template <typename T>
nn::LayerParams<T> ModelBundle<T>::params(Part part) const {
  nn::LayerParams<T> p;
  const std::string prefix = std::string(part_name(part)) + ".";
  switch (part) {
    case Part::fie: fie.collect(prefix, p); break;
    case Part::g_y: g_y.collect(prefix, p); break;
    case Part::d_y: d_y.collect(prefix, p); break;
    case Part::text: text.collect(prefix, p); break;
    case Part::g_x: g_x.collect(prefix, p); break;
    case Part::d_x: d_x.collect(prefix, p); break;
  }
  return p;
}

template <typename T>
nn::LayerParams<T> ModelBundle<T>::params(const std::vector<Part>& parts) const {
  nn::LayerParams<T> p;
  for (auto part : parts) p.append(params(part));
  return p;
}

template <typename T>
template <typename U>
ModelBundle<U> ModelBundle<T>::convert() const {
  Rng scratch(0);
  ModelBundle<U> out(config, scratch);
  nn::copy_values(out.all_params(), all_params());
  if (fie.frozen()) out.fie.freeze();
  return out;
}

template <typename T>
Tensor<T> normal_noise(const ad::Shape& shape, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(n(rng));
  return Tensor<T>(shape, std::move(v));
}

template class ModelBundle<float>;
template class ModelBundle<double>;
template ModelBundle<float> ModelBundle<float>::convert<float>() const;
template ModelBundle<double> ModelBundle<float>::convert<double>() const;
template ModelBundle<float> ModelBundle<double>::convert<float>() const;
template ModelBundle<double> ModelBundle<double>::convert<double>() const;
template Tensor<float> normal_noise<float>(const ad::Shape&, Rng&);
template Tensor<double> normal_noise<double>(const ad::Shape&, Rng&);

}  // namespace cyclecap::models
