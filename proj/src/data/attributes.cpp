#include "cyclecap/data/attributes.hpp"

#include <stdexcept>

namespace cyclecap::data {

namespace {

template <std::size_t N>
std::optional<int> find(const std::array<std::string_view, N>& table, std::string_view name) {
  for (std::size_t i = 0; i < N; ++i)
    if (table[i] == name) return static_cast<int>(i);
  return std::nullopt;
}

}  // namespace

std::optional<int> color_index(std::string_view word) { return find(kColors, word); }

int shape_index(std::string_view name) {
  if (auto i = find(kShapes, name)) return *i;
  throw std::invalid_argument("unknown shape '" + std::string(name) + "'");
}

int size_index(std::string_view name) {
  if (auto i = find(kSizes, name)) return *i;
  throw std::invalid_argument("unknown size '" + std::string(name) + "'");
}

}  // namespace cyclecap::data
