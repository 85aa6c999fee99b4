#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace cyclecap::data {

inline constexpr std::array<std::string_view, 5> kShapes{"circle", "square", "triangle", "star", "cross"};
inline constexpr std::array<std::string_view, 8> kColors{"red",  "orange", "yellow", "green",
                                                         "blue", "purple", "pink",   "black"};
inline constexpr std::array<std::string_view, 3> kSizes{"small", "medium", "large"};

/// Ground truth of one synthetic image; indices into the tables above.
struct Attributes {
  int shape = 0;
  int fill = 0;
  int outline = 1;  // never equal to fill
  int size = 0;

  bool operator==(const Attributes&) const = default;
};

/// Index of a palette color word, if `word` is one.
std::optional<int> color_index(std::string_view word);
int shape_index(std::string_view name);
int size_index(std::string_view name);

}  // namespace cyclecap::data
