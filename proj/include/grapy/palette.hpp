#ifndef GRAPY_PALETTE_HPP
#define GRAPY_PALETTE_HPP

#include <array>
#include <cstdint>

#include "grapy/label_map.hpp"
#include "grapy/pnm.hpp"

namespace grapy {

// PASCAL VOC colour map: bits of the label spread over the high bits of R, G, B.
// Label 0 is black.
inline std::array<std::uint8_t, 3> palette_color(int label) {
  std::array<std::uint8_t, 3> rgb{0, 0, 0};
  int c = label;
  for (int shift = 7; shift >= 0 && c > 0; --shift) {
    for (int ch = 0; ch < 3; ++ch) {
      rgb[static_cast<std::size_t>(ch)] |= static_cast<std::uint8_t>(((c >> ch) & 1) << shift);
    }
    c >>= 3;
  }
  return rgb;
}

inline RgbImage colorize(const LabelMap& labels) {
  RgbImage out{labels.height(), labels.width(), {}};
  out.pixels.reserve(static_cast<std::size_t>(labels.pixels()) * 3);
  for (int l : labels.labels()) {
    const auto c = palette_color(l);
    out.pixels.insert(out.pixels.end(), c.begin(), c.end());
  }
  return out;
}

}  // namespace grapy

#endif  // GRAPY_PALETTE_HPP
