#ifndef GRAPY_LABEL_MAP_HPP
#define GRAPY_LABEL_MAP_HPP

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grapy/tensor.hpp"

namespace grapy {

// Per-pixel category indices, row-major.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(Index height, Index width, int fill = 0)
      : height_(height), width_(width), labels_(static_cast<std::size_t>(height * width), fill) {
    if (height <= 0 || width <= 0) throw ShapeError("label map extents must be positive");
  }
  LabelMap(Index height, Index width, std::vector<int> labels)
      : height_(height), width_(width), labels_(std::move(labels)) {
    if (static_cast<Index>(labels_.size()) != height * width) {
      throw ShapeError("label map " + std::to_string(height) + "x" + std::to_string(width) +
                       " given " + std::to_string(labels_.size()) + " labels");
    }
  }

  Index height() const { return height_; }
  Index width() const { return width_; }
  Index pixels() const { return height_ * width_; }

  int& operator()(Index i, Index j) { return labels_[static_cast<std::size_t>(i * width_ + j)]; }
  int operator()(Index i, Index j) const {
    return labels_[static_cast<std::size_t>(i * width_ + j)];
  }
  int& operator[](Index p) { return labels_[static_cast<std::size_t>(p)]; }
  int operator[](Index p) const { return labels_[static_cast<std::size_t>(p)]; }

  std::span<const int> labels() const { return labels_; }
  std::span<int> labels() { return labels_; }

  int max_label() const {
    int m = 0;
    for (int v : labels_) m = std::max(m, v);
    return m;
  }

  // Throws if any label falls outside [0, num_classes).
  void check_range(int num_classes) const {
    for (std::size_t p = 0; p < labels_.size(); ++p) {
      if (labels_[p] < 0 || labels_[p] >= num_classes) {
        throw std::out_of_range("label " + std::to_string(labels_[p]) + " at pixel " +
                                std::to_string(p) + " outside [0," + std::to_string(num_classes) +
                                ")");
      }
    }
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  Index height_ = 0;
  Index width_ = 0;
  std::vector<int> labels_;
};

}  // namespace grapy

#endif  // GRAPY_LABEL_MAP_HPP
