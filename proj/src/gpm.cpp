#include "grapy/gpm.hpp"

namespace grapy {

std::vector<ParamSpec> gpm_level_specs(int level, Index channels, const GpmConfig& config) {
  const Index width = node_width(channels, config.pooling);
  const Index bottleneck = bottleneck_width(width);
  std::vector<ParamSpec> specs;
  const int count = config.fresh_weights ? config.iterations : 1;
  for (int t = 0; t < count; ++t) {
    specs.push_back({attention_name(level, "q1", t), {width, bottleneck},
                     ParamSpec::Init::kScaledUniform, width});
    specs.push_back({attention_name(level, "q2", t), {width, bottleneck},
                     ParamSpec::Init::kScaledUniform, width});
  }
  // zero, so every level starts as the identity on features
  specs.push_back({gpm_level_prefix(level) + "out_proj", {width, channels},
                   ParamSpec::Init::kZero, width});
  return specs;
}

std::vector<ParamSpec> gpm_head_specs(Index channels, Index fine_classes) {
  return {{"gpm.head", {1, 1, 4 * channels, fine_classes}, ParamSpec::Init::kScaledUniform,
           4 * channels}};
}

std::vector<ParamSpec> gpm_param_specs(Index channels, Index fine_classes, const GpmConfig& config) {
  std::vector<ParamSpec> specs;
  for (int level = 1; level <= 3; ++level) {
    if (!config.level_enabled(level)) continue;
    auto level_specs = gpm_level_specs(level, channels, config);
    specs.insert(specs.end(), level_specs.begin(), level_specs.end());
  }
  auto head = gpm_head_specs(channels, fine_classes);
  specs.insert(specs.end(), head.begin(), head.end());
  return specs;
}

CategoryMasks::CategoryMasks(int level, Index height, Index width,
                             std::vector<std::vector<bool>> masks)
    : level_(level), height_(height), width_(width), masks_(std::move(masks)) {
  for (const auto& m : masks_) {
    if (static_cast<Index>(m.size()) != height * width) {
      throw ShapeError("category mask size does not match " + std::to_string(height) + "x" +
                       std::to_string(width));
    }
  }
}

CategoryMasks CategoryMasks::from_labels(const LabelMap& labels, int classes, int level) {
  labels.check_range(classes);
  std::vector<std::vector<bool>> masks(static_cast<std::size_t>(classes),
                                       std::vector<bool>(static_cast<std::size_t>(labels.pixels())));
  for (Index p = 0; p < labels.pixels(); ++p) {
    masks[static_cast<std::size_t>(labels[p])][static_cast<std::size_t>(p)] = true;
  }
  return CategoryMasks(level, labels.height(), labels.width(), std::move(masks));
}

Index CategoryMasks::count(Index k) const {
  const auto& m = mask(k);
  return static_cast<Index>(std::count(m.begin(), m.end(), true));
}

std::vector<bool> CategoryMasks::occupancy() const {
  std::vector<bool> out;
  for (Index k = 0; k < classes(); ++k) out.push_back(count(k) > 0);
  return out;
}

bool CategoryMasks::is_partition() const {
  for (Index p = 0; p < height_ * width_; ++p) {
    int owners = 0;
    for (const auto& m : masks_) owners += m[static_cast<std::size_t>(p)] ? 1 : 0;
    if (owners != 1) return false;
  }
  return !masks_.empty();
}

LabelMap CategoryMasks::assignment() const {
  if (masks_.empty()) throw std::invalid_argument("category masks: no categories");
  LabelMap out(height_, width_, -1);
  for (std::size_t k = 0; k < masks_.size(); ++k) {
    for (Index p = 0; p < height_ * width_; ++p) {
      if (!masks_[k][static_cast<std::size_t>(p)]) continue;
      if (out[p] >= 0) {
        throw std::invalid_argument("category masks are not a partition: pixel " +
                                    std::to_string(p) + " in categories " + std::to_string(out[p]) +
                                    " and " + std::to_string(k));
      }
      out[p] = static_cast<int>(k);
    }
  }
  for (Index p = 0; p < height_ * width_; ++p) {
    if (out[p] < 0) {
      throw std::invalid_argument("category masks are not a partition: pixel " +
                                  std::to_string(p) + " is uncovered");
    }
  }
  return out;
}

}  // namespace grapy
