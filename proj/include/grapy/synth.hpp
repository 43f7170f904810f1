#ifndef GRAPY_SYNTH_HPP
#define GRAPY_SYNTH_HPP

// Procedural stick-figure scenes with labels at a taxonomy's finest level.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "grapy/label_map.hpp"
#include "grapy/pnm.hpp"
#include "grapy/taxonomy.hpp"
#include "grapy/tensor.hpp"

namespace grapy {

struct SceneSpec {
  std::uint64_t seed = 1;
  Index height = 32;
  Index width = 32;
  int min_figures = 1;
  int max_figures = 2;
  double noise_sigma = 0.03;
  double palette_jitter = 0.5;

  void validate() const;
};

class GenerationError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Body segments drawn by the generator; each has one Level-2 parent.
enum class Segment {
  kFace, kHair, kHat,
  kTorsoSkin, kClothes, kBelt,
  kUpperArm, kLowerArm, kHand,
  kUpperLegSkin, kUpperLegPants, kLowerLegSkin, kLowerLegPants, kShoe,
};
inline constexpr int kSegmentCount = 14;

int segment_parent(Segment s);            // Level-2 class
const char* segment_name(Segment s);
// Fine label a segment is painted with under `taxonomy`.
int segment_label(Segment s, const Taxonomy& taxonomy);

struct Sample {
  Tensor<double> image;  // HxWx3 in [0,1], multiples of 1/255
  LabelMap labels;       // finest level
  LabelMap level2;       // region map the fine labels were refined from
  int figures = 0;
  bool occluded = false;  // some figure lost pixels to a later one

  friend bool operator==(const Sample&, const Sample&) = default;
};

Sample generate_one(const SceneSpec& spec, const Taxonomy& taxonomy, std::uint64_t index);
std::vector<Sample> generate(const SceneSpec& spec, const Taxonomy& taxonomy, std::size_t count,
                             std::uint64_t first_index = 0);

RgbImage to_rgb(const Tensor<double>& image);
template <typename Scalar>
Tensor<Scalar> from_rgb(const RgbImage& rgb) {
  Tensor<Scalar> t({rgb.height, rgb.width, 3});
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) {
    t[static_cast<Index>(i)] = static_cast<Scalar>(rgb.pixels[i]) / Scalar(255);
  }
  return t;
}

struct LoadedSample {
  RgbImage image;
  LabelMap labels;
};

void write_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                  const Sample& sample);
// Throws PnmError on malformed files, std::runtime_error when the sizes disagree.
LoadedSample read_sample(const std::filesystem::path& image_path,
                         const std::filesystem::path& label_path);

struct ManifestEntry {
  std::size_t index = 0;
  std::string image;  // relative to the manifest's directory
  std::string label;
};

struct DatasetManifest {
  std::string taxonomy;
  std::vector<ManifestEntry> entries;
};

std::string format_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest(const std::string& text);

struct Dataset {
  std::string name;
  Taxonomy taxonomy;
  std::vector<RgbImage> images;
  std::vector<LabelMap> labels;

  std::size_t size() const { return images.size(); }
  template <typename Scalar>
  std::vector<Tensor<Scalar>> tensors() const {
    std::vector<Tensor<Scalar>> out;
    out.reserve(images.size());
    for (const auto& im : images) out.push_back(from_rgb<Scalar>(im));
    return out;
  }
};

// Reads a manifest and every file it lists. The taxonomy is taken from
// `taxonomy.tsv` next to the manifest's parent directory when present,
// otherwise from the built-ins by name.
Dataset load_dataset(const std::filesystem::path& manifest_path);
// Writes images/, labels/ and manifest.tsv under `dir`.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::string& taxonomy,
                                    const std::vector<Sample>& samples);

struct BenchmarkSplit {
  std::string taxonomy;  // built-in name
  std::size_t train;
  std::size_t test;
};

std::vector<BenchmarkSplit> default_benchmark();

// root/<X>/{train,test}/manifest.tsv and root/<X>/taxonomy.tsv for each split.
// Returns the manifest paths in order.
std::vector<std::filesystem::path> make_benchmark(const std::filesystem::path& root,
                                                  std::uint64_t seed,
                                                  const std::vector<BenchmarkSplit>& splits,
                                                  const SceneSpec& scene = {});

}  // namespace grapy

#endif  // GRAPY_SYNTH_HPP
