#ifndef GRAPY_TAXONOMY_HPP
#define GRAPY_TAXONOMY_HPP

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "grapy/label_map.hpp"

namespace grapy {

inline constexpr int kLevel1Classes = 2;
inline constexpr int kLevel2Classes = 5;
inline constexpr std::array<std::string_view, kLevel1Classes> kLevel1Names = {"Background",
                                                                              "Foreground"};
inline constexpr std::array<std::string_view, kLevel2Classes> kLevel2Names = {
    "Background", "Head", "Torso", "Arm", "Leg"};
// Level-2 index -> Level-1 index. Fixed for every dataset.
inline constexpr std::array<int, kLevel2Classes> kLevel2ToLevel1 = {0, 1, 1, 1, 1};

enum Level2 : int { kBackground = 0, kHead = 1, kTorso = 2, kArm = 3, kLeg = 4 };

class TaxonomyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Three-level label pyramid of one dataset. Level 3 is the dataset's own fine
// label set; Levels 2 and 1 are shared by all datasets.
struct Taxonomy {
  std::string name;
  std::vector<std::string> fine_labels;  // index 0 is Background
  std::vector<int> to_level2;            // fine index -> Level-2 index

  int classes(int level) const;
  std::vector<std::string> label_names(int level) const;
  // Maps a fine label to `level` (3 is the identity).
  int map_label(int fine, int level) const;
  // Lookup table fine index -> label at `level`.
  std::vector<int> table(int level) const;
  int fine_index(std::string_view fine_name) const;  // -1 when absent

  friend bool operator==(const Taxonomy&, const Taxonomy&) = default;
};

// Every violated invariant, as a human-readable line. Empty means valid.
std::vector<std::string> validate(const Taxonomy& taxonomy);
void require_valid(const Taxonomy& taxonomy);

// Pixelwise coarsening of a Level-3 map to `level` in {1, 2, 3}.
LabelMap coarsen(const LabelMap& fine, const Taxonomy& taxonomy, int level);

// Synthetic taxonomies A (7 fine labels), B (12) and C (10).
std::array<Taxonomy, 3> builtin_taxonomies();
Taxonomy builtin_taxonomy(std::string_view name);
bool is_builtin_taxonomy(std::string_view name);

// Text form: one "fine_index<TAB>fine_name<TAB>level2_name" record per line.
Taxonomy parse_taxonomy(std::string_view text, std::string name);
std::string format_taxonomy(const Taxonomy& taxonomy);
Taxonomy load_taxonomy(const std::filesystem::path& path, std::string name = {});

}  // namespace grapy

#endif  // GRAPY_TAXONOMY_HPP
