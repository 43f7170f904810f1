#include "grapy/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace grapy {

namespace {

int level2_index(std::string_view name) {
  for (int i = 0; i < kLevel2Classes; ++i) {
    if (kLevel2Names[static_cast<std::size_t>(i)] == name) return i;
  }
  return -1;
}

Taxonomy make(std::string name,
              std::initializer_list<std::pair<const char*, Level2>> labels) {
  Taxonomy t;
  t.name = std::move(name);
  for (const auto& [fine, parent] : labels) {
    t.fine_labels.emplace_back(fine);
    t.to_level2.push_back(parent);
  }
  return t;
}

}  // namespace

int Taxonomy::classes(int level) const {
  switch (level) {
    case 1:
      return kLevel1Classes;
    case 2:
      return kLevel2Classes;
    case 3:
      return static_cast<int>(fine_labels.size());
    default:
      throw std::invalid_argument("level must be 1, 2 or 3, got " + std::to_string(level));
  }
}

std::vector<std::string> Taxonomy::label_names(int level) const {
  switch (level) {
    case 1:
      return {kLevel1Names.begin(), kLevel1Names.end()};
    case 2:
      return {kLevel2Names.begin(), kLevel2Names.end()};
    case 3:
      return fine_labels;
    default:
      throw std::invalid_argument("level must be 1, 2 or 3, got " + std::to_string(level));
  }
}

int Taxonomy::map_label(int fine, int level) const {
  if (fine < 0 || fine >= static_cast<int>(to_level2.size())) {
    throw std::out_of_range("fine label " + std::to_string(fine) + " outside taxonomy " + name);
  }
  if (level == 3) return fine;
  const int l2 = to_level2[static_cast<std::size_t>(fine)];
  if (l2 < 0 || l2 >= kLevel2Classes) {
    throw std::out_of_range("fine label " + std::to_string(fine) + " has no level-2 parent");
  }
  if (level == 2) return l2;
  if (level == 1) return kLevel2ToLevel1[static_cast<std::size_t>(l2)];
  throw std::invalid_argument("level must be 1, 2 or 3, got " + std::to_string(level));
}

std::vector<int> Taxonomy::table(int level) const {
  std::vector<int> out(fine_labels.size());
  for (std::size_t f = 0; f < out.size(); ++f) out[f] = map_label(static_cast<int>(f), level);
  return out;
}

int Taxonomy::fine_index(std::string_view fine_name) const {
  auto it = std::find(fine_labels.begin(), fine_labels.end(), fine_name);
  return it == fine_labels.end() ? -1 : static_cast<int>(it - fine_labels.begin());
}

std::vector<std::string> validate(const Taxonomy& t) {
  std::vector<std::string> issues;
  if (t.fine_labels.empty()) {
    issues.push_back("taxonomy has no fine labels");
    return issues;
  }
  if (t.fine_labels.size() > 256) issues.push_back("more than 256 fine labels");
  if (t.fine_labels.front() != "Background") {
    issues.push_back("fine label 0 is '" + t.fine_labels.front() + "', expected Background");
  }
  std::set<std::string> seen;
  for (std::size_t f = 0; f < t.fine_labels.size(); ++f) {
    const std::string& n = t.fine_labels[f];
    if (n.empty()) issues.push_back("fine label " + std::to_string(f) + " has an empty name");
    if (!seen.insert(n).second) issues.push_back("duplicate fine label name '" + n + "'");
    if (f >= t.to_level2.size()) {
      issues.push_back("fine label " + std::to_string(f) + " (" + n + ") has no level-2 parent");
      continue;
    }
    const int l2 = t.to_level2[f];
    if (l2 < 0 || l2 >= kLevel2Classes) {
      issues.push_back("fine label " + std::to_string(f) + " (" + n +
                       ") maps to invalid level-2 index " + std::to_string(l2));
    } else if (f == 0 && l2 != kBackground) {
      issues.push_back("Background must map to Background at level 2");
    } else if (f != 0 && l2 == kBackground) {
      issues.push_back("fine label " + std::to_string(f) + " (" + n +
                       ") maps to Background at level 2");
    }
  }
  if (t.to_level2.size() > t.fine_labels.size()) {
    issues.push_back("level-2 mapping has " + std::to_string(t.to_level2.size()) +
                     " entries for " + std::to_string(t.fine_labels.size()) + " fine labels");
  }
  return issues;
}

void require_valid(const Taxonomy& t) {
  const auto issues = validate(t);
  if (issues.empty()) return;
  std::string msg = "invalid taxonomy '" + t.name + "':";
  for (const auto& i : issues) msg += "\n  " + i;
  throw TaxonomyError(msg);
}

LabelMap coarsen(const LabelMap& fine, const Taxonomy& taxonomy, int level) {
  const std::vector<int> lut = taxonomy.table(level);
  LabelMap out(fine.height(), fine.width());
  for (Index p = 0; p < fine.pixels(); ++p) {
    const int f = fine[p];
    if (f < 0 || f >= static_cast<int>(lut.size())) {
      throw std::out_of_range("label " + std::to_string(f) + " at pixel " + std::to_string(p) +
                              " outside taxonomy " + taxonomy.name);
    }
    out[p] = lut[static_cast<std::size_t>(f)];
  }
  return out;
}

std::array<Taxonomy, 3> builtin_taxonomies() {
  return {
      make("A", {{"Background", kBackground},
                 {"Head", kHead},
                 {"Torso", kTorso},
                 {"UpperArm", kArm},
                 {"LowerArm", kArm},
                 {"UpperLeg", kLeg},
                 {"LowerLeg", kLeg}}),
      make("B", {{"Background", kBackground},
                 {"Face", kHead},
                 {"Hair", kHead},
                 {"Hat", kHead},
                 {"TorsoSkin", kTorso},
                 {"UpperClothes", kTorso},
                 {"UpperArm", kArm},
                 {"LowerArm", kArm},
                 {"Pants", kLeg},
                 {"UpperLeg", kLeg},
                 {"LowerLeg", kLeg},
                 {"Shoe", kLeg}}),
      make("C", {{"Background", kBackground},
                 {"Face", kHead},
                 {"Hair", kHead},
                 {"Torso", kTorso},
                 {"Arm", kArm},
                 {"Hand", kArm},
                 {"UpperLeg", kLeg},
                 {"LowerLeg", kLeg},
                 {"Shoe", kLeg},
                 {"Belt", kTorso}}),
  };
}

bool is_builtin_taxonomy(std::string_view name) {
  return name == "A" || name == "B" || name == "C";
}

Taxonomy builtin_taxonomy(std::string_view name) {
  for (auto& t : builtin_taxonomies()) {
    if (t.name == name) return t;
  }
  throw TaxonomyError("no built-in taxonomy named '" + std::string(name) + "'");
}

Taxonomy parse_taxonomy(std::string_view text, std::string name) {
  struct Record {
    int index;
    std::string fine;
    int level2;
  };
  std::vector<Record> records;
  std::istringstream is{std::string(text)};
  std::string line;
  int line_no = 0;
  int max_index = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) {
      fields.push_back(line.substr(start, tab - start));
    }
    fields.push_back(line.substr(start));
    if (fields.size() != 3) {
      throw TaxonomyError("line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    int index = 0;
    try {
      std::size_t used = 0;
      index = std::stoi(fields[0], &used);
      if (used != fields[0].size() || index < 0) throw std::invalid_argument("index");
    } catch (const std::exception&) {
      throw TaxonomyError("line " + std::to_string(line_no) + ": bad fine index '" + fields[0] +
                          "'");
    }
    const int l2 = level2_index(fields[2]);
    if (l2 < 0) {
      throw TaxonomyError("line " + std::to_string(line_no) + ": unknown level-2 label '" +
                          fields[2] + "'");
    }
    if (index > 255) {
      throw TaxonomyError("line " + std::to_string(line_no) + ": fine index above 255");
    }
    records.push_back({index, fields[1], l2});
    max_index = std::max(max_index, index);
  }
  Taxonomy t;
  t.name = std::move(name);
  t.fine_labels.resize(static_cast<std::size_t>(max_index + 1));
  t.to_level2.assign(static_cast<std::size_t>(max_index + 1), -1);
  for (const auto& r : records) {
    auto& slot = t.fine_labels[static_cast<std::size_t>(r.index)];
    if (!slot.empty()) {
      throw TaxonomyError("fine index " + std::to_string(r.index) + " defined twice");
    }
    slot = r.fine;
    t.to_level2[static_cast<std::size_t>(r.index)] = r.level2;
  }
  return t;
}

std::string format_taxonomy(const Taxonomy& t) {
  std::string out;
  for (std::size_t f = 0; f < t.fine_labels.size(); ++f) {
    out += std::to_string(f) + "\t" + t.fine_labels[f] + "\t" +
           std::string(kLevel2Names[static_cast<std::size_t>(t.to_level2.at(f))]) + "\n";
  }
  return out;
}

Taxonomy load_taxonomy(const std::filesystem::path& path, std::string name) {
  std::ifstream is(path);
  if (!is) throw TaxonomyError("cannot open taxonomy file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  if (name.empty()) name = path.stem().string();
  Taxonomy t = parse_taxonomy(ss.str(), std::move(name));
  require_valid(t);
  return t;
}

}  // namespace grapy
