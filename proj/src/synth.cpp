#include "grapy/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "grapy/io.hpp"

namespace grapy {

namespace {

struct SegmentInfo {
  const char* name;
  int parent;
  std::vector<std::string_view> aliases;  // first present alias wins
  std::array<double, 3> tint;
};

const std::array<SegmentInfo, kSegmentCount>& segment_table() {
  static const std::array<SegmentInfo, kSegmentCount> table = {{
      {"Face", kHead, {"Face", "Head"}, {0.05, 0.05, 0.1}},
      {"Hair", kHead, {"Hair", "Head"}, {-0.55, -0.55, -0.45}},
      {"Hat", kHead, {"Hat", "Hair", "Head"}, {-0.5, 0.2, 0.3}},
      {"TorsoSkin", kTorso, {"TorsoSkin", "Torso"}, {0.6, 0.3, -0.3}},
      {"Clothes", kTorso, {"UpperClothes", "Torso"}, {0.0, 0.0, 0.0}},
      {"Belt", kTorso, {"Belt", "UpperClothes", "Torso"}, {-0.2, -0.4, -0.7}},
      {"UpperArm", kArm, {"UpperArm", "Arm"}, {0.0, 0.0, 0.0}},
      {"LowerArm", kArm, {"LowerArm", "Arm"}, {0.1, 0.45, 0.45}},
      {"Hand", kArm, {"Hand", "LowerArm", "Arm"}, {0.1, 0.55, 0.6}},
      {"UpperLegSkin", kLeg, {"UpperLeg", "Leg"}, {0.55, 0.0, 0.1}},
      {"UpperLegPants", kLeg, {"Pants", "UpperLeg", "Leg"}, {-0.2, -0.3, 0.35}},
      {"LowerLegSkin", kLeg, {"LowerLeg", "Leg"}, {0.15, 0.3, 0.55}},
      {"LowerLegPants", kLeg, {"Pants", "LowerLeg", "Leg"}, {-0.35, -0.5, 0.0}},
      {"Shoe", kLeg, {"Shoe", "LowerLeg", "Leg"}, {-0.3, -0.6, -0.3}},
  }};
  return table;
}

const SegmentInfo& info(Segment s) { return segment_table()[static_cast<std::size_t>(s)]; }

constexpr std::array<std::array<double, 3>, kLevel2Classes> kLevel2Colors = {{
    {0.15, 0.15, 0.18},  // background
    {0.9, 0.75, 0.55},
    {0.25, 0.45, 0.85},
    {0.85, 0.35, 0.3},
    {0.3, 0.7, 0.35},
}};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct Prim {
  enum Kind { kDisc, kCapsule, kRect } kind;
  double ax, ay, bx, by, r;
  Segment seg;
  double clip_ymax = std::numeric_limits<double>::infinity();

  bool contains(double x, double y) const {
    if (y >= clip_ymax) return false;
    switch (kind) {
      case kDisc:
        return (x - ax) * (x - ax) + (y - ay) * (y - ay) <= r * r;
      case kRect:
        return x >= ax && x < bx && y >= ay && y < by;
      case kCapsule: {
        const double dx = bx - ax, dy = by - ay;
        const double len2 = dx * dx + dy * dy;
        double t = len2 > 0 ? ((x - ax) * dx + (y - ay) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double px = ax + t * dx - x, py = ay + t * dy - y;
        return px * px + py * py <= r * r;
      }
    }
    return false;
  }

  // x0, y0, x1, y1
  std::array<double, 4> bounds() const {
    switch (kind) {
      case kDisc:
        return {ax - r, ay - r, ax + r, ay + r};
      case kRect:
        return {ax, ay, bx, by};
      case kCapsule:
        break;
    }
    return {std::min(ax, bx) - r, std::min(ay, by) - r, std::max(ax, bx) + r,
            std::max(ay, by) + r};
  }

  void shift(double dx, double dy) {
    ax += dx, bx += dx, ay += dy, by += dy;
    clip_ymax += dy;
  }
};

struct Figure {
  std::vector<Prim> prims;  // in drawing order
  std::array<double, 4> bounds{};
};

double deg(double d) { return d * std::numbers::pi / 180.0; }

// Builds one figure around the torso's top-centre at the origin.
Figure pose_figure(std::mt19937_64& rng, double unit) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };
  const double s = uni(0.75, 0.95) * unit;
  const double tw = 7 * s, th = 9 * s;
  const int pants = static_cast<int>(u01(rng) * 3);  // none, shorts, long
  const bool hat = u01(rng) < 0.5;

  Figure fig;
  auto capsule = [](double ax, double ay, double len, double angle, double r, Segment seg) {
    // angle measured from straight down, positive toward +x
    const double bx = ax + len * std::sin(angle), by = ay + len * std::cos(angle);
    return Prim{Prim::kCapsule, ax, ay, bx, by, r, seg};
  };

  // legs
  for (int side : {-1, 1}) {
    const double hx = side * tw / 4, hy = th - 0.5 * s;
    const double a1 = side * deg(uni(-10, 35));
    const double a2 = a1 + side * deg(uni(-30, 30));
    const double l1 = uni(4.5, 5.5) * s, l2 = uni(4.5, 5.5) * s;
    Prim upper = capsule(hx, hy, l1, a1, 1.6 * s,
                         pants > 0 ? Segment::kUpperLegPants : Segment::kUpperLegSkin);
    Prim lower = capsule(upper.bx, upper.by, l2, a2, 1.4 * s,
                         pants > 1 ? Segment::kLowerLegPants : Segment::kLowerLegSkin);
    Prim shoe{Prim::kCapsule, lower.bx, lower.by, lower.bx + side * 1.5 * s, lower.by, 1.1 * s,
              Segment::kShoe};
    fig.prims.push_back(upper);
    fig.prims.push_back(lower);
    fig.prims.push_back(shoe);
  }
  // torso
  fig.prims.push_back({Prim::kRect, -tw / 2, 0, tw / 2, th, 0, Segment::kClothes});
  fig.prims.push_back({Prim::kRect, -tw / 4, 0, tw / 4, 2 * s, 0, Segment::kTorsoSkin});
  fig.prims.push_back({Prim::kRect, -tw / 2, th - 1.5 * s, tw / 2, th, 0, Segment::kBelt});
  // head
  const double r = 3.2 * s;
  const double hx = uni(-0.6, 0.6) * s, hy = -0.9 * r;
  fig.prims.push_back({Prim::kDisc, hx, hy, hx, hy, r, Segment::kFace});
  Prim hair{Prim::kDisc, hx, hy, hx, hy, r, Segment::kHair};
  hair.clip_ymax = hy - 0.35 * r;
  fig.prims.push_back(hair);
  if (hat) {
    fig.prims.push_back(
        {Prim::kRect, hx - 0.9 * r, hy - r - 1.2 * s, hx + 0.9 * r, hy - 0.6 * r, 0, Segment::kHat});
  }
  // arms
  for (int side : {-1, 1}) {
    const double sx = side * (tw / 2 - 0.5 * s), sy = 1.3 * s;
    const double a1 = side * deg(uni(-20, 120));
    const double a2 = a1 + side * deg(uni(-60, 60));
    Prim upper = capsule(sx, sy, uni(4.5, 5.5) * s, a1, 1.3 * s, Segment::kUpperArm);
    Prim lower = capsule(upper.bx, upper.by, uni(4.0, 5.0) * s, a2, 1.2 * s, Segment::kLowerArm);
    Prim hand{Prim::kDisc, lower.bx, lower.by, lower.bx, lower.by, 1.4 * s, Segment::kHand};
    fig.prims.push_back(upper);
    fig.prims.push_back(lower);
    fig.prims.push_back(hand);
  }

  fig.bounds = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                -std::numeric_limits<double>::infinity(),
                -std::numeric_limits<double>::infinity()};
  for (const auto& p : fig.prims) {
    const auto b = p.bounds();
    fig.bounds[0] = std::min(fig.bounds[0], b[0]);
    fig.bounds[1] = std::min(fig.bounds[1], b[1]);
    fig.bounds[2] = std::max(fig.bounds[2], b[2]);
    fig.bounds[3] = std::max(fig.bounds[3], b[3]);
  }
  return fig;
}

// Samples poses until one fits the frame, then a uniform position for it.
Figure place_figure(std::mt19937_64& rng, Index height, Index width) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double unit = static_cast<double>(std::min(height, width)) / 32.0;
  for (int attempt = 0; attempt < 100; ++attempt) {
    Figure fig = pose_figure(rng, unit);
    const double w = fig.bounds[2] - fig.bounds[0], h = fig.bounds[3] - fig.bounds[1];
    if (w > static_cast<double>(width) || h > static_cast<double>(height)) continue;
    const double dx = -fig.bounds[0] + u01(rng) * (static_cast<double>(width) - w);
    const double dy = -fig.bounds[1] + u01(rng) * (static_cast<double>(height) - h);
    for (auto& p : fig.prims) p.shift(dx, dy);
    return fig;
  }
  throw GenerationError("figure does not fit a " + std::to_string(height) + "x" +
                        std::to_string(width) + " frame after 100 attempts");
}

}  // namespace

void SceneSpec::validate() const {
  if (height < 16 || width < 16) throw std::invalid_argument("scene must be at least 16x16");
  if (min_figures < 1 || max_figures < min_figures || max_figures > 2) {
    throw std::invalid_argument("figures per image must lie in [1, 2]");
  }
  if (!(noise_sigma >= 0) || !(palette_jitter >= 0)) {
    throw std::invalid_argument("noise and jitter must be non-negative");
  }
}

int segment_parent(Segment s) { return info(s).parent; }
const char* segment_name(Segment s) { return info(s).name; }

int segment_label(Segment s, const Taxonomy& taxonomy) {
  const SegmentInfo& si = info(s);
  for (auto alias : si.aliases) {
    const int k = taxonomy.fine_index(alias);
    if (k >= 0 && taxonomy.to_level2[static_cast<std::size_t>(k)] == si.parent) return k;
  }
  for (int k = 1; k < taxonomy.classes(3); ++k) {
    if (taxonomy.to_level2[static_cast<std::size_t>(k)] == si.parent) return k;
  }
  throw GenerationError("taxonomy " + taxonomy.name + " has no fine label under " +
                        std::string(kLevel2Names[static_cast<std::size_t>(si.parent)]));
}

Sample generate_one(const SceneSpec& spec, const Taxonomy& taxonomy, std::uint64_t index) {
  spec.validate();
  require_valid(taxonomy);
  std::mt19937_64 rng(splitmix64(splitmix64(spec.seed) ^ index));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto sym = [&] { return 2.0 * u01(rng) - 1.0; };
  const Index H = spec.height, W = spec.width;
  const double jitter = spec.palette_jitter;

  std::array<int, kSegmentCount> labels{};
  for (int s = 0; s < kSegmentCount; ++s) {
    labels[static_cast<std::size_t>(s)] = segment_label(static_cast<Segment>(s), taxonomy);
  }

  Sample out;
  out.image = Tensor<double>({H, W, 3});
  out.labels = LabelMap(H, W, 0);
  out.level2 = LabelMap(H, W, 0);

  // background with a gentle linear gradient
  std::array<double, 3> bg;
  for (int c = 0; c < 3; ++c) bg[c] = kLevel2Colors[0][c] + 0.1 * jitter * sym();
  const double gx = 0.15 * jitter * sym(), gy = 0.15 * jitter * sym();
  for (Index i = 0; i < H; ++i) {
    for (Index j = 0; j < W; ++j) {
      const double g = gx * (static_cast<double>(j) / W - 0.5) + gy * (static_cast<double>(i) / H - 0.5);
      for (Index c = 0; c < 3; ++c) out.image(i, j, c) = bg[static_cast<std::size_t>(c)] + g;
    }
  }

  const int span = spec.max_figures - spec.min_figures + 1;
  out.figures = spec.min_figures + static_cast<int>(u01(rng) * span) % span;
  std::vector<int> owner(static_cast<std::size_t>(H * W), -1);
  for (int f = 0; f < out.figures; ++f) {
    std::array<std::array<double, 3>, kLevel2Classes> base{};
    for (int k = 1; k < kLevel2Classes; ++k) {
      for (int c = 0; c < 3; ++c) base[k][c] = kLevel2Colors[k][c] + 0.2 * jitter * sym();
    }
    std::array<std::array<double, 3>, kSegmentCount> color{};
    for (int s = 0; s < kSegmentCount; ++s) {
      const SegmentInfo& si = segment_table()[static_cast<std::size_t>(s)];
      for (int c = 0; c < 3; ++c) {
        color[s][c] = base[si.parent][c] + jitter * (si.tint[c] + 0.1 * sym());
      }
    }
    const Figure fig = place_figure(rng, H, W);
    for (Index i = 0; i < H; ++i) {
      for (Index j = 0; j < W; ++j) {
        const double x = static_cast<double>(j) + 0.5, y = static_cast<double>(i) + 0.5;
        const Prim* hit = nullptr;
        for (const auto& p : fig.prims) {
          if (p.contains(x, y)) hit = &p;
        }
        if (!hit) continue;
        const auto s = static_cast<std::size_t>(hit->seg);
        out.labels(i, j) = labels[s];
        out.level2(i, j) = segment_table()[s].parent;
        for (Index c = 0; c < 3; ++c) out.image(i, j, c) = color[s][static_cast<std::size_t>(c)];
        const auto p = static_cast<std::size_t>(i * W + j);
        if (owner[p] >= 0 && owner[p] != f) out.occluded = true;
        owner[p] = f;
      }
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Index n = 0; n < out.image.size(); ++n) {
    double v = out.image[n];
    if (spec.noise_sigma > 0) v += spec.noise_sigma * noise(rng);
    v = std::clamp(v, 0.0, 1.0);
    out.image[n] = std::round(v * 255.0) / 255.0;
  }
  return out;
}

std::vector<Sample> generate(const SceneSpec& spec, const Taxonomy& taxonomy, std::size_t count,
                             std::uint64_t first_index) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_one(spec, taxonomy, first_index + i));
  return out;
}

RgbImage to_rgb(const Tensor<double>& image) {
  if (image.rank() != 3 || image.extent(2) != 3) {
    throw ShapeError("to_rgb: expected HxWx3, got " + shape_string(image.shape()));
  }
  RgbImage rgb{image.extent(0), image.extent(1), {}};
  rgb.pixels.resize(static_cast<std::size_t>(image.size()));
  for (Index n = 0; n < image.size(); ++n) {
    const double v = std::clamp(image[n], 0.0, 1.0);
    rgb.pixels[static_cast<std::size_t>(n)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return rgb;
}

void write_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                  const Sample& sample) {
  write_ppm(image_path, to_rgb(sample.image));
  write_pgm(label_path, sample.labels);
}

LoadedSample read_sample(const std::filesystem::path& image_path,
                         const std::filesystem::path& label_path) {
  LoadedSample s{read_ppm(image_path), read_pgm(label_path)};
  if (s.image.height != s.labels.height() || s.image.width != s.labels.width()) {
    throw std::runtime_error("size mismatch: image " + image_path.string() + " is " +
                             std::to_string(s.image.width) + "x" + std::to_string(s.image.height) +
                             ", labels " + label_path.string() + " are " +
                             std::to_string(s.labels.width()) + "x" +
                             std::to_string(s.labels.height()));
  }
  return s;
}

std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  os << "taxonomy\t" << m.taxonomy << "\n";
  for (const auto& e : m.entries) os << e.index << "\t" << e.image << "\t" << e.label << "\n";
  return os.str();
}

DatasetManifest parse_manifest(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  DatasetManifest m;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (lineno == 1) {
      if (fields.size() != 2 || fields[0] != "taxonomy" || fields[1].empty()) {
        fail("expected 'taxonomy<TAB><name>'");
      }
      m.taxonomy = fields[1];
      continue;
    }
    if (fields.size() != 3) fail("expected index<TAB>image<TAB>label");
    ManifestEntry e;
    try {
      std::size_t used = 0;
      e.index = std::stoull(fields[0], &used);
      if (used != fields[0].size()) fail("bad index '" + fields[0] + "'");
    } catch (const std::logic_error&) {
      fail("bad index '" + fields[0] + "'");
    }
    e.image = fields[1];
    e.label = fields[2];
    m.entries.push_back(std::move(e));
  }
  if (m.taxonomy.empty()) throw std::runtime_error("manifest: missing taxonomy line");
  return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest m = parse_manifest(read_file(manifest_path));
  const auto dir = manifest_path.parent_path();
  const auto tsv = dir.parent_path() / "taxonomy.tsv";
  Dataset d;
  d.name = m.taxonomy;
  if (std::filesystem::exists(tsv)) {
    d.taxonomy = load_taxonomy(tsv, m.taxonomy);
  } else if (is_builtin_taxonomy(m.taxonomy)) {
    d.taxonomy = builtin_taxonomy(m.taxonomy);
  } else {
    throw TaxonomyError("unknown taxonomy '" + m.taxonomy + "' and no " + tsv.string());
  }
  for (const auto& e : m.entries) {
    LoadedSample s = read_sample(dir / e.image, dir / e.label);
    s.labels.check_range(d.taxonomy.classes(3));
    if (!d.images.empty() &&
        (s.image.height != d.images.front().height || s.image.width != d.images.front().width)) {
      throw std::runtime_error("dataset images differ in size: " + e.image);
    }
    d.images.push_back(std::move(s.image));
    d.labels.push_back(std::move(s.labels));
  }
  if (d.images.empty()) throw std::runtime_error("dataset " + manifest_path.string() + " is empty");
  return d;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::string& taxonomy,
                                    const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  DatasetManifest m{taxonomy, {}};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%05zu", i);
    ManifestEntry e{i, std::string("images/") + stem + ".ppm", std::string("labels/") + stem + ".pgm"};
    write_sample(dir / e.image, dir / e.label, samples[i]);
    m.entries.push_back(std::move(e));
  }
  const auto path = dir / "manifest.tsv";
  write_file_atomically(path, format_manifest(m));
  return path;
}

std::vector<BenchmarkSplit> default_benchmark() {
  return {{"A", 200, 50}, {"B", 600, 100}, {"C", 400, 100}};
}

std::vector<std::filesystem::path> make_benchmark(const std::filesystem::path& root,
                                                  std::uint64_t seed,
                                                  const std::vector<BenchmarkSplit>& splits,
                                                  const SceneSpec& scene) {
  std::vector<std::filesystem::path> manifests;
  for (std::size_t d = 0; d < splits.size(); ++d) {
    const auto& split = splits[d];
    const Taxonomy taxonomy = builtin_taxonomy(split.taxonomy);
    SceneSpec spec = scene;
    spec.seed = splitmix64(seed * 0x100000001b3ull + d);
    const auto dir = root / split.taxonomy;
    std::filesystem::create_directories(dir);
    write_file_atomically(dir / "taxonomy.tsv", format_taxonomy(taxonomy));
    // test indices follow the train ones so the two never share a sample
    manifests.push_back(
        write_dataset(dir / "train", split.taxonomy, generate(spec, taxonomy, split.train, 0)));
    manifests.push_back(write_dataset(dir / "test", split.taxonomy,
                                      generate(spec, taxonomy, split.test, split.train)));
  }
  return manifests;
}

}  // namespace grapy
