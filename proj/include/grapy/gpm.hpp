#ifndef GRAPY_GPM_HPP
#define GRAPY_GPM_HPP

// Graph pyramid over the three label levels: per level, category-aware pooling
// builds one node per category (aggregate), iterated self-attention with a
// residual refines the nodes (reason), and the refined nodes are added back onto
// their category's pixels (distribute). Levels run coarse to fine, each feeding
// the next, and the head predicts from all four feature maps stacked.

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "grapy/label_map.hpp"
#include "grapy/ops.hpp"
#include "grapy/params.hpp"
#include "grapy/taxonomy.hpp"

namespace grapy {

enum class Pooling { kBoth, kAverage, kMax };

struct GpmConfig {
  std::array<bool, 3> levels{true, true, true};  // Levels 1, 2, 3
  Pooling pooling = Pooling::kBoth;
  int iterations = 3;
  bool fresh_weights = false;  // separate attention projections per iteration

  bool level_enabled(int level) const { return levels.at(static_cast<std::size_t>(level - 1)); }
};

inline Index node_width(Index channels, Pooling pooling) {
  return pooling == Pooling::kBoth ? 2 * channels : channels;
}

inline Index bottleneck_width(Index node_channels) { return std::max<Index>(1, node_channels / 8); }

inline std::string gpm_level_prefix(int level) { return "gpm.level" + std::to_string(level) + "."; }

inline std::string attention_name(int level, const char* which, int iteration) {
  std::string n = gpm_level_prefix(level) + which;
  if (iteration > 0) n += ".iter" + std::to_string(iteration);
  return n;
}

// Declared parameter: logical name, shape, and initialisation rule.
struct ParamSpec {
  enum class Init { kScaledUniform, kHeUniform, kZero };
  std::string name;
  Shape shape;
  Init init;
  Index fan_in;
};

// Zero-mean uniform scaled by 1/sqrt(fan_in) (He bound sqrt(6/fan_in) for kHeUniform).
template <typename Scalar>
Tensor<Scalar> initial_value(const ParamSpec& spec, std::mt19937_64& rng) {
  switch (spec.init) {
    case ParamSpec::Init::kZero:
      return Tensor<Scalar>::zeros(spec.shape);
    case ParamSpec::Init::kHeUniform:
      return uniform_tensor<Scalar>(spec.shape, std::sqrt(6.0 / static_cast<double>(spec.fan_in)),
                                    rng);
    case ParamSpec::Init::kScaledUniform:
      break;
  }
  return uniform_tensor<Scalar>(spec.shape, 1.0 / std::sqrt(static_cast<double>(spec.fan_in)), rng);
}

// Attention projections and output projection of one level.
std::vector<ParamSpec> gpm_level_specs(int level, Index channels, const GpmConfig& config);
std::vector<ParamSpec> gpm_head_specs(Index channels, Index fine_classes);
std::vector<ParamSpec> gpm_param_specs(Index channels, Index fine_classes, const GpmConfig& config);

// K boolean maps over the image, one per category of a level.
class CategoryMasks {
 public:
  CategoryMasks() = default;
  CategoryMasks(int level, Index height, Index width, std::vector<std::vector<bool>> masks);
  static CategoryMasks from_labels(const LabelMap& labels, int classes, int level);

  int level() const { return level_; }
  Index classes() const { return static_cast<Index>(masks_.size()); }
  Index height() const { return height_; }
  Index width() const { return width_; }
  const std::vector<bool>& mask(Index k) const { return masks_.at(static_cast<std::size_t>(k)); }
  Index count(Index k) const;
  std::vector<bool> occupancy() const;

  bool is_partition() const;
  // Category of every pixel; throws std::invalid_argument unless the masks partition the image.
  LabelMap assignment() const;

 private:
  int level_ = 0;
  Index height_ = 0, width_ = 0;
  std::vector<std::vector<bool>> masks_;
};

// Per-pixel argmax of y, coarsened to `level`, split into one mask per category.
template <typename Scalar>
CategoryMasks masks_from_prediction(const Tensor<Scalar>& y, const Taxonomy& taxonomy, int level) {
  const LabelMap coarse = coarsen(argmax_channel(y), taxonomy, level);
  return CategoryMasks::from_labels(coarse, taxonomy.classes(level), level);
}

inline CategoryMasks masks_from_labels(const LabelMap& fine, const Taxonomy& taxonomy, int level) {
  return CategoryMasks::from_labels(coarsen(fine, taxonomy, level), taxonomy.classes(level), level);
}

template <typename Scalar>
struct NodeSet {
  int level = 0;
  Var<Scalar> features;  // K x C_l
  CategoryMasks masks;
  std::vector<bool> occupancy;
};

template <typename Scalar>
using ParamSource = std::function<Var<Scalar>(const std::string&)>;

template <typename Scalar>
struct GpmLevelParams {
  std::vector<Var<Scalar>> q1;  // one entry when shared across iterations
  std::vector<Var<Scalar>> q2;
  Var<Scalar> out_proj;

  static GpmLevelParams bind(const ParamSource<Scalar>& source, int level, const GpmConfig& config) {
    GpmLevelParams p;
    const int count = config.fresh_weights ? config.iterations : 1;
    for (int t = 0; t < count; ++t) {
      p.q1.push_back(source(attention_name(level, "q1", t)));
      p.q2.push_back(source(attention_name(level, "q2", t)));
    }
    p.out_proj = source(gpm_level_prefix(level) + "out_proj");
    return p;
  }
};

// Category-aware pooling of f_prev (HxWxC): mean and/or channelwise max over each mask.
template <typename Scalar>
NodeSet<Scalar> aggregate(Var<Scalar> f_prev, const CategoryMasks& masks,
                          Pooling pooling = Pooling::kBoth) {
  const Shape& s = f_prev.shape();
  detail::require_rank(s, 3, "aggregate");
  if (masks.height() != s[0] || masks.width() != s[1]) {
    throw ShapeError("aggregate: masks are " + std::to_string(masks.height()) + "x" +
                     std::to_string(masks.width()) + ", features " + shape_string(s));
  }
  const LabelMap assignment = masks.assignment();
  const Var<Scalar> flat = reshape(f_prev, {s[0] * s[1], s[2]});
  const Index k = masks.classes();
  Var<Scalar> features;
  switch (pooling) {
    case Pooling::kAverage:
      features = segment_mean(flat, assignment.labels(), k);
      break;
    case Pooling::kMax:
      features = segment_max(flat, assignment.labels(), k);
      break;
    case Pooling::kBoth:
      features = concat<Scalar>({segment_mean(flat, assignment.labels(), k),
                                 segment_max(flat, assignment.labels(), k)},
                                1);
      break;
  }
  return NodeSet<Scalar>{masks.level(), features, masks, masks.occupancy()};
}

// Iterated self-attention with residual: a = softmax((v Q1)(v Q2)^T), v <- v + a v.
// When `attention` is given, the attention matrix of every iteration is appended.
template <typename Scalar>
Var<Scalar> reason(Var<Scalar> nodes, const GpmLevelParams<Scalar>& params, int iterations = 3,
                   std::vector<Tensor<Scalar>>* attention = nullptr) {
  detail::require_rank(nodes.shape(), 2, "reason");
  if (params.q1.empty() || params.q1.size() != params.q2.size() ||
      (params.q1.size() != 1 && static_cast<int>(params.q1.size()) != iterations)) {
    throw std::invalid_argument("reason: need one shared or one-per-iteration projection pair");
  }
  Var<Scalar> v = nodes;
  for (int t = 0; t < iterations; ++t) {
    const std::size_t w = params.q1.size() == 1 ? 0 : static_cast<std::size_t>(t);
    const Var<Scalar> scores = matmul(matmul(v, params.q1[w]), transpose(matmul(v, params.q2[w])));
    const Var<Scalar> a = softmax_rows(scores);
    if (attention) attention->push_back(a.value());
    v = v + matmul(a, v);
  }
  return v;
}

template <typename Scalar>
Var<Scalar> reason(const NodeSet<Scalar>& nodes, const GpmLevelParams<Scalar>& params,
                   int iterations = 3, std::vector<Tensor<Scalar>>* attention = nullptr) {
  return reason(nodes.features, params, iterations, attention);
}

// f_l(i,j,:) = f_prev(i,j,:) + (v_gcr out_proj)(k,:) for the category k owning pixel (i,j).
template <typename Scalar>
Var<Scalar> distribute(Var<Scalar> f_prev, Var<Scalar> v_gcr, Var<Scalar> out_proj,
                       const CategoryMasks& masks) {
  const Shape s = f_prev.shape();
  detail::require_rank(s, 3, "distribute");
  if (v_gcr.shape().size() != 2 || v_gcr.shape()[0] != masks.classes()) {
    throw ShapeError("distribute: node features " + shape_string(v_gcr.shape()) + " for " +
                     std::to_string(masks.classes()) + " categories");
  }
  if (masks.height() != s[0] || masks.width() != s[1]) {
    throw ShapeError("distribute: masks do not match feature map " + shape_string(s));
  }
  const Var<Scalar> w = matmul(v_gcr, out_proj);
  if (w.shape()[1] != s[2]) {
    throw ShapeError("distribute: projected nodes " + shape_string(w.shape()) +
                     " do not match feature channels " + shape_string(s));
  }
  const LabelMap assignment = masks.assignment();
  return f_prev + reshape(gather_rows(w, assignment.labels()), s);
}

template <typename Scalar>
struct PyramidOutput {
  Var<Scalar> f_hat;   // HxWx4C
  Var<Scalar> logits;  // HxWxK3, before softmax
  Var<Scalar> y_hat;   // HxWxK3 probabilities
  std::array<Var<Scalar>, 4> features;  // f_0 .. f_3
  std::array<std::optional<NodeSet<Scalar>>, 3> nodes;
  std::array<Var<Scalar>, 3> refined;
  std::array<std::vector<Tensor<Scalar>>, 3> attention;
};

// Runs Levels 1..3 on f with masks from y (or from `mask_labels`, a fine
// ground-truth map, when given). Disabled levels pass features through unchanged.
template <typename Scalar>
PyramidOutput<Scalar> pyramid_forward(Var<Scalar> f, const Tensor<Scalar>& y,
                                      const Taxonomy& taxonomy,
                                      const ParamSource<Scalar>& source, const GpmConfig& config,
                                      const LabelMap* mask_labels = nullptr) {
  detail::require_rank(f.shape(), 3, "pyramid_forward");
  const Shape& ys = y.shape();
  if (ys.size() != 3 || ys[0] != f.shape()[0] || ys[1] != f.shape()[1] ||
      ys[2] != taxonomy.classes(3)) {
    throw ShapeError("pyramid_forward: prediction " + shape_string(ys) + " does not fit features " +
                     shape_string(f.shape()) + " and " + std::to_string(taxonomy.classes(3)) +
                     " fine classes");
  }
  PyramidOutput<Scalar> out;
  out.features[0] = f;
  for (int level = 1; level <= 3; ++level) {
    const auto li = static_cast<std::size_t>(level - 1);
    Var<Scalar> prev = out.features[li];
    if (!config.level_enabled(level)) {
      out.features[li + 1] = prev;
      continue;
    }
    const CategoryMasks masks = mask_labels ? masks_from_labels(*mask_labels, taxonomy, level)
                                            : masks_from_prediction(y, taxonomy, level);
    const auto params = GpmLevelParams<Scalar>::bind(source, level, config);
    NodeSet<Scalar> nodes = aggregate(prev, masks, config.pooling);
    out.refined[li] = reason(nodes, params, config.iterations, &out.attention[li]);
    out.features[li + 1] = distribute(prev, out.refined[li], params.out_proj, masks);
    out.nodes[li] = std::move(nodes);
  }
  out.f_hat = concat<Scalar>({out.features[0], out.features[1], out.features[2], out.features[3]},
                             2);
  out.logits = pointwise_conv(out.f_hat, source("gpm.head"));
  out.y_hat = softmax_channels(out.logits);
  return out;
}

}  // namespace grapy

#endif  // GRAPY_GPM_HPP
