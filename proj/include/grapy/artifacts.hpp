#ifndef GRAPY_ARTIFACTS_HPP
#define GRAPY_ARTIFACTS_HPP

// Model checkpoints: parameters plus the configuration and taxonomies needed to
// rebuild the model, recorded in the checkpoint manifest.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "grapy/checkpoint.hpp"
#include "grapy/model.hpp"
#include "grapy/mutual.hpp"

namespace grapy {

// Checkpoint does not belong to the model, taxonomy or kind it is used with.
class ArtifactMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void put_model_config(Manifest& m, const ModelConfig& config);
ModelConfig get_model_config(const Manifest& m);
void put_taxonomy(Manifest& m, const std::string& key, const Taxonomy& t);
Taxonomy get_taxonomy(const Manifest& m, const std::string& key);
// Throws ArtifactMismatch unless `stored` and `expected` agree on name and labels.
void require_same_taxonomy(const Taxonomy& stored, const Taxonomy& expected);
std::string join(const std::vector<std::string>& parts, char sep);
std::vector<std::string> split(const std::string& s, char sep);

// Names and shapes in `store` must equal `expected` exactly.
template <typename Scalar>
void require_layout(const ParamStore<Scalar>& store, const std::map<std::string, Shape>& expected) {
  for (const auto& [name, shape] : expected) {
    if (!store.contains(name)) throw ArtifactMismatch("checkpoint lacks parameter " + name);
    if (store.at(name).shape() != shape) {
      throw ArtifactMismatch("parameter " + name + " has shape " +
                             shape_string(store.at(name).shape()) + ", model expects " +
                             shape_string(shape));
    }
  }
  for (const auto& [name, _] : store) {
    if (!expected.count(name)) throw ArtifactMismatch("unexpected parameter " + name);
  }
}

template <typename Scalar>
struct SingleModel {
  ModelConfig config;
  Taxonomy taxonomy;
  ParamStore<Scalar> params;
};

template <typename Scalar>
void save_single(const std::filesystem::path& path, const SingleModel<Scalar>& model) {
  Checkpoint<Scalar> c;
  c.manifest.set("kind", "single");
  put_taxonomy(c.manifest, "taxonomy", model.taxonomy);
  put_model_config(c.manifest, model.config);
  c.params = model.params;
  save_checkpoint(path, c);
}

template <typename Scalar>
SingleModel<Scalar> load_single(const std::filesystem::path& path) {
  Checkpoint<Scalar> c = load_checkpoint<Scalar>(path);
  if (c.manifest.get("kind") != "single") {
    throw ArtifactMismatch(path.string() + " is not a single-dataset checkpoint");
  }
  SingleModel<Scalar> m{get_model_config(c.manifest), get_taxonomy(c.manifest, "taxonomy"),
                        std::move(c.params)};
  std::map<std::string, Shape> expected;
  for (const auto& s : model_param_specs(m.config, m.taxonomy.classes(3))) expected[s.name] = s.shape;
  require_layout(m.params, expected);
  return m;
}

template <typename Scalar>
void save_mutual(const std::filesystem::path& path, const MlModel<Scalar>& model,
                 const std::string& stage = "joint") {
  Checkpoint<Scalar> c;
  c.manifest.set("kind", "mutual");
  c.manifest.set("stage", stage);
  std::vector<std::string> names;
  for (const auto& t : model.taxonomies()) names.push_back(t.name);
  c.manifest.set("taxonomies", join(names, ','));
  for (std::size_t d = 0; d < model.taxonomies().size(); ++d) {
    put_taxonomy(c.manifest, "taxonomy." + std::to_string(d + 1), model.taxonomies()[d]);
  }
  c.manifest.set("share_backbone", model.config().share_backbone ? "1" : "0");
  put_model_config(c.manifest, model.model_config());
  c.params = model.params();
  save_checkpoint(path, c);
}

template <typename Scalar>
MlModel<Scalar> load_mutual(const std::filesystem::path& path) {
  Checkpoint<Scalar> c = load_checkpoint<Scalar>(path);
  if (c.manifest.get("kind") != "mutual") {
    throw ArtifactMismatch(path.string() + " is not a mutual-learning checkpoint");
  }
  MlConfig config{get_model_config(c.manifest), c.manifest.require("share_backbone") == "1"};
  const auto names = split(c.manifest.require("taxonomies"), ',');
  std::vector<Taxonomy> taxonomies;
  for (std::size_t d = 0; d < names.size(); ++d) {
    taxonomies.push_back(get_taxonomy(c.manifest, "taxonomy." + std::to_string(d + 1)));
    if (taxonomies.back().name != names[d]) {
      throw ArtifactMismatch("taxonomy list disagrees with branch " + std::to_string(d + 1));
    }
  }
  MlModel<Scalar> m(config, taxonomies, std::move(c.params));
  std::map<std::string, Shape> expected;
  for (int d = 1; d <= m.branches(); ++d) {
    const auto map = m.names(d);
    for (const auto& s : m.logical_specs(d)) expected[map(s.name)] = s.shape;
  }
  require_layout(m.params(), expected);
  return m;
}

}  // namespace grapy

#endif  // GRAPY_ARTIFACTS_HPP
