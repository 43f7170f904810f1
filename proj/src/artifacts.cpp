#include "grapy/artifacts.hpp"

#include <sstream>

namespace grapy {

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto p = s.find(sep, start);
    out.push_back(s.substr(start, p - start));
    if (p == std::string::npos) break;
    start = p + 1;
  }
  return out;
}

namespace {

const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::kAverage:
      return "average";
    case Pooling::kMax:
      return "max";
    case Pooling::kBoth:
      break;
  }
  return "both";
}

template <typename T>
T parse_number(const Manifest& m, const std::string& key) {
  const std::string v = m.require(key);
  std::istringstream is(v);
  T out{};
  if (!(is >> out) || !is.eof()) throw CheckpointError("bad manifest value " + key + "=" + v);
  return out;
}

bool parse_flag(const Manifest& m, const std::string& key) {
  const std::string v = m.require(key);
  if (v != "0" && v != "1") throw CheckpointError("bad manifest flag " + key + "=" + v);
  return v == "1";
}

std::string number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void put_model_config(Manifest& m, const ModelConfig& c) {
  std::vector<std::string> widths;
  for (Index w : c.hidden_widths) widths.push_back(std::to_string(w));
  m.set("in_channels", std::to_string(c.in_channels));
  m.set("hidden_widths", join(widths, ','));
  m.set("feature_channels", std::to_string(c.feature_channels));
  m.set("use_gpm", c.use_gpm ? "1" : "0");
  std::string levels;
  for (int l = 1; l <= 3; ++l) levels += c.gpm.level_enabled(l) ? '1' : '0';
  m.set("gpm_levels", levels);
  m.set("pooling", pooling_name(c.gpm.pooling));
  m.set("iterations", std::to_string(c.gpm.iterations));
  m.set("gcr_fresh_weights", c.gpm.fresh_weights ? "1" : "0");
  m.set("lambda", number(c.lambda));
  m.set("gt_masks", c.gt_masks ? "1" : "0");
}

ModelConfig get_model_config(const Manifest& m) {
  ModelConfig c;
  c.in_channels = parse_number<Index>(m, "in_channels");
  c.hidden_widths.clear();
  const std::string widths = m.require("hidden_widths");
  if (!widths.empty()) {
    for (const auto& w : split(widths, ',')) {
      Manifest one;
      one.set("w", w);
      c.hidden_widths.push_back(parse_number<Index>(one, "w"));
    }
  }
  c.feature_channels = parse_number<Index>(m, "feature_channels");
  c.use_gpm = parse_flag(m, "use_gpm");
  const std::string levels = m.require("gpm_levels");
  if (levels.size() != 3 || levels.find_first_not_of("01") != std::string::npos) {
    throw CheckpointError("bad manifest value gpm_levels=" + levels);
  }
  for (std::size_t l = 0; l < 3; ++l) c.gpm.levels[l] = levels[l] == '1';
  const std::string pooling = m.require("pooling");
  if (pooling == "both") {
    c.gpm.pooling = Pooling::kBoth;
  } else if (pooling == "average") {
    c.gpm.pooling = Pooling::kAverage;
  } else if (pooling == "max") {
    c.gpm.pooling = Pooling::kMax;
  } else {
    throw CheckpointError("bad manifest value pooling=" + pooling);
  }
  c.gpm.iterations = parse_number<int>(m, "iterations");
  c.gpm.fresh_weights = parse_flag(m, "gcr_fresh_weights");
  c.lambda = parse_number<double>(m, "lambda");
  c.gt_masks = parse_flag(m, "gt_masks");
  return c;
}

void put_taxonomy(Manifest& m, const std::string& key, const Taxonomy& t) {
  m.set(key, t.name);
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < t.fine_labels.size(); ++k) {
    labels.push_back(t.fine_labels[k] + ":" + std::to_string(t.to_level2[k]));
  }
  m.set(key + ".labels", join(labels, ','));
}

Taxonomy get_taxonomy(const Manifest& m, const std::string& key) {
  Taxonomy t;
  t.name = m.require(key);
  for (const auto& item : split(m.require(key + ".labels"), ',')) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos) throw CheckpointError("bad taxonomy entry " + item);
    t.fine_labels.push_back(item.substr(0, colon));
    Manifest one;
    one.set("p", item.substr(colon + 1));
    t.to_level2.push_back(parse_number<int>(one, "p"));
  }
  const auto problems = validate(t);
  if (!problems.empty()) throw CheckpointError("stored taxonomy invalid: " + problems.front());
  return t;
}

void require_same_taxonomy(const Taxonomy& stored, const Taxonomy& expected) {
  if (stored.name != expected.name) {
    throw ArtifactMismatch("checkpoint was trained on taxonomy '" + stored.name + "', data uses '" +
                           expected.name + "'");
  }
  if (stored != expected) {
    throw ArtifactMismatch("taxonomy '" + stored.name + "' differs from the one in the checkpoint");
  }
}

}  // namespace grapy
