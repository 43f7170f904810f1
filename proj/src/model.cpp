#include "grapy/model.hpp"

namespace grapy {

std::vector<ParamSpec> backbone_specs(const ModelConfig& config) {
  std::vector<ParamSpec> specs;
  Index in = config.in_channels;
  std::vector<Index> widths = config.hidden_widths;
  widths.push_back(config.feature_channels);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string prefix = "backbone.conv" + std::to_string(i) + ".";
    specs.push_back({prefix + "kernel", {3, 3, in, widths[i]}, ParamSpec::Init::kHeUniform, 9 * in});
    specs.push_back({prefix + "bias", {1, 1, widths[i]}, ParamSpec::Init::kZero, 1});
    in = widths[i];
  }
  return specs;
}

std::vector<ParamSpec> main_head_specs(const ModelConfig& config, Index fine_classes) {
  const Index c = config.feature_channels;
  return {{"main_head.kernel", {1, 1, c, fine_classes}, ParamSpec::Init::kScaledUniform, c},
          {"main_head.bias", {1, 1, fine_classes}, ParamSpec::Init::kZero, 1}};
}

std::vector<ParamSpec> model_param_specs(const ModelConfig& config, Index fine_classes) {
  auto specs = backbone_specs(config);
  auto head = main_head_specs(config, fine_classes);
  specs.insert(specs.end(), head.begin(), head.end());
  if (config.use_gpm) {
    auto gpm = gpm_param_specs(config.feature_channels, fine_classes, config.gpm);
    specs.insert(specs.end(), gpm.begin(), gpm.end());
  }
  return specs;
}

bool is_backbone_param(const std::string& name) { return name.rfind("backbone.", 0) == 0; }
bool is_main_head_param(const std::string& name) { return name.rfind("main_head.", 0) == 0; }
bool is_gpm_param(const std::string& name) { return name.rfind("gpm.", 0) == 0; }

}  // namespace grapy
