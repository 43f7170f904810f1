#ifndef GRAPY_GRADCHECK_HPP
#define GRAPY_GRADCHECK_HPP

// Tape gradients against central finite differences, in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "grapy/autodiff.hpp"

namespace grapy {

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0;  // worst input tensor
  std::size_t entries = 0;   // perturbed scalars
  double seconds = 0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

using LossBuilder = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// For every input tensor: max |analytic - numeric| / max(max |numeric|, max |analytic|, 1e-8).
GradcheckResult check_gradients(const std::string& name, const std::vector<Tensor<double>>& inputs,
                                const LossBuilder& build, double h = 1e-5);

// Every differentiable op, the pyramid stages and the full Eq. 10 loss.
std::vector<GradcheckResult> run_gradcheck_suites(std::uint64_t seed = 1,
                                                  const std::string& filter = {});

}  // namespace grapy

#endif  // GRAPY_GRADCHECK_HPP
