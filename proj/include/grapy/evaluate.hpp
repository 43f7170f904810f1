#ifndef GRAPY_EVALUATE_HPP
#define GRAPY_EVALUATE_HPP

#include <array>
#include <optional>
#include <thread>
#include <vector>

#include "grapy/metrics.hpp"
#include "grapy/model.hpp"

namespace grapy {

// Confusion matrices at Levels 1..3 for each branch.
struct EvalResult {
  std::array<ConfusionMatrix, 3> main;
  std::optional<std::array<ConfusionMatrix, 3>> gpm;

  const ConfusionMatrix& at(int level, bool gpm_branch = false) const {
    return (gpm_branch ? gpm.value() : main).at(static_cast<std::size_t>(level - 1));
  }
};

inline std::array<ConfusionMatrix, 3> level_matrices(const Taxonomy& t) {
  return {ConfusionMatrix(t.classes(1)), ConfusionMatrix(t.classes(2)), ConfusionMatrix(t.classes(3))};
}

// Both maps coarsened to `level` before counting.
inline void accumulate_at_level(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt,
                                const Taxonomy& taxonomy, int level) {
  accumulate(cm, coarsen(pred, taxonomy, level), coarsen(gt, taxonomy, level));
}

// Masks always come from the model's own prediction here, whatever the
// training-time mask source was. `workers` > 1 splits the images into
// contiguous chunks evaluated on separate tapes.
template <typename Scalar>
EvalResult evaluate(const ParamStore<Scalar>& params, const ModelConfig& config,
                    const Taxonomy& taxonomy, const std::vector<Tensor<Scalar>>& images,
                    const std::vector<LabelMap>& labels, const NameMap& names = nullptr,
                    int workers = 1) {
  if (images.size() != labels.size() || images.empty()) {
    throw std::invalid_argument("evaluate: need one label map per image");
  }
  ModelConfig inference = config;
  inference.gt_masks = false;
  const std::size_t n = images.size();
  const std::size_t w = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), 1, n);
  std::vector<EvalResult> partial(w);
  std::vector<std::exception_ptr> errors(w);
  auto run = [&](std::size_t worker) {
    try {
      EvalResult& r = partial[worker];
      r.main = level_matrices(taxonomy);
      if (config.use_gpm) r.gpm = level_matrices(taxonomy);
      for (std::size_t i = worker * n / w; i < (worker + 1) * n / w; ++i) {
        const Prediction p = predict(images[i], params, inference, taxonomy, names);
        for (int level = 1; level <= 3; ++level) {
          const auto li = static_cast<std::size_t>(level - 1);
          accumulate_at_level(r.main[li], p.main, labels[i], taxonomy, level);
          if (p.gpm) accumulate_at_level((*r.gpm)[li], *p.gpm, labels[i], taxonomy, level);
        }
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (w == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t k = 0; k < w; ++k) threads.emplace_back(run, k);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  EvalResult total = std::move(partial[0]);
  for (std::size_t k = 1; k < w; ++k) {
    for (std::size_t l = 0; l < 3; ++l) {
      total.main[l] += partial[k].main[l];
      if (total.gpm) (*total.gpm)[l] += (*partial[k].gpm)[l];
    }
  }
  return total;
}

// (mIoU, mean accuracy) at one level of one branch.
inline std::pair<double, double> evaluate_at_level(const EvalResult& r, int level, bool gpm_branch,
                                                   bool include_background = true) {
  const ConfusionMatrix& cm = r.at(level, gpm_branch);
  return {miou(cm), mean_accuracy(cm, include_background)};
}

}  // namespace grapy

#endif  // GRAPY_EVALUATE_HPP
