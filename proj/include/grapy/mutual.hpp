#ifndef GRAPY_MUTUAL_HPP
#define GRAPY_MUTUAL_HPP

// Cross-dataset training: one shared core (backbone and GPM Levels 1-2) and one
// branch per dataset (main head, GPM Level 3, GPM head).

#include <set>
#include <string>
#include <vector>

#include "grapy/model.hpp"

namespace grapy {

struct MlConfig {
  ModelConfig model;
  bool share_backbone = true;
};

inline bool is_shared_logical(const std::string& logical, bool share_backbone) {
  if (is_backbone_param(logical)) return share_backbone;
  return logical.rfind("gpm.level1.", 0) == 0 || logical.rfind("gpm.level2.", 0) == 0;
}

// Logical parameter name as seen by branch d (1-based) -> stored name.
inline std::string ml_param_name(const std::string& logical, int d, bool share_backbone) {
  if (is_shared_logical(logical, share_backbone)) return "shared." + logical;
  return "branch" + std::to_string(d) + "." + logical;
}

template <typename Scalar>
struct MlDataset {
  Taxonomy taxonomy;
  std::vector<Tensor<Scalar>> images;
  std::vector<LabelMap> labels;
};

template <typename Scalar>
class MlModel {
 public:
  MlModel() = default;
  MlModel(MlConfig config, std::vector<Taxonomy> taxonomies, ParamStore<Scalar> params)
      : config_(std::move(config)), taxonomies_(std::move(taxonomies)), params_(std::move(params)) {
    if (taxonomies_.size() < 2) throw std::invalid_argument("mutual learning needs at least 2 datasets");
    for (const auto& t : taxonomies_) require_valid(t);
    if (!config_.model.use_gpm) throw std::invalid_argument("mutual learning needs the pyramid");
  }

  // Shared parameters first, then each branch in order, all from one generator.
  static MlModel init(const MlConfig& config, const std::vector<Taxonomy>& taxonomies,
                      std::uint64_t seed) {
    MlModel m(config, taxonomies, {});
    std::mt19937_64 rng(seed);
    const auto& first = m.logical_specs(1);
    for (const auto& spec : first) {
      if (!is_shared_logical(spec.name, config.share_backbone)) continue;
      m.params_.add("shared." + spec.name, initial_value<Scalar>(spec, rng));
    }
    for (int d = 1; d <= m.branches(); ++d) {
      for (const auto& spec : m.logical_specs(d)) {
        if (is_shared_logical(spec.name, config.share_backbone)) continue;
        m.params_.add(ml_param_name(spec.name, d, config.share_backbone),
                      initial_value<Scalar>(spec, rng));
      }
    }
    return m;
  }

  int branches() const { return static_cast<int>(taxonomies_.size()); }
  const MlConfig& config() const { return config_; }
  const ModelConfig& model_config() const { return config_.model; }
  const Taxonomy& taxonomy(int d) const { return taxonomies_.at(check(d) - 1); }
  const std::vector<Taxonomy>& taxonomies() const { return taxonomies_; }
  ParamStore<Scalar>& params() { return params_; }
  const ParamStore<Scalar>& params() const { return params_; }

  NameMap names(int d) const {
    check(d);
    const bool share = config_.share_backbone;
    return [d, share](const std::string& logical) { return ml_param_name(logical, d, share); };
  }

  std::vector<ParamSpec> logical_specs(int d) const {
    return model_param_specs(config_.model, taxonomy(d).classes(3));
  }

  std::set<std::string> shared_names() const {
    std::set<std::string> out;
    for (const auto& [name, _] : params_) {
      if (name.rfind("shared.", 0) == 0) out.insert(name);
    }
    return out;
  }

  std::set<std::string> branch_names(int d) const {
    check(d);
    const std::string prefix = "branch" + std::to_string(d) + ".";
    std::set<std::string> out;
    for (const auto& [name, _] : params_) {
      if (name.rfind(prefix, 0) == 0) out.insert(name);
    }
    return out;
  }

  // Stored names branch d reads, optionally restricted by a logical-name filter.
  std::set<std::string> visible_names(int d,
                                      const std::function<bool(const std::string&)>& logical_filter =
                                          nullptr) const {
    std::set<std::string> out;
    const auto map = names(d);
    for (const auto& spec : logical_specs(d)) {
      if (!logical_filter || logical_filter(spec.name)) out.insert(map(spec.name));
    }
    return out;
  }

 private:
  std::size_t check(int d) const {
    if (d < 1 || d > static_cast<int>(taxonomies_.size())) {
      throw std::out_of_range("dataset index " + std::to_string(d) + " outside [1," +
                              std::to_string(taxonomies_.size()) + "]");
    }
    return static_cast<std::size_t>(d);
  }

  MlConfig config_;
  std::vector<Taxonomy> taxonomies_;
  ParamStore<Scalar> params_;
};

template <typename Scalar>
Objective<Scalar> ml_objective(const MlModel<Scalar>& model, int d, bool main_only = false) {
  return Objective<Scalar>{&model.model_config(), &model.taxonomy(d), model.names(d), main_only};
}

// Forward of branch d on a tape; parameters are bound through `binder`.
template <typename Scalar>
ForwardResult<Scalar> ml_forward(ParamBinder<Scalar>& binder, const Tensor<Scalar>& image, int d,
                                 const MlModel<Scalar>& model,
                                 const LabelMap* ground_truth = nullptr) {
  const NameMap map = model.names(d);
  ParamSource<Scalar> source = [&](const std::string& n) { return binder(map(n)); };
  return forward(binder.tape().constant(image), source, model.model_config(), model.taxonomy(d),
                 ground_truth);
}

// One update on a batch of dataset `batch.dataset`. Only shared and branch-d
// parameters can move.
template <typename Scalar>
double ml_step(const SampleBatch<Scalar>& batch, MlModel<Scalar>& model, Sgd<Scalar>& sgd,
               Scalar lr, bool main_only = false,
               const typename ParamBinder<Scalar>::Trainable& trainable = nullptr) {
  const Objective<Scalar> objective = ml_objective(model, batch.dataset, main_only);
  return train_step(batch, model.params(), sgd, lr, objective, trainable);
}

struct AccumulatedLoss {
  double total = 0;
  std::vector<double> per_dataset;
};

// Sum of one batch loss per dataset on a single tape, then one update.
template <typename Scalar>
AccumulatedLoss ml_accumulated_step(const std::vector<SampleBatch<Scalar>>& batches,
                                    MlModel<Scalar>& model, Sgd<Scalar>& sgd, Scalar lr,
                                    bool main_only = false,
                                    const typename ParamBinder<Scalar>::Trainable& trainable = nullptr) {
  if (batches.empty()) throw std::invalid_argument("accumulation needs at least one batch");
  Tape<Scalar> tape;
  ParamBinder<Scalar> binder(tape, model.params(), trainable);
  AccumulatedLoss out;
  Var<Scalar> total;
  for (const auto& batch : batches) {
    const Var<Scalar> l = ml_objective(model, batch.dataset, main_only).batch_loss(binder, batch);
    out.per_dataset.push_back(static_cast<double>(l.value().item()));
    total = total.valid() ? total + l : l;
  }
  out.total = static_cast<double>(total.value().item());
  if (!std::isfinite(out.total)) throw NumericError("non-finite accumulated loss");
  tape.backward(total);
  const GradMap<Scalar> grads = binder.grads();
  require_finite_grads(grads);
  sgd.step(model.params(), grads, lr);
  return out;
}

// Cycles 1, 2, ..., n, 1, 2, ...; each dataset walks its own shuffled order and
// reshuffles when exhausted.
class RoundRobinSampler {
 public:
  RoundRobinSampler(std::vector<std::size_t> sizes, std::size_t batch_size, std::uint64_t seed);

  int next_dataset() const { return static_cast<int>(turn_ % sizes_.size()) + 1; }
  // Indices of the next batch and the dataset (1-based) it belongs to.
  std::pair<int, std::vector<std::size_t>> next();

 private:
  std::vector<std::size_t> sizes_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t turn_ = 0;
  std::vector<std::vector<std::size_t>> orders_;
  std::vector<std::size_t> cursor_;
  std::vector<int> pass_;
};

struct MlSchedule {
  TrainSchedule base;
  int finetune_epochs = 10;
  double finetune_lr = 0.01;
  bool accumulate = false;  // one batch per dataset summed before each update
  // Rounds (one batch from every dataset) per epoch; 0 = enough to cover the largest dataset.
  int rounds_per_epoch = 0;
};

template <typename Scalar>
SampleBatch<Scalar> gather_batch(const MlDataset<Scalar>& data, const std::vector<std::size_t>& idx,
                                 int d) {
  SampleBatch<Scalar> b;
  b.dataset = d;
  for (auto i : idx) {
    b.images.push_back(data.images.at(i));
    b.labels.push_back(data.labels.at(i));
  }
  return b;
}

// Phase 1 pretrains backbone and main heads on every dataset, phase 2 trains
// everything on the summed objective with round-robin batches.
template <typename Scalar>
MlModel<Scalar> train_mutual(const std::vector<MlDataset<Scalar>>& datasets, const MlConfig& config,
                             const MlSchedule& schedule, const LogSink& log = nullptr) {
  if (datasets.size() < 2) throw std::invalid_argument("mutual learning needs at least 2 datasets");
  std::vector<Taxonomy> taxonomies;
  std::vector<std::size_t> sizes;
  for (const auto& ds : datasets) {
    if (ds.images.empty() || ds.images.size() != ds.labels.size()) {
      throw std::invalid_argument("dataset " + ds.taxonomy.name + " is empty or unlabeled");
    }
    taxonomies.push_back(ds.taxonomy);
    sizes.push_back(ds.images.size());
  }
  MlModel<Scalar> model = MlModel<Scalar>::init(config, taxonomies, schedule.base.seed);
  const int n = model.branches();
  const auto bs = static_cast<std::size_t>(std::max(1, schedule.base.batch_size));
  int rounds = schedule.rounds_per_epoch;
  if (rounds <= 0) {
    for (auto s : sizes) rounds = std::max(rounds, static_cast<int>((s + bs - 1) / bs));
  }
  long step = 0;
  auto capped = [&] { return schedule.base.max_steps > 0 && step >= schedule.base.max_steps; };

  std::set<std::string> pretrainable;
  for (int d = 1; d <= n; ++d) {
    for (const auto& name : model.visible_names(d, [](const std::string& l) {
           return is_backbone_param(l) || is_main_head_param(l);
         })) {
      pretrainable.insert(name);
    }
  }

  auto run_phase = [&](int phase, int epochs, double base_lr, bool main_only,
                       const typename ParamBinder<Scalar>::Trainable& trainable) {
    Sgd<Scalar> sgd(static_cast<Scalar>(schedule.base.momentum), schedule.base.clip_norm);
    RoundRobinSampler sampler(sizes, bs, schedule.base.seed * 31 + static_cast<std::uint64_t>(phase));
    for (int epoch = 0; epoch < epochs && !capped(); ++epoch) {
      const double lr = schedule.base.lr_at(base_lr, epoch, epochs);
      for (int r = 0; r < rounds && !capped(); ++r) {
        std::vector<SampleBatch<Scalar>> round;
        for (int k = 0; k < n; ++k) {
          auto [d, idx] = sampler.next();
          round.push_back(gather_batch(datasets[static_cast<std::size_t>(d - 1)], idx, d));
        }
        if (schedule.accumulate) {
          const auto l = ml_accumulated_step(round, model, sgd, static_cast<Scalar>(lr), main_only,
                                             trainable);
          if (log) log(LogRecord{phase, epoch, step, l.total, lr, 0});
          ++step;
          continue;
        }
        for (const auto& batch : round) {
          if (capped()) break;
          const double l = ml_step(batch, model, sgd, static_cast<Scalar>(lr), main_only, trainable);
          if (log) log(LogRecord{phase, epoch, step, l, lr, batch.dataset});
          ++step;
        }
      }
    }
  };

  if (schedule.base.pretrain_epochs > 0) {
    run_phase(1, schedule.base.pretrain_epochs, schedule.base.pretrain_lr, true,
              [&](const std::string& name) { return pretrainable.count(name) > 0; });
  }
  run_phase(2, schedule.base.epochs, schedule.base.lr, false, nullptr);
  return model;
}

// Phase 3: shared core and branch `target` trained on that dataset alone.
template <typename Scalar>
void finetune(MlModel<Scalar>& model, int target, const MlDataset<Scalar>& data,
              const MlSchedule& schedule, const LogSink& log = nullptr, long first_step = 0) {
  const auto allowed = model.visible_names(target);
  typename ParamBinder<Scalar>::Trainable trainable = [&](const std::string& name) {
    return allowed.count(name) > 0;
  };
  Sgd<Scalar> sgd(static_cast<Scalar>(schedule.base.momentum), schedule.base.clip_norm);
  const auto bs = static_cast<std::size_t>(std::max(1, schedule.base.batch_size));
  long step = first_step;
  for (int epoch = 0; epoch < schedule.finetune_epochs; ++epoch) {
    const double lr = schedule.base.lr_at(schedule.finetune_lr, epoch, schedule.finetune_epochs);
    const auto order = epoch_order(data.images.size(), schedule.base.seed + 3, epoch);
    for (std::size_t b = 0; b < order.size(); b += bs) {
      auto batch = make_batch(data.images, data.labels, order, b, bs, target);
      const double l = ml_step(batch, model, sgd, static_cast<Scalar>(lr), false, trainable);
      if (log) log(LogRecord{3, epoch, step, l, lr, target});
      ++step;
    }
  }
}

}  // namespace grapy

#endif  // GRAPY_MUTUAL_HPP
