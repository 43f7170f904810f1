#ifndef GRAPY_MODEL_HPP
#define GRAPY_MODEL_HPP

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "grapy/gpm.hpp"
#include "grapy/label_map.hpp"
#include "grapy/ops.hpp"
#include "grapy/params.hpp"
#include "grapy/taxonomy.hpp"

namespace grapy {

struct ModelConfig {
  Index in_channels = 3;
  std::vector<Index> hidden_widths{16, 16};  // 3x3 conv + relu layers before the feature conv
  Index feature_channels = 8;                // C
  bool use_gpm = true;
  GpmConfig gpm;
  double lambda = 1.0;
  bool gt_masks = false;  // masks from coarsened ground truth instead of the main prediction
};

std::vector<ParamSpec> backbone_specs(const ModelConfig& config);
std::vector<ParamSpec> main_head_specs(const ModelConfig& config, Index fine_classes);
std::vector<ParamSpec> model_param_specs(const ModelConfig& config, Index fine_classes);

bool is_backbone_param(const std::string& logical_name);
bool is_main_head_param(const std::string& logical_name);
bool is_gpm_param(const std::string& logical_name);

template <typename Scalar>
void add_initialized(ParamStore<Scalar>& store, const std::vector<ParamSpec>& specs,
                     std::mt19937_64& rng,
                     const std::function<std::string(const std::string&)>& rename = nullptr) {
  for (const auto& spec : specs) {
    store.add(rename ? rename(spec.name) : spec.name, initial_value<Scalar>(spec, rng));
  }
}

template <typename Scalar>
ParamStore<Scalar> init_model_params(const ModelConfig& config, Index fine_classes,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore<Scalar> store;
  add_initialized(store, model_param_specs(config, fine_classes), rng);
  return store;
}

template <typename Scalar>
struct ForwardResult {
  Var<Scalar> f;       // backbone features, HxWxC
  Var<Scalar> logits;  // main head, HxWxK3
  Var<Scalar> y;       // main-branch probabilities
  std::optional<PyramidOutput<Scalar>> gpm;

  Var<Scalar> y_hat() const { return gpm ? gpm->y_hat : Var<Scalar>(); }
};

template <typename Scalar>
Var<Scalar> backbone_forward(Var<Scalar> image, const ParamSource<Scalar>& source,
                             const ModelConfig& config) {
  Var<Scalar> x = image;
  const std::size_t layers = config.hidden_widths.size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string prefix = "backbone.conv" + std::to_string(i) + ".";
    x = conv2d(x, source(prefix + "kernel"), 1, 1) + source(prefix + "bias");
    if (i + 1 < layers) x = relu(x);
  }
  return x;
}

// y = softmax(p(f)) and, with the pyramid enabled, y_hat from the GPM branch.
// `with_gpm` = false skips the pyramid (main-branch-only training).
template <typename Scalar>
ForwardResult<Scalar> forward(Var<Scalar> image, const ParamSource<Scalar>& source,
                              const ModelConfig& config, const Taxonomy& taxonomy,
                              const LabelMap* ground_truth = nullptr, bool with_gpm = true) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[2] != config.in_channels) {
    throw ShapeError("forward: image " + shape_string(s) + " does not have " +
                     std::to_string(config.in_channels) + " channels");
  }
  ForwardResult<Scalar> r;
  r.f = backbone_forward(image, source, config);
  r.logits = pointwise_conv(r.f, source("main_head.kernel")) + source("main_head.bias");
  r.y = softmax_channels(r.logits);
  if (config.use_gpm && with_gpm) {
    const LabelMap* masks = config.gt_masks ? ground_truth : nullptr;
    if (config.gt_masks && !ground_truth) {
      throw std::invalid_argument("forward: ground-truth masks requested without labels");
    }
    r.gpm = pyramid_forward(r.f, r.y.value(), taxonomy, source, config.gpm, masks);
  }
  return r;
}

template <typename Scalar>
struct LossTerms {
  Var<Scalar> total;
  Var<Scalar> main;
  Var<Scalar> gpm;  // invalid when the pyramid is off
};

// Per-pixel mean cross-entropy of y = softmax(logits) against q, plus lambda times
// that of y_hat. Taken from the logits so that saturated softmaxes stay finite.
template <typename Scalar>
LossTerms<Scalar> loss(Var<Scalar> logits, Var<Scalar> logits_hat, const LabelMap& q,
                       Scalar lambda) {
  const Shape& s = logits.shape();
  detail::require_rank(s, 3, "loss");
  if (q.height() != s[0] || q.width() != s[1]) {
    throw ShapeError("loss: labels are " + std::to_string(q.height()) + "x" +
                     std::to_string(q.width()) + ", prediction " + shape_string(s));
  }
  q.check_range(static_cast<int>(s[2]));
  LossTerms<Scalar> out;
  out.main = softmax_cross_entropy(reshape(logits, {s[0] * s[1], s[2]}), q.labels());
  out.total = out.main;
  if (logits_hat.valid()) {
    if (logits_hat.shape() != s) throw ShapeError("loss: y and y_hat shapes differ");
    out.gpm = softmax_cross_entropy(reshape(logits_hat, {s[0] * s[1], s[2]}), q.labels());
    out.total = out.main + scale(out.gpm, lambda);
  }
  return out;
}

template <typename Scalar>
LossTerms<Scalar> loss(const ForwardResult<Scalar>& r, const LabelMap& q, Scalar lambda) {
  return loss(r.logits, r.gpm ? r.gpm->logits : Var<Scalar>(), q, lambda);
}

template <typename Scalar>
struct SampleBatch {
  std::vector<Tensor<Scalar>> images;  // HxWxC_in each
  std::vector<LabelMap> labels;        // finest level
  int dataset = 0;                     // 1-based in mutual learning, 0 otherwise
};

using NameMap = std::function<std::string(const std::string&)>;

// Everything needed to turn a batch into a loss on a tape.
template <typename Scalar>
struct Objective {
  const ModelConfig* config = nullptr;
  const Taxonomy* taxonomy = nullptr;
  NameMap names;           // logical -> stored parameter name; identity when empty
  bool main_only = false;  // L_main alone, pyramid skipped

  LossTerms<Scalar> sample_loss(ParamBinder<Scalar>& binder, const Tensor<Scalar>& image,
                                const LabelMap& q) const {
    ParamSource<Scalar> source = [&](const std::string& n) {
      return binder(names ? names(n) : n);
    };
    Var<Scalar> x = binder.tape().constant(image);
    const auto r = forward(x, source, *config, *taxonomy, &q, !main_only);
    return loss(r, q, static_cast<Scalar>(config->lambda));
  }

  // Mean loss over the batch, recorded on the binder's tape.
  Var<Scalar> batch_loss(ParamBinder<Scalar>& binder, const SampleBatch<Scalar>& batch) const {
    if (batch.images.empty() || batch.images.size() != batch.labels.size()) {
      throw std::invalid_argument("batch must hold matching, non-empty images and labels");
    }
    Var<Scalar> total;
    for (std::size_t i = 0; i < batch.images.size(); ++i) {
      Var<Scalar> l = sample_loss(binder, batch.images[i], batch.labels[i]).total;
      total = total.valid() ? total + l : l;
    }
    return scale(total, Scalar(1) / static_cast<Scalar>(batch.images.size()));
  }
};

template <typename Scalar>
void require_finite_grads(const GradMap<Scalar>& grads) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);
  }
}

// One forward, one backward and one SGD update over the trainable parameters.
// Returns the loss before the update.
template <typename Scalar>
double train_step(const SampleBatch<Scalar>& batch, ParamStore<Scalar>& params, Sgd<Scalar>& sgd,
                  Scalar lr, const Objective<Scalar>& objective,
                  const typename ParamBinder<Scalar>::Trainable& trainable = nullptr) {
  Tape<Scalar> tape;
  ParamBinder<Scalar> binder(tape, params, trainable);
  const Var<Scalar> l = objective.batch_loss(binder, batch);
  const double value = static_cast<double>(l.value().item());
  if (!std::isfinite(value)) throw NumericError("non-finite loss");
  tape.backward(l);
  const GradMap<Scalar> grads = binder.grads();
  require_finite_grads(grads);
  sgd.step(params, grads, lr);
  return value;
}

struct TrainSchedule {
  int pretrain_epochs = 30;
  int epochs = 30;
  int batch_size = 4;
  double lr = 0.01;
  double pretrain_lr = 0.1;
  double momentum = 0.9;
  double clip_norm = 2.0;    // global gradient-norm cap, 0 = off
  double decay = 0.1;        // single step decay factor
  double decay_at = 0.75;    // fraction of each phase after which lr is decayed
  int max_steps = 0;         // total step cap across phases, 0 = none
  std::uint64_t seed = 1;

  double lr_at(double base, int epoch, int phase_epochs) const {
    return epoch >= static_cast<int>(decay_at * phase_epochs) ? base * decay : base;
  }
};

struct LogRecord {
  int phase = 0;
  int epoch = 0;
  long step = 0;
  double loss = 0;
  double lr = 0;
  int dataset = 0;
};

using LogSink = std::function<void(const LogRecord&)>;

// Deterministic per-epoch shuffle of [0, n).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed * 1000003ull + static_cast<std::uint64_t>(epoch) * 7919ull + 17ull);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

template <typename Scalar>
SampleBatch<Scalar> make_batch(const std::vector<Tensor<Scalar>>& images,
                               const std::vector<LabelMap>& labels,
                               const std::vector<std::size_t>& order, std::size_t begin,
                               std::size_t count, int dataset = 0) {
  SampleBatch<Scalar> b;
  b.dataset = dataset;
  for (std::size_t i = begin; i < std::min(order.size(), begin + count); ++i) {
    b.images.push_back(images[order[i]]);
    b.labels.push_back(labels[order[i]]);
  }
  return b;
}

// Phase 1 trains backbone and main head on L_main so the masks are meaningful;
// phase 2 trains everything on L_main + lambda L_GPM.
template <typename Scalar>
ParamStore<Scalar> pretrain_then_train(const std::vector<Tensor<Scalar>>& images,
                                       const std::vector<LabelMap>& labels,
                                       const ModelConfig& config, const Taxonomy& taxonomy,
                                       const TrainSchedule& schedule,
                                       const LogSink& log = nullptr,
                                       ParamStore<Scalar>* start = nullptr) {
  if (images.empty() || images.size() != labels.size()) {
    throw std::invalid_argument("training set must be non-empty with one label map per image");
  }
  require_valid(taxonomy);
  ParamStore<Scalar> params =
      start ? *start : init_model_params<Scalar>(config, taxonomy.classes(3), schedule.seed);
  long step = 0;
  const auto bs = static_cast<std::size_t>(std::max(1, schedule.batch_size));
  auto capped = [&] { return schedule.max_steps > 0 && step >= schedule.max_steps; };

  auto run_phase = [&](int phase, int epochs, double base_lr, bool main_only,
                       const typename ParamBinder<Scalar>::Trainable& trainable) {
    Sgd<Scalar> sgd(static_cast<Scalar>(schedule.momentum), schedule.clip_norm);
    Objective<Scalar> objective{&config, &taxonomy, nullptr, main_only};
    for (int epoch = 0; epoch < epochs && !capped(); ++epoch) {
      const double lr = schedule.lr_at(base_lr, epoch, epochs);
      const auto order = epoch_order(images.size(), schedule.seed + static_cast<std::uint64_t>(phase), epoch);
      for (std::size_t b = 0; b < order.size() && !capped(); b += bs) {
        const auto batch = make_batch(images, labels, order, b, bs);
        double value = 0;
        try {
          value = train_step(batch, params, sgd, static_cast<Scalar>(lr), objective, trainable);
        } catch (const NumericError& e) {
          std::ostringstream msg;
          msg << e.what() << " (phase " << phase << ", epoch " << epoch << ", step " << step << ")";
          throw NumericError(msg.str());
        }
        if (log) log(LogRecord{phase, epoch, step, value, lr, 0});
        ++step;
      }
    }
  };

  const bool pretrain = schedule.pretrain_epochs > 0;
  if (pretrain) {
    run_phase(1, schedule.pretrain_epochs, schedule.pretrain_lr, true, [](const std::string& n) {
      return is_backbone_param(n) || is_main_head_param(n);
    });
  }
  run_phase(2, schedule.epochs, schedule.lr, !config.use_gpm, nullptr);
  return params;
}

struct Prediction {
  LabelMap main;                 // argmax of y
  std::optional<LabelMap> gpm;   // argmax of y_hat
};

// Inference on one image; no gradients are tracked. Ground-truth masks are used
// only when the config asks for them and `ground_truth` is given.
template <typename Scalar>
Prediction predict(const Tensor<Scalar>& image, const ParamStore<Scalar>& params,
                   const ModelConfig& config, const Taxonomy& taxonomy,
                   const NameMap& names = nullptr, const LabelMap* ground_truth = nullptr) {
  Tape<Scalar> tape;
  ParamBinder<Scalar> binder(tape, params, [](const std::string&) { return false; });
  ParamSource<Scalar> source = [&](const std::string& n) { return binder(names ? names(n) : n); };
  ModelConfig inference = config;
  inference.gt_masks = config.gt_masks && ground_truth != nullptr;
  const auto r = forward(tape.constant(image), source, inference, taxonomy, ground_truth);
  Prediction p{argmax_channel(r.y.value()), std::nullopt};
  if (r.gpm) p.gpm = argmax_channel(r.gpm->y_hat.value());
  return p;
}

}  // namespace grapy

#endif  // GRAPY_MODEL_HPP
