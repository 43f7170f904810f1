// grapy: data generation, training, evaluation and prediction.
//
// Exit codes: 0 success, 1 other failure (I/O), 2 usage, 3 numerical failure,
// 4 artifact mismatch (checkpoint, taxonomy or data file does not fit).

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "grapy/artifacts.hpp"
#include "grapy/evaluate.hpp"
#include "grapy/gradcheck.hpp"
#include "grapy/io.hpp"
#include "grapy/mutual.hpp"
#include "grapy/palette.hpp"
#include "grapy/synth.hpp"

namespace fs = std::filesystem;
using namespace grapy;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kNumeric = 3, kMismatch = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- shared options --------------------------------------------------------

struct ModelOptions {
  std::string hidden = "16,16";
  Index channels = 8;
  bool no_gpm = false;
  std::string levels = "123";
  std::string pooling = "both";
  int iterations = 3;
  bool fresh_weights = false;
  double lambda = 1.0;
  bool gt_masks = false;

  void add(CLI::App* app) {
    app->add_option("--hidden", hidden, "hidden conv widths, comma separated");
    app->add_option("--channels", channels, "feature channels C")->check(CLI::Range(1, 1024));
    app->add_flag("--no-gpm", no_gpm, "train the main branch only (baseline)");
    app->add_option("--levels", levels, "enabled pyramid levels, e.g. 123 or 3");
    app->add_option("--pooling", pooling, "node pooling")
        ->check(CLI::IsMember({"both", "average", "max"}));
    app->add_option("--iterations", iterations, "reasoning iterations")->check(CLI::Range(1, 16));
    app->add_flag("--gcr-fresh-weights", fresh_weights, "separate attention weights per iteration");
    app->add_option("--lambda", lambda, "weight of the pyramid loss")->check(CLI::Range(0.0, 1e6));
    app->add_flag("--gt-masks", gt_masks, "build training masks from ground truth");
  }

  ModelConfig config() const {
    ModelConfig c;
    c.hidden_widths.clear();
    if (!hidden.empty()) {
      for (const auto& w : split(hidden, ',')) {
        try {
          const long v = std::stol(w);
          if (v < 1 || v > 1024) throw std::out_of_range(w);
          c.hidden_widths.push_back(v);
        } catch (const std::logic_error&) {
          throw UsageError("--hidden: bad width '" + w + "'");
        }
      }
    }
    c.feature_channels = channels;
    c.use_gpm = !no_gpm;
    if (levels.empty() || levels.find_first_not_of("123") != std::string::npos) {
      throw UsageError("--levels takes digits from 123");
    }
    for (int l = 1; l <= 3; ++l) {
      c.gpm.levels[static_cast<std::size_t>(l - 1)] =
          levels.find(static_cast<char>('0' + l)) != std::string::npos;
    }
    c.gpm.pooling = pooling == "average" ? Pooling::kAverage
                    : pooling == "max"   ? Pooling::kMax
                                         : Pooling::kBoth;
    c.gpm.iterations = iterations;
    c.gpm.fresh_weights = fresh_weights;
    c.lambda = lambda;
    c.gt_masks = gt_masks;
    return c;
  }
};

struct ScheduleOptions {
  TrainSchedule s;

  void add(CLI::App* app) {
    app->add_option("--pretrain-epochs", s.pretrain_epochs, "phase-1 epochs")->check(CLI::Range(0, 100000));
    app->add_option("--epochs", s.epochs, "phase-2 epochs")->check(CLI::Range(0, 100000));
    app->add_option("--batch-size", s.batch_size)->check(CLI::Range(1, 4096));
    app->add_option("--lr", s.lr, "phase-2 learning rate")->check(CLI::Range(0.0, 10.0));
    app->add_option("--pretrain-lr", s.pretrain_lr, "phase-1 learning rate")->check(CLI::Range(0.0, 10.0));
    app->add_option("--momentum", s.momentum)->check(CLI::Range(0.0, 0.999));
    app->add_option("--clip-norm", s.clip_norm, "gradient norm cap, 0 = off")->check(CLI::Range(0.0, 1e9));
    app->add_option("--decay", s.decay, "step decay factor")->check(CLI::Range(0.0, 1.0));
    app->add_option("--decay-at", s.decay_at, "fraction of a phase before the decay")->check(CLI::Range(0.0, 1.0));
    app->add_option("--max-steps", s.max_steps, "cap on total steps, 0 = none")->check(CLI::Range(0, 100000000));
  }
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory " + dir.string());
  }
}

class LogFile {
 public:
  explicit LogFile(const fs::path& path) : os_(path, std::ios::trunc) {
    if (!os_) throw std::runtime_error("cannot write " + path.string());
  }
  void line(const std::string& s) {
    os_ << s << '\n';
    os_.flush();
  }

 private:
  std::ofstream os_;
};

template <typename Scalar>
std::vector<Tensor<Scalar>> tensors(const Dataset& d) {
  return d.tensors<Scalar>();
}

void print_eval(const EvalResult& r, const Taxonomy& tax, bool include_background,
                const std::string& key_prefix) {
  for (bool gpm : {false, true}) {
    if (gpm && !r.gpm) continue;
    for (int level = 1; level <= 3; ++level) {
      MetricsReport rep{std::string(gpm ? "gpm" : "main") + " branch, level " + std::to_string(level),
                        tax.label_names(level), r.at(level, gpm), include_background};
      std::cout << format_table(rep) << "\n";
    }
  }
  for (bool gpm : {false, true}) {
    if (gpm && !r.gpm) continue;
    for (int level = 1; level <= 3; ++level) {
      MetricsReport rep{"", tax.label_names(level), r.at(level, gpm), include_background};
      const std::string prefix =
          key_prefix + (gpm ? "gpm" : "main") + ".level" + std::to_string(level) + ".";
      std::cout << prefix << "miou=" << fmt(miou(rep.cm)) << "\n";
      std::cout << prefix << "mean_accuracy=" << fmt(mean_accuracy(rep.cm, include_background))
                << "\n";
    }
  }
}

// ---- gen-data --------------------------------------------------------------

struct GenDataOptions {
  std::string out;
  std::uint64_t seed = 1;
  SceneSpec scene;
  double scale = 1.0;
};

int cmd_gen_data(const GenDataOptions& o) {
  auto splits = default_benchmark();
  for (auto& s : splits) {
    s.train = std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(s.train) * o.scale + 0.5));
    s.test = std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(s.test) * o.scale + 0.5));
  }
  ensure_dir(o.out);
  for (const auto& p : make_benchmark(o.out, o.seed, splits, o.scene)) std::cout << p.string() << "\n";
  return kOk;
}

// ---- train -----------------------------------------------------------------

struct TrainOptions {
  std::string train;
  std::string test;
  std::string out;
  std::uint64_t seed = 1;
  std::string precision = "f32";
  int overfit = 0;
  ModelOptions model;
  ScheduleOptions schedule;
  std::vector<std::string> given;  // schedule flags set explicitly
};

template <typename Scalar>
int run_train(const TrainOptions& o) {
  const ModelConfig config = o.model.config();
  Dataset data = load_dataset(o.train);
  TrainSchedule schedule = o.schedule.s;
  schedule.seed = o.seed;
  auto images = tensors<Scalar>(data);
  auto labels = data.labels;
  if (o.overfit > 0) {
    if (static_cast<std::size_t>(o.overfit) > images.size()) {
      throw UsageError("--overfit " + std::to_string(o.overfit) + " exceeds the " +
                       std::to_string(images.size()) + " training samples");
    }
    images.resize(static_cast<std::size_t>(o.overfit));
    labels.resize(static_cast<std::size_t>(o.overfit));
    auto unset = [&](const std::string& flag) {
      return std::find(o.given.begin(), o.given.end(), flag) == o.given.end();
    };
    // memorisation schedule: full batch, 500 steps
    if (unset("--pretrain-epochs")) schedule.pretrain_epochs = 300;
    if (unset("--epochs")) schedule.epochs = 200;
    if (unset("--batch-size")) schedule.batch_size = o.overfit;
    if (unset("--pretrain-lr")) schedule.pretrain_lr = 0.3;
    if (unset("--lr")) schedule.lr = 0.02;
    if (unset("--decay")) schedule.decay = 1.0;
  }
  ensure_dir(o.out);
  LogFile log(fs::path(o.out) / "train.log");
  const auto start = std::chrono::steady_clock::now();
  const int phase1_epochs = schedule.pretrain_epochs;
  long steps = 0;
  ParamStore<Scalar> params = pretrain_then_train<Scalar>(
      images, labels, config, data.taxonomy, schedule, [&](const LogRecord& r) {
        const int epoch = r.phase == 1 ? r.epoch : phase1_epochs + r.epoch;
        log.line(std::to_string(epoch) + "\t" + std::to_string(r.step) + "\t" + fmt(r.loss) + "\t" +
                 fmt(r.lr));
        ++steps;
      });
  const fs::path model = fs::path(o.out) / "model.grpy";
  save_single(model, SingleModel<Scalar>{config, data.taxonomy, params});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "checkpoint=" << model.string() << "\n";
  std::cout << "steps=" << steps << "\n";
  std::cout << "seconds=" << fmt(secs) << "\n";
  const auto train_eval = evaluate(params, config, data.taxonomy, images, labels);
  const bool final_gpm = config.use_gpm;
  std::cout << "train_miou=" << fmt(miou(train_eval.at(3, final_gpm))) << "\n";
  if (!o.test.empty()) {
    Dataset test = load_dataset(o.test);
    require_same_taxonomy(data.taxonomy, test.taxonomy);
    const auto r = evaluate(params, config, data.taxonomy, tensors<Scalar>(test), test.labels);
    std::cout << "test_miou=" << fmt(miou(r.at(3, final_gpm))) << "\n";
  }
  return kOk;
}

// ---- train-ml --------------------------------------------------------------

struct TrainMlOptions {
  std::string data = "data";
  std::string datasets = "A,B,C";
  std::string finetune;
  std::string out;
  std::uint64_t seed = 1;
  std::string precision = "f32";
  bool share_backbone = true;
  bool accumulate = false;
  bool audit_sharing = false;
  int finetune_epochs = 10;
  double finetune_lr = 0.01;
  int rounds = 0;
  ModelOptions model;
  ScheduleOptions schedule;
};

fs::path resolve_manifest(const std::string& root, const std::string& spec, const char* split) {
  if (spec.find('/') != std::string::npos || spec.ends_with(".tsv")) return spec;
  return fs::path(root) / spec / split / "manifest.tsv";
}

template <typename Scalar>
bool audit_sharing(const MlModel<Scalar>& trained, const std::vector<MlDataset<Scalar>>& data,
                   const MlSchedule& schedule) {
  bool ok = true;
  auto report = [&](const std::string& what, bool pass) {
    std::cout << "audit " << what << ": " << (pass ? "PASS" : "FAIL") << "\n";
    ok = ok && pass;
  };
  auto snapshot = [](const MlModel<Scalar>& m, const std::set<std::string>& names) {
    std::map<std::string, Tensor<Scalar>> out;
    for (const auto& n : names) out.emplace(n, m.params().at(n));
    return out;
  };
  const auto bs = static_cast<std::size_t>(schedule.base.batch_size);
  auto first_batch = [&](int d) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < std::min(bs, data[static_cast<std::size_t>(d - 1)].images.size()); ++i) idx.push_back(i);
    return gather_batch(data[static_cast<std::size_t>(d - 1)], idx, d);
  };
  const Scalar lr = static_cast<Scalar>(std::max(schedule.base.lr, 1e-3));

  // a step on dataset 1 moves the shared core and leaves other branches alone
  {
    MlModel<Scalar> m = trained;
    const auto shared_before = snapshot(m, m.shared_names());
    std::map<int, std::map<std::string, Tensor<Scalar>>> others;
    for (int d = 2; d <= m.branches(); ++d) others[d] = snapshot(m, m.branch_names(d));
    Sgd<Scalar> sgd(Scalar(0));
    ml_step(first_batch(1), m, sgd, lr);
    for (int d = 2; d <= m.branches(); ++d) {
      report("branch" + std::to_string(d) + " unchanged by a dataset-1 step",
             snapshot(m, m.branch_names(d)) == others[d]);
    }
    report("shared core changed by a dataset-1 step", snapshot(m, m.shared_names()) != shared_before);
  }
  // negative control: updating only the last branch never touches the shared core
  {
    MlModel<Scalar> m = trained;
    const int last = m.branches();
    const auto shared_before = snapshot(m, m.shared_names());
    const auto own = m.branch_names(last);
    const auto before = snapshot(m, own);
    Sgd<Scalar> sgd(Scalar(0));
    ml_step(first_batch(last), m, sgd, lr, false,
            [&](const std::string& n) { return own.count(n) > 0; });
    report("shared core identical after a branch" + std::to_string(last) + "-only update",
           snapshot(m, m.shared_names()) == shared_before);
    report("branch" + std::to_string(last) + " changed by its own update", snapshot(m, own) != before);
  }
  // identical masks give identical Level-1/2 nodes in every branch
  {
    const LabelMap& fine = data[0].labels[0];
    const Tensor<Scalar>& image = data[0].images[0];
    std::vector<Tensor<Scalar>> nodes;
    for (int d = 1; d <= trained.branches(); ++d) {
      Tape<Scalar> tape;
      ParamBinder<Scalar> binder(tape, trained.params(), [](const std::string&) { return false; });
      const NameMap map = trained.names(d);
      ParamSource<Scalar> source = [&](const std::string& n) { return binder(map(n)); };
      const Var<Scalar> f = backbone_forward(tape.constant(image), source, trained.model_config());
      const Taxonomy& t1 = trained.taxonomy(1);
      const CategoryMasks m1 = masks_from_labels(fine, t1, 1);
      const CategoryMasks m2 = masks_from_labels(fine, t1, 2);
      const auto& gcfg = trained.model_config().gpm;
      auto l1 = aggregate(f, m1, gcfg.pooling);
      const auto p1 = GpmLevelParams<Scalar>::bind(source, 1, gcfg);
      const auto v1 = reason(l1, p1, gcfg.iterations);
      const auto f1 = distribute(f, v1, p1.out_proj, m1);
      auto l2 = aggregate(f1, m2, gcfg.pooling);
      const auto v2 = reason(l2, GpmLevelParams<Scalar>::bind(source, 2, gcfg), gcfg.iterations);
      nodes.push_back(v1.value());
      nodes.push_back(v2.value());
    }
    bool same = true;
    for (std::size_t i = 2; i < nodes.size(); ++i) same = same && nodes[i] == nodes[i % 2];
    report("Level-1/2 nodes identical across branches under equal masks", same);
  }
  return ok;
}

template <typename Scalar>
int run_train_ml(const TrainMlOptions& o) {
  const auto names = split(o.datasets, ',');
  if (names.size() < 2) throw UsageError("--datasets needs at least 2 datasets, got " + o.datasets);
  MlConfig config{o.model.config(), o.share_backbone};
  if (!config.model.use_gpm) throw UsageError("train-ml needs the pyramid; drop --no-gpm");
  std::vector<MlDataset<Scalar>> data;
  for (const auto& n : names) {
    Dataset d = load_dataset(resolve_manifest(o.data, n, "train"));
    data.push_back(MlDataset<Scalar>{d.taxonomy, d.tensors<Scalar>(), d.labels});
  }
  int target = 0;
  if (!o.finetune.empty()) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == o.finetune || data[i].taxonomy.name == o.finetune) target = static_cast<int>(i) + 1;
    }
    if (target == 0) throw UsageError("--finetune " + o.finetune + " is not among --datasets");
  }
  MlSchedule schedule;
  schedule.base = o.schedule.s;
  schedule.base.seed = o.seed;
  schedule.finetune_epochs = o.finetune_epochs;
  schedule.finetune_lr = o.finetune_lr;
  schedule.accumulate = o.accumulate;
  schedule.rounds_per_epoch = o.rounds;

  ensure_dir(o.out);
  LogFile log(fs::path(o.out) / "train_ml.log");
  const int phase1_epochs = schedule.base.pretrain_epochs;
  long steps = 0;
  auto sink = [&](const LogRecord& r) {
    int epoch = r.epoch;
    if (r.phase >= 2) epoch += phase1_epochs;
    if (r.phase == 3) epoch += schedule.base.epochs;
    log.line(std::to_string(epoch) + "\t" + std::to_string(r.step) + "\t" + fmt(r.loss) + "\t" +
             fmt(r.lr) + "\t" + std::to_string(r.dataset));
    ++steps;
  };
  MlModel<Scalar> model = train_mutual<Scalar>(data, config, schedule, sink);
  const fs::path joint = fs::path(o.out) / "joint.grpy";
  save_mutual(joint, model, "joint");
  std::cout << "checkpoint=" << joint.string() << "\n";
  bool audit_ok = true;
  if (o.audit_sharing) audit_ok = audit_sharing(model, data, schedule);
  if (target > 0) {
    finetune(model, target, data[static_cast<std::size_t>(target - 1)], schedule, sink, steps);
    const fs::path tuned = fs::path(o.out) / ("finetuned-" + names[static_cast<std::size_t>(target - 1)] + ".grpy");
    save_mutual(tuned, model, "finetuned:" + std::to_string(target));
    std::cout << "checkpoint=" << tuned.string() << "\n";
  }
  std::cout << "steps=" << steps << "\n";
  return audit_ok ? kOk : kMismatch;
}

// ---- eval / predict ----------------------------------------------------------

struct EvalOptions {
  std::string model;
  std::string data;
  std::string branch;  // dataset index or taxonomy name, mutual checkpoints only
  int workers = 1;
  bool exclude_background = false;
};

struct LoadedModel {
  ModelConfig config;
  Taxonomy taxonomy;
  NameMap names;
};

template <typename Scalar>
struct AnyModel {
  ParamStore<Scalar> params;
  LoadedModel info;
};

// Reads either checkpoint kind and picks the branch that fits `data`.
template <typename Scalar>
AnyModel<Scalar> load_for(const std::string& path, const Dataset& data, const std::string& branch) {
  Checkpoint<Scalar> probe = load_checkpoint<Scalar>(path);
  const auto kind = probe.manifest.get("kind");
  if (kind == "single") {
    SingleModel<Scalar> m = load_single<Scalar>(path);
    require_same_taxonomy(m.taxonomy, data.taxonomy);
    return {std::move(m.params), {m.config, m.taxonomy, nullptr}};
  }
  if (kind != "mutual") throw ArtifactMismatch(path + ": unknown checkpoint kind");
  MlModel<Scalar> m = load_mutual<Scalar>(path);
  int d = 0;
  for (int k = 1; k <= m.branches(); ++k) {
    if (branch.empty() ? m.taxonomy(k).name == data.taxonomy.name
                       : (branch == std::to_string(k) || branch == m.taxonomy(k).name)) {
      d = k;
      break;
    }
  }
  if (d == 0) {
    throw ArtifactMismatch("checkpoint has no branch for taxonomy '" + data.taxonomy.name + "'");
  }
  require_same_taxonomy(m.taxonomy(d), data.taxonomy);
  return {m.params(), {m.model_config(), m.taxonomy(d), m.names(d)}};
}

template <typename Scalar>
int run_eval(const EvalOptions& o) {
  Dataset data = load_dataset(o.data);
  const auto m = load_for<Scalar>(o.model, data, o.branch);
  const auto r = evaluate(m.params, m.info.config, m.info.taxonomy, tensors<Scalar>(data),
                          data.labels, m.info.names, o.workers);
  print_eval(r, m.info.taxonomy, !o.exclude_background, "");
  return kOk;
}

struct PredictOptions {
  std::string model;
  std::string data;
  std::string out;
  std::string branch;
  std::string head = "auto";
  int limit = 0;
};

template <typename Scalar>
int run_predict(const PredictOptions& o) {
  Dataset data = load_dataset(o.data);
  const auto m = load_for<Scalar>(o.model, data, o.branch);
  const bool use_gpm = o.head == "gpm" || (o.head == "auto" && m.info.config.use_gpm);
  if (use_gpm && !m.info.config.use_gpm) throw UsageError("--head gpm on a model without the pyramid");
  ensure_dir(o.out);
  const auto images = tensors<Scalar>(data);
  const std::size_t n = o.limit > 0 ? std::min<std::size_t>(images.size(), static_cast<std::size_t>(o.limit)) : images.size();
  for (std::size_t i = 0; i < n; ++i) {
    ModelConfig c = m.info.config;
    c.gt_masks = false;
    const Prediction p = predict(images[i], m.params, c, m.info.taxonomy, m.info.names);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%05zu.ppm", i);
    const fs::path path = fs::path(o.out) / stem;
    write_ppm(path, colorize(use_gpm ? *p.gpm : p.main));
    std::cout << path.string() << "\n";
  }
  return kOk;
}

// ---- gradcheck ---------------------------------------------------------------

struct GradcheckOptions {
  std::uint64_t seed = 1;
  std::string filter;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const GradcheckOptions& o) {
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  const auto results = run_gradcheck_suites(o.seed, o.filter);
  if (results.empty()) throw UsageError("no gradient suite matches '" + o.filter + "'");
  for (const auto& r : results) {
    const bool pass = r.passed(o.tolerance);
    ok = ok && pass;
    std::printf("%-26s max_rel_error=%.3e entries=%zu %s\n", r.name.c_str(), r.max_rel_error, r.entries,
                pass ? "PASS" : "FAIL");
  }
  std::printf("seconds=%.3f\n", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return ok ? kOk : kNumeric;
}

template <typename Fn>
int with_precision(const std::string& precision, Fn&& fn) {
  if (precision == "f64") return fn(double{});
  return fn(float{});
}

template <typename Fn>
int with_checkpoint_precision(const std::string& path, Fn&& fn) {
  const auto bytes = checkpoint_scalar_bytes(fs::path(path));
  if (bytes == 8) return fn(double{});
  return fn(float{});
}

std::map<CLI::App*, std::string> config_paths;

void add_config(CLI::App* app) {
  app->add_option("--config", config_paths[app], "key = value settings file");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Keys name long options without the dashes; the command line wins over the file.
void apply_config(CLI::App* app) {
  const std::string& path = config_paths[app];
  if (path.empty()) return;
  std::istringstream in(read_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    CLI::Option* opt = key.empty() || key == "config" ? nullptr : app->get_option_no_throw("--" + key);
    if (opt == nullptr) throw UsageError(where + "unknown key '" + key + "' for " + app->get_name());
    if (opt->count() > 0) continue;
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError(where + key + ": " + e.what());
    }
  }
}

void require(CLI::App* app, std::initializer_list<const char*> flags) {
  for (const char* f : flags) {
    if (app->get_option(f)->count() == 0) throw UsageError(std::string(f) + " is required");
  }
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("GRAPY_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::logic_error&) {
    }
    throw UsageError(std::string("GRAPY_SEED is not an unsigned integer: ") + env);
  }
  return 1;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Graph pyramid parsing on synthetic data"};
  app.require_subcommand(1);
  const std::uint64_t seed = default_seed();

  GenDataOptions gen;
  gen.seed = seed;
  auto* gen_cmd = app.add_subcommand("gen-data", "write the three synthetic datasets");
  add_config(gen_cmd);
  gen_cmd->add_option("--out", gen.out, "output root");
  gen_cmd->add_option("--seed", gen.seed, "generator seed (default $GRAPY_SEED or 1)");
  gen_cmd->add_option("--noise", gen.scene.noise_sigma, "pixel noise sigma")->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--jitter", gen.scene.palette_jitter, "palette jitter")->check(CLI::Range(0.0, 4.0));
  gen_cmd->add_option("--size", gen.scene.height, "image side")->check(CLI::Range(16, 1024));
  gen_cmd->add_option("--max-figures", gen.scene.max_figures)->check(CLI::Range(1, 2));
  gen_cmd->add_option("--scale", gen.scale, "multiplier on the split sizes")->check(CLI::Range(0.0, 100.0));

  TrainOptions train;
  train.seed = seed;
  auto* train_cmd = app.add_subcommand("train", "single-dataset two-phase training");
  add_config(train_cmd);
  train_cmd->add_option("--train", train.train, "training manifest");
  train_cmd->add_option("--test", train.test, "optional test manifest for a final score");
  train_cmd->add_option("--out", train.out, "output directory");
  train_cmd->add_option("--seed", train.seed);
  train_cmd->add_option("--precision", train.precision)->check(CLI::IsMember({"f32", "f64"}));
  train_cmd->add_option("--overfit", train.overfit, "memorise the first N samples")->check(CLI::Range(1, 100000));
  train.model.add(train_cmd);
  train.schedule.add(train_cmd);

  TrainMlOptions ml;
  ml.seed = seed;
  auto* ml_cmd = app.add_subcommand("train-ml", "mutual learning across datasets");
  add_config(ml_cmd);
  ml_cmd->add_option("--data", ml.data, "root written by gen-data");
  ml_cmd->add_option("--datasets", ml.datasets, "comma separated names or manifest paths");
  ml_cmd->add_option("--finetune", ml.finetune, "dataset to fine-tune on afterwards");
  ml_cmd->add_option("--out", ml.out, "output directory");
  ml_cmd->add_option("--seed", ml.seed);
  ml_cmd->add_option("--precision", ml.precision)->check(CLI::IsMember({"f32", "f64"}));
  ml_cmd->add_option("--share-backbone", ml.share_backbone, "share the backbone across datasets");
  ml_cmd->add_flag("--accumulate", ml.accumulate, "sum one batch per dataset before each update");
  ml_cmd->add_flag("--audit-sharing", ml.audit_sharing, "check weight sharing after training");
  ml_cmd->add_option("--finetune-epochs", ml.finetune_epochs)->check(CLI::Range(0, 100000));
  ml_cmd->add_option("--finetune-lr", ml.finetune_lr)->check(CLI::Range(0.0, 10.0));
  ml_cmd->add_option("--rounds", ml.rounds, "rounds per epoch, 0 = cover the largest dataset")->check(CLI::Range(0, 1000000));
  ml.model.add(ml_cmd);
  ml.schedule.add(ml_cmd);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "metrics at levels 1-3 for both branches");
  add_config(eval_cmd);
  eval_cmd->add_option("--model", ev.model, "checkpoint");
  eval_cmd->add_option("--data", ev.data, "manifest");
  eval_cmd->add_option("--branch", ev.branch, "mutual checkpoints: dataset index or taxonomy");
  eval_cmd->add_option("--eval-workers", ev.workers)->check(CLI::Range(1, 256));
  eval_cmd->add_flag("--exclude-background", ev.exclude_background, "leave class 0 out of mean accuracy");

  PredictOptions pr;
  auto* predict_cmd = app.add_subcommand("predict", "write colour-coded predictions");
  add_config(predict_cmd);
  predict_cmd->add_option("--model", pr.model, "checkpoint");
  predict_cmd->add_option("--data", pr.data, "manifest");
  predict_cmd->add_option("--out", pr.out, "output directory");
  predict_cmd->add_option("--branch", pr.branch, "mutual checkpoints: dataset index or taxonomy");
  predict_cmd->add_option("--head", pr.head)->check(CLI::IsMember({"auto", "main", "gpm"}));
  predict_cmd->add_option("--limit", pr.limit, "first N images only")->check(CLI::Range(0, 10000000));

  GradcheckOptions gc;
  gc.seed = seed;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suites (64-bit)");
  add_config(gc_cmd);
  gc_cmd->add_option("--seed", gc.seed);
  gc_cmd->add_option("--filter", gc.filter, "only suites whose name contains this");
  gc_cmd->add_option("--tolerance", gc.tolerance)->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  for (auto* sub : app.get_subcommands()) apply_config(sub);

  if (*gen_cmd) {
    require(gen_cmd, {"--out"});
    gen.scene.width = gen.scene.height;
    return cmd_gen_data(gen);
  }
  if (*train_cmd) {
    require(train_cmd, {"--train", "--out"});
    for (const char* flag : {"--pretrain-epochs", "--epochs", "--batch-size", "--pretrain-lr", "--lr", "--decay"}) {
      if (train_cmd->count(flag) > 0) train.given.push_back(flag);
    }
    return with_precision(train.precision, [&](auto s) { return run_train<decltype(s)>(train); });
  }
  if (*ml_cmd) {
    require(ml_cmd, {"--out"});
    return with_precision(ml.precision, [&](auto s) { return run_train_ml<decltype(s)>(ml); });
  }
  if (*eval_cmd) {
    require(eval_cmd, {"--model", "--data"});
    return with_checkpoint_precision(ev.model, [&](auto s) { return run_eval<decltype(s)>(ev); });
  }
  if (*predict_cmd) {
    require(predict_cmd, {"--model", "--data", "--out"});
    return with_checkpoint_precision(pr.model, [&](auto s) { return run_predict<decltype(s)>(pr); });
  }
  return cmd_gradcheck(gc);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const ArtifactMismatch& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const CheckpointError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const TaxonomyError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const PnmError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
