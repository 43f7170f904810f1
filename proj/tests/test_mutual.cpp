#include <gtest/gtest.h>

#include <map>

#include "grapy/mutual.hpp"
#include "grapy/synth.hpp"

using namespace grapy;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.hidden_widths = {6};
  c.feature_channels = 4;
  return c;
}

std::vector<MlDataset<double>> datasets(std::size_t n, std::uint64_t seed = 1) {
  std::vector<MlDataset<double>> out;
  for (const auto& t : builtin_taxonomies()) {
    SceneSpec spec;
    spec.seed = seed + static_cast<std::uint64_t>(out.size());
    spec.height = spec.width = 16;
    MlDataset<double> d{t, {}, {}};
    for (const auto& s : generate(spec, t, n)) {
      d.images.push_back(s.image);
      d.labels.push_back(s.labels);
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Taxonomy> taxonomies_of(const std::vector<MlDataset<double>>& ds) {
  std::vector<Taxonomy> t;
  for (const auto& d : ds) t.push_back(d.taxonomy);
  return t;
}

template <typename Set>
std::map<std::string, Tensor<double>> snapshot(const MlModel<double>& m, const Set& names) {
  std::map<std::string, Tensor<double>> out;
  for (const auto& n : names) out.emplace(n, m.params().at(n));
  return out;
}

SampleBatch<double> first_batch(const MlDataset<double>& d, int index, std::size_t n = 2) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  return gather_batch(d, idx, index);
}

}  // namespace

TEST(MlModel, NamesPartitionSharedAndBranches) {
  const auto ds = datasets(1);
  for (bool share : {true, false}) {
    const auto m = MlModel<double>::init(MlConfig{small_config(), share}, taxonomies_of(ds), 1);
    std::set<std::string> all = m.shared_names();
    std::size_t total = all.size();
    for (int d = 1; d <= 3; ++d) {
      const auto own = m.branch_names(d);
      total += own.size();
      all.insert(own.begin(), own.end());
    }
    EXPECT_EQ(total, all.size());
    EXPECT_EQ(all.size(), m.params().size());
    EXPECT_TRUE(m.params().contains("shared.gpm.level1.q1"));
    EXPECT_TRUE(m.params().contains("shared.gpm.level2.out_proj"));
    EXPECT_TRUE(m.params().contains("branch2.gpm.level3.q2"));
    EXPECT_TRUE(m.params().contains("branch3.gpm.head"));
    EXPECT_TRUE(m.params().contains("branch1.main_head.kernel"));
    EXPECT_EQ(m.params().contains("shared.backbone.conv0.kernel"), share);
    EXPECT_EQ(m.params().contains("branch2.backbone.conv0.kernel"), !share);
    // every branch sees the shared core plus its own names, nothing else
    for (int d = 1; d <= 3; ++d) {
      for (const auto& n : m.visible_names(d)) {
        EXPECT_TRUE(n.rfind("shared.", 0) == 0 || n.rfind("branch" + std::to_string(d) + ".", 0) == 0) << n;
      }
    }
  }
}

TEST(MlModel, RequiresTwoDatasetsAndPyramid) {
  const auto t = builtin_taxonomies();
  EXPECT_THROW(MlModel<double>::init(MlConfig{small_config()}, {t[0]}, 1), std::invalid_argument);
  ModelConfig no_gpm = small_config();
  no_gpm.use_gpm = false;
  EXPECT_THROW(MlModel<double>::init(MlConfig{no_gpm}, {t[0], t[1]}, 1), std::invalid_argument);
}

TEST(MlForward, ChannelCountsFollowBranch) {
  const auto ds = datasets(1);
  const auto m = MlModel<double>::init(MlConfig{small_config()}, taxonomies_of(ds), 2);
  const int expect[3] = {7, 12, 10};
  for (int d = 1; d <= 3; ++d) {
    Tape<double> tape;
    ParamBinder<double> binder(tape, m.params());
    const auto r = ml_forward(binder, ds[0].images[0], d, m);
    EXPECT_EQ(r.y.shape().back(), expect[d - 1]);
    EXPECT_EQ(r.y_hat().shape().back(), expect[d - 1]);
  }
  Tape<double> tape;
  ParamBinder<double> binder(tape, m.params());
  EXPECT_THROW(ml_forward(binder, ds[0].images[0], 4, m), std::out_of_range);
}

TEST(MlStep, LocalityAndSharedUpdate) {
  const auto ds = datasets(2);
  auto m = MlModel<double>::init(MlConfig{small_config()}, taxonomies_of(ds), 3);
  const auto b2 = snapshot(m, m.branch_names(2));
  const auto b3 = snapshot(m, m.branch_names(3));
  const auto b1 = snapshot(m, m.branch_names(1));
  const auto shared = snapshot(m, m.shared_names());
  Sgd<double> sgd(0.9);
  ml_step(first_batch(ds[0], 1), m, sgd, 0.05);
  EXPECT_EQ(snapshot(m, m.branch_names(2)), b2);
  EXPECT_EQ(snapshot(m, m.branch_names(3)), b3);
  EXPECT_NE(snapshot(m, m.branch_names(1)), b1);
  int changed = 0;
  for (const auto& [n, t] : shared) changed += m.params().at(n) == t ? 0 : 1;
  EXPECT_GT(changed, 0);
  // the first step has zero out_proj, so Level-1/2 attention gets no gradient yet; a second step reaches it
  ml_step(first_batch(ds[0], 1), m, sgd, 0.05);
  EXPECT_NE(m.params().at("shared.gpm.level1.q1"), shared.at("shared.gpm.level1.q1"));
  EXPECT_EQ(snapshot(m, m.branch_names(2)), b2);
}

TEST(MlForward, EqualMasksGiveEqualCoarseNodes) {
  const auto ds = datasets(1);
  auto m = MlModel<double>::init(MlConfig{small_config()}, taxonomies_of(ds), 4);
  for (auto& [n, t] : m.params())
    if (n.find("out_proj") != std::string::npos) t.array().setConstant(0.07);
  // the same scene labelled under each taxonomy: identical Level-1/2 masks
  SceneSpec spec;
  spec.seed = 77;
  spec.height = spec.width = 16;
  std::vector<Tensor<double>> nodes;
  ModelConfig cfg = m.model_config();
  cfg.gt_masks = true;
  MlModel<double> forced(MlConfig{cfg, true}, m.taxonomies(), m.params());
  for (int d = 1; d <= 3; ++d) {
    const Sample s = generate_one(spec, forced.taxonomy(d), 0);
    Tape<double> tape;
    ParamBinder<double> binder(tape, forced.params());
    const auto r = ml_forward(binder, s.image, d, forced, &s.labels);
    nodes.push_back(r.gpm->refined[0].value());
    nodes.push_back(r.gpm->refined[1].value());
    nodes.push_back(r.gpm->nodes[1]->features.value());
  }
  for (std::size_t i = 3; i < nodes.size(); ++i) EXPECT_EQ(nodes[i], nodes[i % 3]) << i;
}

TEST(MlForward, IdenticalBranchesMatchSingleModel) {
  const Taxonomy a = builtin_taxonomy("A");
  std::vector<Taxonomy> three{a, a, a};
  three[1].name = "A2";
  three[2].name = "A3";
  ModelConfig cfg = small_config();
  cfg.gt_masks = true;
  auto single = init_model_params<double>(cfg, 7, 5);
  for (auto& [n, t] : single)
    if (n.find("out_proj") != std::string::npos) t.array().setConstant(0.03);
  ParamStore<double> ml;
  for (const auto& [n, t] : single) {
    if (is_shared_logical(n, true)) {
      ml.add("shared." + n, t);
    } else {
      for (int d = 1; d <= 3; ++d) ml.add("branch" + std::to_string(d) + "." + n, t);
    }
  }
  const MlModel<double> m(MlConfig{cfg, true}, three, ml);
  SceneSpec spec;
  spec.seed = 3;
  spec.height = spec.width = 16;
  const Sample s = generate_one(spec, a, 0);
  Tape<double> t0;
  ParamBinder<double> b0(t0, single);
  ParamSource<double> src = [&](const std::string& n) { return b0(n); };
  const auto ref = forward(t0.constant(s.image), src, cfg, a, &s.labels);
  for (int d = 1; d <= 3; ++d) {
    Tape<double> tape;
    ParamBinder<double> binder(tape, m.params());
    const auto r = ml_forward(binder, s.image, d, m, &s.labels);
    EXPECT_EQ(r.y.value(), ref.y.value());
    EXPECT_EQ(r.y_hat().value(), ref.y_hat().value());
  }
}

TEST(Accumulation, LossIsSumOverDatasets) {
  const auto ds = datasets(2);
  auto m = MlModel<double>::init(MlConfig{small_config()}, taxonomies_of(ds), 6);
  for (auto& [n, t] : m.params())
    if (n.find("out_proj") != std::string::npos) t.array().setConstant(0.02);
  std::vector<SampleBatch<double>> batches;
  for (int d = 1; d <= 3; ++d) batches.push_back(first_batch(ds[static_cast<std::size_t>(d - 1)], d));
  // each L^d computed on its own tape
  std::vector<double> separate;
  for (const auto& b : batches) {
    Tape<double> tape;
    ParamBinder<double> binder(tape, m.params());
    separate.push_back(ml_objective(m, b.dataset).batch_loss(binder, b).value().item());
  }
  Sgd<double> sgd(0.9);
  const auto acc = ml_accumulated_step(batches, m, sgd, 0.0);
  ASSERT_EQ(acc.per_dataset.size(), 3u);
  double sum = 0;
  for (int d = 0; d < 3; ++d) {
    EXPECT_NEAR(acc.per_dataset[static_cast<std::size_t>(d)], separate[static_cast<std::size_t>(d)], 1e-12);
    sum += acc.per_dataset[static_cast<std::size_t>(d)];
  }
  EXPECT_NEAR(acc.total, sum, 1e-9);
  EXPECT_NEAR(acc.total, separate[0] + separate[1] + separate[2], 1e-9);
}

TEST(Accumulation, GradientIsSumOfPerDatasetGradients) {
  const auto ds = datasets(1);
  const auto m0 = MlModel<double>::init(MlConfig{small_config()}, taxonomies_of(ds), 7);
  std::vector<SampleBatch<double>> batches;
  for (int d = 1; d <= 3; ++d) batches.push_back(first_batch(ds[static_cast<std::size_t>(d - 1)], d, 1));
  auto acc_model = m0;
  Sgd<double> sgd(0.0);
  ml_accumulated_step(batches, acc_model, sgd, 0.1);
  auto seq = m0;
  GradMap<double> summed;
  for (const auto& b : batches) {
    Tape<double> tape;
    ParamBinder<double> binder(tape, seq.params());
    tape.backward(ml_objective(seq, b.dataset).batch_loss(binder, b));
    for (const auto& [n, g] : binder.grads()) {
      auto [it, fresh] = summed.try_emplace(n, g);
      if (!fresh) it->second.array() += g.array();
    }
  }
  sgd_step(seq.params(), summed, 0.1);
  for (const auto& [n, t] : acc_model.params()) {
    EXPECT_LE((t.array() - seq.params().at(n).array()).abs().maxCoeff(), 1e-12) << n;
  }
}

TEST(Sampler, RoundRobinCycle) {
  RoundRobinSampler s({5, 3, 8}, 2, 1);
  std::vector<int> order;
  std::vector<std::vector<std::size_t>> seen(3);
  for (int i = 0; i < 12; ++i) {
    EXPECT_EQ(s.next_dataset(), i % 3 + 1);
    auto [d, idx] = s.next();
    order.push_back(d);
    for (auto k : idx) seen[static_cast<std::size_t>(d - 1)].push_back(k);
    EXPECT_LE(idx.size(), 2u);
    EXPECT_FALSE(idx.empty());
  }
  for (int i = 0; i < 12; ++i) EXPECT_EQ(order[static_cast<std::size_t>(i)], i % 3 + 1);
  // dataset 2 (size 3) wrapped around: every index drawn before any repeats
  std::set<std::size_t> first(seen[1].begin(), seen[1].begin() + 3);
  EXPECT_EQ(first, (std::set<std::size_t>{0, 1, 2}));
}

TEST(TrainMutual, LogCyclesAndFinetuneLocality) {
  const auto ds = datasets(3);
  MlSchedule sched;
  sched.base.pretrain_epochs = 1;
  sched.base.epochs = 1;
  sched.base.batch_size = 2;
  sched.base.lr = 0.01;
  sched.base.pretrain_lr = 0.05;
  sched.finetune_epochs = 1;
  std::vector<LogRecord> log;
  auto m = train_mutual<double>(ds, MlConfig{small_config()}, sched, [&](const LogRecord& r) { log.push_back(r); });
  std::vector<int> phase2;
  for (const auto& r : log)
    if (r.phase == 2) phase2.push_back(r.dataset);
  ASSERT_EQ(phase2.size(), 6u);  // 2 rounds to cover 3 images, 3 datasets each
  for (std::size_t i = 0; i < phase2.size(); ++i) EXPECT_EQ(phase2[i], static_cast<int>(i % 3) + 1);

  const auto b2 = snapshot(m, m.branch_names(2));
  const auto b3 = snapshot(m, m.branch_names(3));
  const auto b1 = snapshot(m, m.branch_names(1));
  finetune(m, 1, ds[0], sched, nullptr, 0);
  EXPECT_EQ(snapshot(m, m.branch_names(2)), b2);
  EXPECT_EQ(snapshot(m, m.branch_names(3)), b3);
  EXPECT_NE(snapshot(m, m.branch_names(1)), b1);
}

TEST(TrainMutual, PhaseOneTouchesOnlyBackboneAndMainHeads) {
  const auto ds = datasets(2);
  MlSchedule sched;
  sched.base.pretrain_epochs = 2;
  sched.base.epochs = 0;
  sched.base.batch_size = 2;
  const auto trained = train_mutual<double>(ds, MlConfig{small_config()}, sched);
  const auto init = MlModel<double>::init(MlConfig{small_config()}, taxonomies_of(ds), sched.base.seed);
  for (const auto& [n, t] : trained.params()) {
    const bool gpm = n.find(".gpm.") != std::string::npos;
    if (gpm) EXPECT_EQ(t, init.params().at(n)) << n;
  }
  EXPECT_NE(trained.params().at("shared.backbone.conv0.kernel"), init.params().at("shared.backbone.conv0.kernel"));
  EXPECT_NE(trained.params().at("branch3.main_head.kernel"), init.params().at("branch3.main_head.kernel"));
}
