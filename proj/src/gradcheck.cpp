#include "grapy/gradcheck.hpp"

#include <chrono>
#include <random>

#include "grapy/model.hpp"

namespace grapy {

GradcheckResult check_gradients(const std::string& name, const std::vector<Tensor<double>>& inputs,
                                const LossBuilder& build, double h) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckResult r{name};
  auto evaluate = [&](const std::vector<Tensor<double>>& values) {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& v : values) leaves.push_back(tape.leaf(v));
    return build(tape, leaves).value().item();
  };

  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& v : inputs) leaves.push_back(tape.leaf(v));
  tape.backward(build(tape, leaves));

  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double> analytic = leaves[i].grad();
    Tensor<double> numeric(inputs[i].shape());
    for (Index n = 0; n < inputs[i].size(); ++n) {
      const double x = inputs[i][n];
      probe[i][n] = x + h;
      const double up = evaluate(probe);
      probe[i][n] = x - h;
      const double down = evaluate(probe);
      probe[i][n] = x;
      numeric[n] = (up - down) / (2 * h);
      ++r.entries;
    }
    const double scale = std::max({numeric.array().abs().maxCoeff(),
                                   analytic.array().abs().maxCoeff(), 1e-8});
    const double err = (analytic.array() - numeric.array()).abs().maxCoeff() / scale;
    r.max_rel_error = std::max(r.max_rel_error, err);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

namespace {

using V = Var<double>;
using T = Tensor<double>;

struct Instance {
  std::mt19937_64 rng;

  T uniform(Shape s, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> d(lo, hi);
    return T::generate(std::move(s), [&] { return d(rng); });
  }
  // Magnitudes in [0.2, 1] so relu and max never sit on a kink.
  T away_from_zero(Shape s) {
    std::uniform_real_distribution<double> d(0.2, 1.0);
    std::bernoulli_distribution sign(0.5);
    return T::generate(std::move(s), [&] { return sign(rng) ? d(rng) : -d(rng); });
  }
  std::vector<int> labels(std::size_t n, int classes) {
    std::uniform_int_distribution<int> d(0, classes - 1);
    std::vector<int> out(n);
    for (auto& l : out) l = d(rng);
    return out;
  }
};

// sum(w * out) for a fixed random w, so every output entry matters differently.
V weighted(Tape<double>& t, V out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  return sum_all(out * t.constant(T::generate(out.shape(), [&] { return d(rng); })));
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suites(std::uint64_t seed, const std::string& filter) {
  Instance in{std::mt19937_64(seed)};
  std::vector<GradcheckResult> out;
  auto run = [&](const std::string& name, std::vector<T> inputs, LossBuilder fn) {
    if (!filter.empty() && name.find(filter) == std::string::npos) return;
    out.push_back(check_gradients(name, inputs, fn));
  };
  const std::uint64_t w = seed * 7 + 3;

  run("add_broadcast", {in.uniform({3, 4}), in.uniform({1, 4})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, x[0] + x[1], w); });
  run("sub_broadcast", {in.uniform({3, 4}), in.uniform({3, 1})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, x[0] - x[1], w); });
  run("mul_broadcast", {in.uniform({2, 3, 4}), in.uniform({1, 1, 4})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, x[0] * x[1], w); });
  run("div", {in.uniform({3, 4}), in.uniform({3, 4}, 0.5, 2.0)},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, x[0] / x[1], w); });
  run("scale", {in.uniform({5})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, scale(x[0], -2.5), w); });
  run("relu", {in.away_from_zero({4, 5})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, relu(x[0]), w); });
  run("log", {in.uniform({4, 3}, 0.2, 3.0)},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, log(x[0]), w); });
  run("reshape", {in.uniform({2, 6})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, reshape(x[0], {3, 4}), w); });
  run("transpose", {in.uniform({2, 5})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, transpose(x[0]), w); });
  run("concat", {in.uniform({2, 3, 2}), in.uniform({2, 3, 3})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, concat<double>({x[0], x[1]}, 2), w); });
  run("sum_axes", {in.uniform({3, 4, 2})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, sum(x[0], {0, 2}), w); });
  run("mean_axes", {in.uniform({3, 4, 2})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, mean(x[0], {1}), w); });
  run("matmul", {in.uniform({3, 4}), in.uniform({4, 2})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, matmul(x[0], x[1]), w); });
  run("softmax_rows", {in.uniform({4, 5}, -2, 2)},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, softmax_rows(x[0]), w); });
  run("conv2d_pad1", {in.uniform({5, 6, 3}), in.uniform({3, 3, 3, 4})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, conv2d(x[0], x[1], 1, 1), w); });
  run("conv2d_stride2", {in.uniform({7, 7, 2}), in.uniform({3, 3, 2, 3})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, conv2d(x[0], x[1], 2, 0), w); });
  {
    const auto seg = in.labels(12, 4);
    run("segment_mean", {in.uniform({12, 3})},
        [&, seg](Tape<double>& t, const std::vector<V>& x) { return weighted(t, segment_mean(x[0], seg, 5), w); });
    run("segment_max", {in.uniform({12, 3})},
        [&, seg](Tape<double>& t, const std::vector<V>& x) { return weighted(t, segment_max(x[0], seg, 5), w); });
    run("gather_rows", {in.uniform({5, 3})},
        [&, seg](Tape<double>& t, const std::vector<V>& x) { return weighted(t, gather_rows(x[0], seg), w); });
    run("softmax_cross_entropy", {in.uniform({12, 4}, -2, 2)},
        [&, seg](Tape<double>&, const std::vector<V>& x) { return softmax_cross_entropy(x[0], seg); });
    run("cross_entropy", {in.uniform({12, 4}, -2, 2)},
        [&, seg](Tape<double>&, const std::vector<V>& x) { return cross_entropy(softmax_rows(x[0]), seg); });
  }
  run("pointwise_conv", {in.uniform({3, 4, 5}), in.uniform({1, 1, 5, 2})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, pointwise_conv(x[0], x[1]), w); });
  run("softmax_channels", {in.uniform({3, 3, 4}, -2, 2)},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, softmax_channels(x[0]), w); });

  // pyramid stages on a fixed taxonomy and fixed masks
  const Taxonomy tax = builtin_taxonomy("A");
  const Index H = 6, W = 6, C = 4;
  LabelMap fine(H, W);
  {
    const auto l = in.labels(static_cast<std::size_t>(H * W), tax.classes(3) - 1);
    for (Index p = 0; p < H * W; ++p) fine[p] = l[static_cast<std::size_t>(p)];  // class 6 left empty
  }
  const CategoryMasks masks = masks_from_labels(fine, tax, 3);
  for (Pooling pooling : {Pooling::kBoth, Pooling::kAverage, Pooling::kMax}) {
    const char* tag = pooling == Pooling::kBoth ? "both" : pooling == Pooling::kAverage ? "average" : "max";
    run(std::string("gpm_aggregate_") + tag, {in.uniform({H, W, C})},
        [&, pooling](Tape<double>& t, const std::vector<V>& x) {
          return weighted(t, aggregate(x[0], masks, pooling).features, w);
        });
  }
  for (bool fresh : {false, true}) {
    const Index cl = 2 * C, b = bottleneck_width(cl);
    std::vector<T> inputs{in.uniform({tax.classes(3), cl})};
    const int sets = fresh ? 3 : 1;
    for (int s = 0; s < 2 * sets; ++s) inputs.push_back(in.uniform({cl, b}));
    run(fresh ? "gpm_reason_fresh" : "gpm_reason", inputs, [&, sets](Tape<double>& t, const std::vector<V>& x) {
      GpmLevelParams<double> p;
      for (int s = 0; s < sets; ++s) {
        p.q1.push_back(x[static_cast<std::size_t>(1 + 2 * s)]);
        p.q2.push_back(x[static_cast<std::size_t>(2 + 2 * s)]);
      }
      return weighted(t, reason(x[0], p, 3), w);
    });
  }
  run("gpm_distribute", {in.uniform({H, W, C}), in.uniform({tax.classes(3), 2 * C}), in.uniform({2 * C, C})},
      [&](Tape<double>& t, const std::vector<V>& x) { return weighted(t, distribute(x[0], x[1], x[2], masks), w); });

  // pyramid and full objective: parameters are the inputs
  ModelConfig config;
  config.in_channels = 4;
  config.hidden_widths = {6, 6};
  config.feature_channels = C;
  const auto specs = model_param_specs(config, tax.classes(3));
  std::mt19937_64 init(seed + 11);
  std::vector<T> params;
  for (const auto& s : specs) {
    T v = initial_value<double>(s, init);
    if (s.init == ParamSpec::Init::kZero) v = in.uniform(s.shape, -0.1, 0.1);
    params.push_back(v);
  }
  auto source_of = [&specs](const std::vector<V>& x, std::size_t offset) {
    return ParamSource<double>([&specs, x, offset](const std::string& n) {
      for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].name == n) return x[i + offset];
      }
      throw std::out_of_range("gradcheck: no parameter " + n);
    });
  };
  {
    std::vector<T> inputs{in.uniform({H, W, C})};
    inputs.insert(inputs.end(), params.begin(), params.end());
    const T y = softmax_rows_value(in.uniform({H * W, tax.classes(3)}, -2, 2)).reshaped({H, W, tax.classes(3)});
    run("gpm_pyramid_forward", inputs, [&, y](Tape<double>& t, const std::vector<V>& x) {
      return weighted(t, pyramid_forward(x[0], y, tax, source_of(x, 1), config.gpm).y_hat, w);
    });
  }
  {
    const Index S = 8;
    const T image = in.uniform({S, S, 4}, 0, 1);
    LabelMap q(S, S);
    const auto l = in.labels(static_cast<std::size_t>(S * S), tax.classes(3));
    for (Index p = 0; p < S * S; ++p) q[p] = l[static_cast<std::size_t>(p)];
    for (double lambda : {1.0, 0.5}) {
      ModelConfig c = config;
      c.lambda = lambda;
      run(lambda == 1.0 ? "loss_eq10" : "loss_eq10_lambda0.5", params,
          [&, image, q, c](Tape<double>& t, const std::vector<V>& x) {
            const auto r = forward(t.constant(image), source_of(x, 0), c, tax, &q);
            return loss(r, q, c.lambda).total;
          });
    }
  }
  return out;
}

}  // namespace grapy
