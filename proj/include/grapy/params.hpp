#ifndef GRAPY_PARAMS_HPP
#define GRAPY_PARAMS_HPP

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "grapy/autodiff.hpp"
#include "grapy/tensor.hpp"

namespace grapy {

template <typename Scalar>
using GradMap = std::map<std::string, Tensor<Scalar>>;

// Named parameter tensors, iterated in name order.
template <typename Scalar>
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor<Scalar>>;

  void add(const std::string& name, Tensor<Scalar> value) {
    if (!value.all_finite()) throw NumericError("parameter " + name + " is not finite");
    if (!values_.emplace(name, std::move(value)).second) {
      throw std::invalid_argument("duplicate parameter name " + name);
    }
  }

  bool contains(const std::string& name) const { return values_.count(name) > 0; }

  Tensor<Scalar>& at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }
  const Tensor<Scalar>& at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : values_) out.push_back(name);
    return out;
  }

  std::size_t size() const { return values_.size(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }
  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.values_ == b.values_;
  }

 private:
  Map values_;
};

// Uniform in [-bound, bound].
template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  return Tensor<Scalar>::generate(std::move(shape), [&] { return static_cast<Scalar>(dist(rng)); });
}

// Places store entries on a tape on first use. Names the predicate rejects become
// constants, so no gradient is collected for them.
template <typename Scalar>
class ParamBinder {
 public:
  using Trainable = std::function<bool(const std::string&)>;

  ParamBinder(Tape<Scalar>& tape, const ParamStore<Scalar>& store, Trainable trainable = nullptr)
      : tape_(&tape), store_(&store), trainable_(std::move(trainable)) {}

  Var<Scalar> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const bool train = !trainable_ || trainable_(name);
    Var<Scalar> v = tape_->leaf(store_->at(name), train);
    bound_.emplace(name, v);
    return v;
  }

  Tape<Scalar>& tape() { return *tape_; }

  // Gradients of every trainable parameter bound so far (zeros when none reached it).
  GradMap<Scalar> grads() const {
    GradMap<Scalar> out;
    for (const auto& [name, v] : bound_) {
      if (v.requires_grad()) out.emplace(name, v.grad());
    }
    return out;
  }

 private:
  Tape<Scalar>* tape_;
  const ParamStore<Scalar>* store_;
  Trainable trainable_;
  std::map<std::string, Var<Scalar>> bound_;
};

template <typename Scalar>
double global_norm(const GradMap<Scalar>& grads) {
  double sq = 0;
  for (const auto& [_, g] : grads) sq += static_cast<double>(g.array().square().sum());
  return std::sqrt(sq);
}

// SGD with heavy-ball momentum: buf = momentum * buf + g; p -= lr * buf.
// With clip_norm > 0 the gradients are first rescaled so their global norm is at most clip_norm.
template <typename Scalar>
class Sgd {
 public:
  explicit Sgd(Scalar momentum = Scalar(0.9), double clip_norm = 0)
      : momentum_(momentum), clip_norm_(clip_norm) {}

  void step(ParamStore<Scalar>& params, const GradMap<Scalar>& raw, Scalar lr) {
    const GradMap<Scalar>* use = &raw;
    GradMap<Scalar> clipped;
    if (clip_norm_ > 0) {
      const double norm = global_norm(raw);
      if (norm > clip_norm_) {
        clipped = raw;
        const auto f = static_cast<Scalar>(clip_norm_ / norm);
        for (auto& [_, g] : clipped) g.array() *= f;
        use = &clipped;
      }
    }
    for (const auto& [name, g] : *use) {
      Tensor<Scalar>& p = params.at(name);
      if (p.shape() != g.shape()) {
        throw ShapeError("sgd: gradient for " + name + " has shape " + shape_string(g.shape()) +
                         ", parameter has " + shape_string(p.shape()));
      }
      if (momentum_ == Scalar(0)) {
        p.array() -= lr * g.array();
        continue;
      }
      auto [it, fresh] = buffers_.try_emplace(name, g);
      if (!fresh) it->second.array() = momentum_ * it->second.array() + g.array();
      p.array() -= lr * it->second.array();
    }
  }

  Scalar momentum() const { return momentum_; }
  double clip_norm() const { return clip_norm_; }
  const std::map<std::string, Tensor<Scalar>>& buffers() const { return buffers_; }

 private:
  Scalar momentum_;
  double clip_norm_;
  std::map<std::string, Tensor<Scalar>> buffers_;
};

template <typename Scalar>
void sgd_step(ParamStore<Scalar>& params, const GradMap<Scalar>& grads, Scalar lr) {
  Sgd<Scalar>(Scalar(0)).step(params, grads, lr);
}

}  // namespace grapy

#endif  // GRAPY_PARAMS_HPP
