#ifndef GRAPY_TENSOR_HPP
#define GRAPY_TENSOR_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace grapy {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

// Dense row-major n-d array (last axis fastest). Rank 0 is a scalar.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    values_ = Storage::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Storage values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents();
    if (values_.size() != shape_size(shape_)) {
      throw ShapeError("tensor of shape " + shape_string(shape_) + " given " +
                       std::to_string(values_.size()) + " values");
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Storage::Map(values.begin(), static_cast<Index>(values.size()))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.values_.setConstant(v);
    return t;
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{}, {v}); }

  template <typename Generator>
  static Tensor generate(Shape shape, Generator&& gen) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t.values_[i] = gen();
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index extent(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return values_.size(); }

  Storage& array() { return values_; }
  const Storage& array() const { return values_; }
  std::span<Scalar> span() { return {values_.data(), static_cast<std::size_t>(values_.size())}; }
  std::span<const Scalar> span() const {
    return {values_.data(), static_cast<std::size_t>(values_.size())};
  }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  Scalar& operator()(Index i, Index j) { return values_[i * shape_[1] + j]; }
  Scalar operator()(Index i, Index j) const { return values_[i * shape_[1] + j]; }
  Scalar& operator()(Index i, Index j, Index k) {
    return values_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Scalar operator()(Index i, Index j, Index k) const {
    return values_[(i * shape_[1] + j) * shape_[2] + k];
  }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return values_[0];
  }

  // Row-major view that folds every leading axis into rows.
  MatrixMap<Scalar> matrix() { return MatrixMap<Scalar>(values_.data(), rows(), cols()); }
  ConstMatrixMap<Scalar> matrix() const {
    return ConstMatrixMap<Scalar>(values_.data(), rows(), cols());
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), values_);
  }

  bool all_finite() const { return values_.isFinite().all(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.values_ == b.values_).all();
  }

 private:
  Index rows() const { return shape_.empty() ? 1 : size() / shape_.back(); }
  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }

  void check_extents() const {
    for (Index e : shape_) {
      if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  Storage values_;
};

template <typename Scalar>
Tensor<Scalar> zeros_like(const Tensor<Scalar>& t) {
  return Tensor<Scalar>::zeros(t.shape());
}

template <typename Scalar>
Tensor<Scalar> ones_like(const Tensor<Scalar>& t) {
  return Tensor<Scalar>::ones(t.shape());
}

}  // namespace grapy

#endif  // GRAPY_TENSOR_HPP
