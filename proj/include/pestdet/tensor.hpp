#ifndef PESTDET_TENSOR_HPP
#define PESTDET_TENSOR_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "pestdet/errors.hpp"

namespace pestdet {

using Shape = std::vector<int>;

inline Eigen::Index shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1},
                         std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowMatMap = Eigen::Map<RowMat<Scalar>>;

template <typename Scalar>
using ConstRowMatMap = Eigen::Map<const RowMat<Scalar>>;

/// Dense row-major N-d array. Image-like tensors are channels-first [C,H,W].
template <typename Scalar>
class Tensor {
 public:
  using Vector = Vec<Scalar>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    values_ = Vector::Zero(shape_product(shape_));
  }

  Tensor(Shape shape, Vector values) : shape_(std::move(shape)), values_(std::move(values)) {
    validate_shape();
    if (values_.size() != shape_product(shape_)) {
      throw DimensionError("tensor of shape " + shape_string(shape_) + " needs " +
                           std::to_string(shape_product(shape_)) + " values, got " +
                           std::to_string(values_.size()));
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Eigen::Map<const Vector>(values.begin(),
                                                          static_cast<Eigen::Index>(values.size()))) {}

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.values_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  Eigen::Index size() const { return values_.size(); }
  bool empty() const { return shape_.empty(); }

  const Vector& values() const { return values_; }
  Vector& values() { return values_; }
  const Scalar* data() const { return values_.data(); }
  Scalar* data() { return values_.data(); }

  Scalar operator[](Eigen::Index i) const { return values_[i]; }
  Scalar& operator[](Eigen::Index i) { return values_[i]; }

  Scalar at(int c, int y, int x) const { return values_[index3(c, y, x)]; }
  Scalar& at(int c, int y, int x) { return values_[index3(c, y, x)]; }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>());
  }

  bool all_finite() const { return values_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void validate_shape() const {
    for (int d : shape_) {
      if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Eigen::Index index3(int c, int y, int x) const {
    return (static_cast<Eigen::Index>(c) * shape_[1] + y) * shape_[2] + x;
  }

  Shape shape_;
  Vector values_;
};

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const char* where) {
  if (!t.all_finite()) throw NonFiniteError(std::string(where) + " produced a non-finite value");
}

template <typename Scalar>
void require_rank(const Tensor<Scalar>& t, std::size_t rank, const char* where) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(where) + ": expected rank " + std::to_string(rank) +
                         " tensor, got shape " + shape_string(t.shape()));
  }
}

}  // namespace pestdet

#endif  // PESTDET_TENSOR_HPP
