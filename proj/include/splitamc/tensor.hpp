#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "splitamc/types.hpp"

namespace splitamc {

/// Dense row-major tensor: a shape plus a flat Eigen vector of values.
template <typename Scalar>
struct BasicTensor {
  std::vector<Index> shape;
  Vec<Scalar> values;

  BasicTensor() = default;

  explicit BasicTensor(std::vector<Index> shape_)
      : shape(std::move(shape_)), values(Vec<Scalar>::Zero(count(shape))) {}

  BasicTensor(std::vector<Index> shape_, Vec<Scalar> values_) : shape(std::move(shape_)), values(std::move(values_)) {
    if (count(shape) != values.size()) throw ShapeMismatch("tensor shape does not match value count");
  }

  static Index count(const std::vector<Index>& s) {
    return std::accumulate(s.begin(), s.end(), Index{1}, std::multiplies<>());
  }

  Index numel() const { return values.size(); }
  Index dim(std::size_t axis) const { return shape.at(axis); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  bool empty() const { return shape.empty(); }

  Scalar* data() { return values.data(); }
  const Scalar* data() const { return values.data(); }

  /// View a rank>=2 tensor as [dim0, rest] without copying.
  Eigen::Map<RowMat<Scalar>> as_rows() { return {values.data(), shape.at(0), numel() / shape.at(0)}; }
  Eigen::Map<const RowMat<Scalar>> as_rows() const { return {values.data(), shape.at(0), numel() / shape.at(0)}; }

  bool all_finite() const { return values.allFinite(); }
};

using Tensor = BasicTensor<double>;

/// Concatenates tensors along axis 0. Trailing dimensions must agree.
template <typename Scalar>
BasicTensor<Scalar> concat_batch(std::span<const BasicTensor<Scalar>> parts) {
  if (parts.empty()) return {};
  std::vector<Index> shape = parts.front().shape;
  Index rows = 0;
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<Index>(shape.size()) ||
        !std::equal(shape.begin() + 1, shape.end(), p.shape.begin() + 1))
      throw ShapeMismatch("concat_batch: trailing dimensions differ");
    rows += p.dim(0);
    total += p.numel();
  }
  shape[0] = rows;
  Vec<Scalar> values(total);
  Index at = 0;
  for (const auto& p : parts) {
    values.segment(at, p.numel()) = p.values;
    at += p.numel();
  }
  return {std::move(shape), std::move(values)};
}

}  // namespace splitamc
