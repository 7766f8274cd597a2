#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "adva/error.hpp"

namespace adva {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

/// Dense n-dimensional array of doubles. Participates in graph evaluation as
/// an input or constant; `grad` is filled by callers that want to keep the
/// gradient next to the parameter it belongs to.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  Tensor() = default;

  Tensor(Shape s, std::vector<double> v, bool rg = false)
      : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
    validate();
  }

  static Tensor zeros(Shape s) {
    std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape s, double v) {
    std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  void validate() const {
    require(!shape.empty(), "tensor: shape must be non-empty");
    for (std::size_t d : shape) require(d > 0, "tensor: all dimensions must be positive");
    require(shape_numel(shape) == values.size(),
            "tensor: shape " + shape_str(shape) + " does not match " +
                std::to_string(values.size()) + " values");
    if (grad) require(grad->size() == values.size(), "tensor: grad length mismatch");
  }

  std::size_t numel() const { return values.size(); }
  bool is_scalar() const { return values.size() == 1; }
  bool is_matrix() const { return shape.size() == 2; }

  std::size_t rows() const {
    require(is_matrix(), "tensor: rows() on non-matrix shape " + shape_str(shape));
    return shape[0];
  }
  std::size_t cols() const {
    require(is_matrix(), "tensor: cols() on non-matrix shape " + shape_str(shape));
    return shape[1];
  }

  double& at(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * shape[1] + j]; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_values(const Tensor& o) const { return shape == o.shape && values == o.values; }

  Tensor with_grad(bool rg) const {
    Tensor t = *this;
    t.requires_grad = rg;
    return t;
  }
};

/// One-hot encoding, rows indexed by sample. Labels must lie in [0, k).
Tensor one_hot(const std::vector<int>& labels, std::size_t k);

/// Row-stack of two matrices with equal column counts.
Tensor vstack(const Tensor& a, const Tensor& b);

/// Rows [begin, end) of a matrix.
Tensor take_rows(const Tensor& m, std::size_t begin, std::size_t end);

/// Rows of `m` selected by index list, in the order given.
Tensor gather_rows(const Tensor& m, const std::vector<std::size_t>& idx);

/// FNV-1a over the raw bytes of the values; used for purity checks.
std::uint64_t value_hash(const Tensor& t);

}  // namespace adva
