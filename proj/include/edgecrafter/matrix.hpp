// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "edgecrafter/tensor.hpp"

namespace ec {

/// Dense row-major double matrix for losses, costs and optimizer state.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::size_t size() const { return values.size(); }

  static Matrix from_tensor(const Tensor& t);
  Tensor to_tensor() const;
};

inline Matrix Matrix::from_tensor(const Tensor& t) {
  require_rank(t, 2, "matrix");
  Matrix m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = t[i];
  return m;
}

inline Tensor Matrix::to_tensor() const {
  std::vector<float> v(values.begin(), values.end());
  return Tensor({rows, cols}, std::move(v));
}

}  // namespace ec
