#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace shiftlab {

// Row-major dense matrix of 64-bit reals. Small and deliberately simple:
// every algorithm in this library works on batches of a few dozen rows.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0);
  Matrix(std::size_t r, std::size_t c, std::initializer_list<double> values);

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::vector<double> row(std::size_t i) const;
  void set_row(std::size_t i, const std::vector<double>& values);
  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

Matrix from_rows(const std::vector<std::vector<double>>& rows);

bool all_finite(const Matrix& m);
bool all_finite(const std::vector<double>& v);

// y = M x
std::vector<double> matvec(const Matrix& m, const std::vector<double>& x);
// C = A B
Matrix matmul(const Matrix& a, const Matrix& b);

double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace shiftlab
