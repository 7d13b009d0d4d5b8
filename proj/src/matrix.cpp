#include "shiftlab/matrix.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace shiftlab {

Matrix::Matrix(std::size_t r, std::size_t c, double fill)
    : rows(r), cols(c), data(r * c, fill) {}

Matrix::Matrix(std::size_t r, std::size_t c, std::initializer_list<double> values)
    : rows(r), cols(c), data(values) {
  if (data.size() != r * c)
    throw std::invalid_argument("Matrix: initializer size does not match shape");
}

std::vector<double> Matrix::row(std::size_t i) const {
  return std::vector<double>(data.begin() + static_cast<long>(i * cols),
                             data.begin() + static_cast<long>((i + 1) * cols));
}

void Matrix::set_row(std::size_t i, const std::vector<double>& values) {
  if (values.size() != cols)
    throw std::invalid_argument("Matrix::set_row: width mismatch");
  for (std::size_t j = 0; j < cols; ++j) at(i, j) = values[j];
}

Matrix from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix();
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.set_row(i, rows[i]);
  return m;
}

bool all_finite(const Matrix& m) { return all_finite(m.data); }

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

std::vector<double> matvec(const Matrix& m, const std::vector<double>& x) {
  if (x.size() != m.cols) throw std::invalid_argument("matvec: shape mismatch");
  std::vector<double> y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) acc += m.at(i, j) * x[j];
    y[i] = acc;
  }
  return y;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) c.at(i, j) += aik * b.at(k, j);
    }
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  return max_abs_diff(a.data, b.data);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace shiftlab
