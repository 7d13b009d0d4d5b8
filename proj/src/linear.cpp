#include "shiftlab/linear.hpp"

#include <stdexcept>

namespace shiftlab {

LinearModel make_linear(std::size_t out, std::size_t in, RngStream& rng,
                        double scale) {
  LinearModel m;
  m.W = Matrix(out, in);
  m.b.assign(out, 0.0);
  for (double& w : m.W.data) w = rng.next_uniform(-scale, scale);
  return m;
}

std::vector<double> linear_forward(const LinearModel& m,
                                   const std::vector<double>& x) {
  std::vector<double> y = matvec(m.W, x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += m.b[i];
  return y;
}

Matrix linear_forward(const LinearModel& m, const Matrix& x) {
  Matrix out(x.rows, m.W.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out.set_row(i, linear_forward(m, x.row(i)));
  return out;
}

LinearGrads zero_grads(const LinearModel& m) {
  return LinearGrads{Matrix(m.W.rows, m.W.cols), std::vector<double>(m.b.size(), 0.0)};
}

std::vector<double> linear_backward(const LinearModel& m,
                                    const std::vector<double>& x,
                                    const std::vector<double>& dlogits,
                                    LinearGrads& acc) {
  if (dlogits.size() != m.W.rows || x.size() != m.W.cols)
    throw std::invalid_argument("linear_backward: shape mismatch");
  for (std::size_t i = 0; i < m.W.rows; ++i) {
    acc.db[i] += dlogits[i];
    for (std::size_t j = 0; j < m.W.cols; ++j)
      acc.dW.at(i, j) += dlogits[i] * x[j];
  }
  std::vector<double> dx(m.W.cols, 0.0);
  for (std::size_t j = 0; j < m.W.cols; ++j) {
    double acc_dx = 0.0;
    for (std::size_t i = 0; i < m.W.rows; ++i) acc_dx += m.W.at(i, j) * dlogits[i];
    dx[j] = acc_dx;
  }
  return dx;
}

}  // namespace shiftlab
