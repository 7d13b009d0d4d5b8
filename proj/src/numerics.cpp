#include "shiftlab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace shiftlab {

double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

std::vector<double> softmax(const std::vector<double>& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  if (!all_finite(logits)) throw std::invalid_argument("softmax: non-finite input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

Matrix row_softmax(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) p.set_row(i, softmax(logits.row(i)));
  return p;
}

void validate_distribution(const std::vector<double>& p) {
  if (p.empty()) throw std::invalid_argument("distribution: empty");
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("distribution: negative entry");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > kProbTol)
    throw std::invalid_argument("distribution: does not sum to one");
}

double entropy(const std::vector<double>& p) {
  validate_distribution(p);
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double cross_entropy(const std::vector<double>& p, std::size_t label) {
  validate_distribution(p);
  if (label >= p.size()) throw std::invalid_argument("cross_entropy: label out of range");
  return -safe_log(p[label]);
}

std::vector<double> softmax_vjp(const std::vector<double>& p,
                                const std::vector<double>& dp) {
  if (p.size() != dp.size())
    throw std::invalid_argument("softmax_vjp: size mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * dp[i];
  std::vector<double> dz(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (dp[i] - dot);
  return dz;
}

std::vector<double> ce_grad_logits(const std::vector<double>& p,
                                   std::size_t label) {
  if (label >= p.size())
    throw std::invalid_argument("ce_grad_logits: label out of range");
  std::vector<double> g = p;
  g[label] -= 1.0;
  return g;
}

std::vector<double> entropy_grad_probs(const std::vector<double>& p) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = -(safe_log(p[i]) + 1.0);
  return g;
}

std::vector<double> entropy_grad_logits(const std::vector<double>& p) {
  return softmax_vjp(p, entropy_grad_probs(p));
}

std::size_t argmax_index(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("argmax_index: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace shiftlab
