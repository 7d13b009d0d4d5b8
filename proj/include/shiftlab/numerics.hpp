#pragma once

#include <cstddef>
#include <vector>

#include "shiftlab/matrix.hpp"

namespace shiftlab {

// Probabilities are floored at this value before every log so degenerate
// softmax outputs never produce infinite losses.
constexpr double kProbFloor = 1e-12;
// Tolerance for "sums to one" validation on probability vectors.
constexpr double kProbTol = 1e-9;

double safe_log(double p);

// Shift-invariant softmax (max is subtracted before exponentiation).
std::vector<double> softmax(const std::vector<double>& logits);
Matrix row_softmax(const Matrix& logits);

// H(p) = -sum p log p with 0 log 0 = 0. p must be a valid distribution.
double entropy(const std::vector<double>& p);

// -log p[label] with the probability floor applied.
double cross_entropy(const std::vector<double>& p, std::size_t label);

void validate_distribution(const std::vector<double>& p);

// Vector-Jacobian product of softmax: given p = softmax(z) and dL/dp,
// returns dL/dz with (dz)_j = p_j (dp_j - sum_k p_k dp_k).
std::vector<double> softmax_vjp(const std::vector<double>& p,
                                const std::vector<double>& dp);

// d/dz cross_entropy(softmax(z), label) = p - onehot(label).
std::vector<double> ce_grad_logits(const std::vector<double>& p,
                                   std::size_t label);

// d/dp entropy(p) = -(log p + 1) elementwise (floored log).
std::vector<double> entropy_grad_probs(const std::vector<double>& p);

// d/dz entropy(softmax(z)) = -p .* (log p + H(p)).
std::vector<double> entropy_grad_logits(const std::vector<double>& p);

// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax_index(const std::vector<double>& v);

}  // namespace shiftlab
