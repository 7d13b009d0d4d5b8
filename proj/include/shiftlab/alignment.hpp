#pragma once

#include <cstddef>
#include <vector>

#include "shiftlab/matrix.hpp"

namespace shiftlab {

inline constexpr double kBnEps = 1e-5;

// Running/layer normalization state for one feature block. gamma/beta are
// shared across domains here; only the graph module keeps per-node affine
// parameters.
struct BNState {
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> gamma;
  std::vector<double> beta;
  double count = 0.0;
  double eps = kBnEps;
};

BNState make_bn_state(std::size_t dim);

// Checks that w is a valid sample-to-domain assignment: entries in [0,1],
// rows summing to 1 within 1e-9. The mda_* evaluations themselves accept any
// nonnegative weights (they are well-defined without row normalization, which
// the finite-difference oracle relies on), so validation is the caller's call.
void validate_assignment(const Matrix& w);

// Per-domain batch statistics. carried[d] = 1 when domain d had zero total
// weight and kept its previous statistics instead of batch estimates.
struct DomainStats {
  Matrix mean;  // [domains x features]
  Matrix var;   // [domains x features]
  std::vector<char> carried;
};

// y = gamma * (x - mean) / sqrt(var + eps) + beta, rowwise over the batch.
Matrix da_normalize(const Matrix& x, const BNState& s);

// Weighted ML estimates: mu_d = sum_i wn[i,d] x_i,
// var_d = sum_i wn[i,d] (x_i - mu_d)^2 with wn[i,d] = w[i,d] / sum_j w[j,d].
// The two-argument form rejects empty domains; the three-argument form keeps
// prev's statistics for them and flags the domain in `carried`.
DomainStats mda_statistics(const Matrix& x, const Matrix& w);
DomainStats mda_statistics(const Matrix& x, const Matrix& w,
                           const DomainStats& prev);

// y_i = gamma * sum_d w[i,d] * (x_i - mu_d) / sqrt(var_d + eps) + beta
Matrix mda_forward(const Matrix& x, const Matrix& w, const DomainStats& stats,
                   const std::vector<double>& gamma,
                   const std::vector<double>& beta, double eps = kBnEps);

struct MdaGrads {
  Matrix dx;  // [batch x features]
  Matrix dw;  // [batch x domains]
  std::vector<double> dgamma;
  std::vector<double> dbeta;
};

// Analytic gradients of the weighted forward pass, statistics included:
//   dL/dx_i  = sum_d w[i,d]/sqrt(var_d+eps) * (g_i - A_d - xhat_{i,d} B_d)
//   dL/dw_id = xhat_{i,d} (g_i - A_d) - 0.5 (xhat_{i,d}^2 - var_d/(var_d+eps)) B_d
// with g = gamma .* dL/dy, A_d = sum_i wn[i,d] g_i, B_d = sum_i wn[i,d] xhat g.
// Domains with zero total weight use constant (carried) statistics, so only
// the direct mixture term survives for them.
MdaGrads mda_backward(const Matrix& x, const Matrix& w,
                      const DomainStats& stats,
                      const std::vector<double>& gamma,
                      const std::vector<double>& beta, double eps,
                      const Matrix& dy);

// Soft combination of per-domain normalizations for a single sample:
// y = gamma * sum_j weights[j] * (x - mu_j)/sqrt(var_j + eps) + beta.
// gamma/beta/eps are read from states[0] (shared across domains).
std::vector<double> wbn_forward(const std::vector<double>& x,
                                const std::vector<double>& weights,
                                const std::vector<BNState>& states);

// mu <- (1-m) mu + m mu_batch; var <- (1-m) var + m var_batch; count += 1.
BNState running_update(const BNState& s, const std::vector<double>& batch_mean,
                       const std::vector<double>& batch_var, double m);

}  // namespace shiftlab
