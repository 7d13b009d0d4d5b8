#pragma once

#include <cstddef>
#include <vector>

#include "shiftlab/linear.hpp"
#include "shiftlab/matrix.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

// Linear probe from features to latent-domain logits. Source samples use the
// first k_s logits, target samples the remaining k_t; the heads share the
// feature input but occupy disjoint output slices.
struct DomainBranch {
  LinearModel head;
  std::size_t k_s = 1;
  std::size_t k_t = 0;
};

struct LatentConfig {
  std::size_t k_s = 2;
  std::size_t k_t = 1;
  double lambda_c = 0.1;
  double lambda_e = 0.1;
  double lambda_b = 0.1;
  double lambda_d = 0.5;
};

DomainBranch make_domain_branch(std::size_t feature_dim, std::size_t k_s,
                                std::size_t k_t, RngStream& rng,
                                double scale = 0.1);

// Row-stochastic assignment probabilities over the source (target=false) or
// target (target=true) latent domains.
Matrix branch_assignments(const DomainBranch& branch, const Matrix& x,
                          bool target);

// mean CE over labeled source rows + lambda_c * mean entropy over target rows.
double classification_loss(const Matrix& source_probs,
                           const std::vector<std::size_t>& source_labels,
                           const Matrix& target_probs, double lambda_c);

// Domain-prediction loss. domain_labels aligns with source rows; -1 marks an
// unlabeled sample. Terms (empty subsets contribute 0):
//   + lambda_d * mean_{labeled} CE(row, label)
//   - lambda_b * H(mean source row) + lambda_e * mean_{unlabeled} H(row)
//   - lambda_b * H(mean target row) + lambda_e * mean H(target row)
double domain_loss(const Matrix& source_assign, const Matrix& target_assign,
                   const std::vector<int>& domain_labels,
                   const LatentConfig& cfg);

struct DomainLossGrads {
  Matrix dsource;  // dL/d(source assignment probabilities)
  Matrix dtarget;  // dL/d(target assignment probabilities)
};

DomainLossGrads domain_loss_grad(const Matrix& source_assign,
                                 const Matrix& target_assign,
                                 const std::vector<int>& domain_labels,
                                 const LatentConfig& cfg);

// mean over the batch of CE(class) + lambda * CE(domain).
double wbn_loss(const Matrix& class_probs,
                const std::vector<std::size_t>& class_labels,
                const Matrix& domain_probs,
                const std::vector<std::size_t>& domain_labels, double lambda);

// (1-alpha) sum_j w_j f_j + (alpha/k) sum_j f_j over per-source class
// distributions (rows of scores).
std::vector<double> bsf_predict(const Matrix& scores,
                                const std::vector<double>& w, double alpha);

// With probability alpha returns the uniform vector over k sources, otherwise
// a one-hot at the true domain.
std::vector<double> bsf_train_weights(std::size_t domain, std::size_t k,
                                      double alpha, RngStream& rng);

}  // namespace shiftlab
