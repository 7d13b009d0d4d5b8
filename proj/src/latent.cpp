#include "shiftlab/latent.hpp"

#include <cmath>
#include <stdexcept>

#include "shiftlab/numerics.hpp"

namespace shiftlab {

namespace {

void check_rows_labels(const Matrix& probs, std::size_t labels,
                       const char* what) {
  if (probs.rows != labels)
    throw std::invalid_argument(std::string(what) + ": label count mismatch");
}

std::vector<double> mean_row(const Matrix& probs) {
  std::vector<double> m(probs.cols, 0.0);
  for (std::size_t i = 0; i < probs.rows; ++i)
    for (std::size_t j = 0; j < probs.cols; ++j)
      m[j] += probs.at(i, j) / static_cast<double>(probs.rows);
  return m;
}

}  // namespace

DomainBranch make_domain_branch(std::size_t feature_dim, std::size_t k_s,
                                std::size_t k_t, RngStream& rng,
                                double scale) {
  if (k_s < 1) throw std::invalid_argument("domain branch: k_s must be >= 1");
  DomainBranch br;
  br.k_s = k_s;
  br.k_t = k_t;
  br.head = make_linear(k_s + k_t, feature_dim, rng, scale);
  return br;
}

Matrix branch_assignments(const DomainBranch& branch, const Matrix& x,
                          bool target) {
  const std::size_t offset = target ? branch.k_s : 0;
  const std::size_t width = target ? branch.k_t : branch.k_s;
  if (width == 0)
    throw std::invalid_argument("branch_assignments: no latent domains");
  Matrix out(x.rows, width);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto logits = linear_forward(branch.head, x.row(i));
    std::vector<double> slice(logits.begin() + offset,
                              logits.begin() + offset + width);
    out.set_row(i, softmax(slice));
  }
  return out;
}

double classification_loss(const Matrix& source_probs,
                           const std::vector<std::size_t>& source_labels,
                           const Matrix& target_probs, double lambda_c) {
  if (source_probs.rows == 0)
    throw std::invalid_argument("classification_loss: empty source set");
  check_rows_labels(source_probs, source_labels.size(), "classification_loss");
  double loss = 0.0;
  for (std::size_t i = 0; i < source_probs.rows; ++i)
    loss += cross_entropy(source_probs.row(i), source_labels[i]) /
            static_cast<double>(source_probs.rows);
  if (target_probs.rows > 0) {
    double h = 0.0;
    for (std::size_t i = 0; i < target_probs.rows; ++i)
      h += entropy(target_probs.row(i)) /
           static_cast<double>(target_probs.rows);
    loss += lambda_c * h;
  }
  return loss;
}

double domain_loss(const Matrix& source_assign, const Matrix& target_assign,
                   const std::vector<int>& domain_labels,
                   const LatentConfig& cfg) {
  check_rows_labels(source_assign, domain_labels.size(), "domain_loss");
  double loss = 0.0;

  if (source_assign.rows > 0) {
    std::size_t labeled = 0, unlabeled = 0;
    for (int d : domain_labels) (d >= 0 ? labeled : unlabeled) += 1;
    double ce = 0.0, h = 0.0;
    for (std::size_t i = 0; i < source_assign.rows; ++i) {
      const auto row = source_assign.row(i);
      if (domain_labels[i] >= 0)
        ce += cross_entropy(row, static_cast<std::size_t>(domain_labels[i]));
      else
        h += entropy(row);
    }
    if (labeled > 0) loss += cfg.lambda_d * ce / static_cast<double>(labeled);
    if (unlabeled > 0)
      loss += cfg.lambda_e * h / static_cast<double>(unlabeled);
    loss -= cfg.lambda_b * entropy(mean_row(source_assign));
  }

  if (target_assign.rows > 0) {
    double h = 0.0;
    for (std::size_t i = 0; i < target_assign.rows; ++i)
      h += entropy(target_assign.row(i)) /
           static_cast<double>(target_assign.rows);
    loss += cfg.lambda_e * h;
    loss -= cfg.lambda_b * entropy(mean_row(target_assign));
  }
  return loss;
}

DomainLossGrads domain_loss_grad(const Matrix& source_assign,
                                 const Matrix& target_assign,
                                 const std::vector<int>& domain_labels,
                                 const LatentConfig& cfg) {
  check_rows_labels(source_assign, domain_labels.size(), "domain_loss_grad");
  DomainLossGrads g;
  g.dsource = Matrix(source_assign.rows, source_assign.cols);
  g.dtarget = Matrix(target_assign.rows, target_assign.cols);

  if (source_assign.rows > 0) {
    std::size_t labeled = 0, unlabeled = 0;
    for (int d : domain_labels) (d >= 0 ? labeled : unlabeled) += 1;
    const auto mean = mean_row(source_assign);
    const auto dmean = entropy_grad_probs(mean);
    const double n = static_cast<double>(source_assign.rows);
    for (std::size_t i = 0; i < source_assign.rows; ++i) {
      const auto row = source_assign.row(i);
      for (std::size_t j = 0; j < source_assign.cols; ++j)
        g.dsource.at(i, j) = -cfg.lambda_b * dmean[j] / n;
      if (domain_labels[i] >= 0) {
        const auto d = static_cast<std::size_t>(domain_labels[i]);
        // d/dp of -log p[d] is -1/p[d] (floored)
        g.dsource.at(i, d) += -cfg.lambda_d /
                              (static_cast<double>(labeled) *
                               std::max(row[d], kProbFloor));
      } else {
        const auto dh = entropy_grad_probs(row);
        for (std::size_t j = 0; j < source_assign.cols; ++j)
          g.dsource.at(i, j) +=
              cfg.lambda_e * dh[j] / static_cast<double>(unlabeled);
      }
    }
  }

  if (target_assign.rows > 0) {
    const auto mean = mean_row(target_assign);
    const auto dmean = entropy_grad_probs(mean);
    const double m = static_cast<double>(target_assign.rows);
    for (std::size_t i = 0; i < target_assign.rows; ++i) {
      const auto dh = entropy_grad_probs(target_assign.row(i));
      for (std::size_t j = 0; j < target_assign.cols; ++j)
        g.dtarget.at(i, j) =
            cfg.lambda_e * dh[j] / m - cfg.lambda_b * dmean[j] / m;
    }
  }
  return g;
}

double wbn_loss(const Matrix& class_probs,
                const std::vector<std::size_t>& class_labels,
                const Matrix& domain_probs,
                const std::vector<std::size_t>& domain_labels, double lambda) {
  check_rows_labels(class_probs, class_labels.size(), "wbn_loss");
  check_rows_labels(domain_probs, domain_labels.size(), "wbn_loss");
  if (class_probs.rows != domain_probs.rows)
    throw std::invalid_argument("wbn_loss: batch size mismatch");
  if (class_probs.rows == 0)
    throw std::invalid_argument("wbn_loss: empty batch");
  double loss = 0.0;
  for (std::size_t i = 0; i < class_probs.rows; ++i)
    loss += (cross_entropy(class_probs.row(i), class_labels[i]) +
             lambda * cross_entropy(domain_probs.row(i), domain_labels[i])) /
            static_cast<double>(class_probs.rows);
  return loss;
}

std::vector<double> bsf_predict(const Matrix& scores,
                                const std::vector<double>& w, double alpha) {
  if (scores.rows != w.size())
    throw std::invalid_argument("bsf_predict: weight count mismatch");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("bsf_predict: alpha outside [0,1]");
  validate_distribution(w);
  const double k = static_cast<double>(scores.rows);
  std::vector<double> out(scores.cols, 0.0);
  for (std::size_t j = 0; j < scores.rows; ++j)
    for (std::size_t c = 0; c < scores.cols; ++c)
      out[c] += ((1.0 - alpha) * w[j] + alpha / k) * scores.at(j, c);
  return out;
}

std::vector<double> bsf_train_weights(std::size_t domain, std::size_t k,
                                      double alpha, RngStream& rng) {
  if (domain >= k)
    throw std::invalid_argument("bsf_train_weights: domain out of range");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("bsf_train_weights: alpha outside [0,1]");
  if (rng.next_bernoulli(alpha))
    return std::vector<double>(k, 1.0 / static_cast<double>(k));
  std::vector<double> w(k, 0.0);
  w[domain] = 1.0;
  return w;
}

}  // namespace shiftlab
