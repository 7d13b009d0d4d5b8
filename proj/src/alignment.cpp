#include "shiftlab/alignment.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace shiftlab {

namespace {

void check_batch(const Matrix& x, std::size_t features, const char* what) {
  if (x.cols != features)
    throw std::invalid_argument(std::string(what) + ": feature dim mismatch");
  if (!all_finite(x))
    throw std::invalid_argument(std::string(what) + ": non-finite input");
}

void check_state_dims(const BNState& s, std::size_t dim, const char* what) {
  if (s.mean.size() != dim || s.var.size() != dim || s.gamma.size() != dim ||
      s.beta.size() != dim)
    throw std::invalid_argument(std::string(what) + ": state dim mismatch");
  if (s.eps <= 0.0)
    throw std::invalid_argument(std::string(what) + ": eps must be positive");
}

std::vector<double> column_totals(const Matrix& w) {
  std::vector<double> totals(w.cols, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i)
    for (std::size_t d = 0; d < w.cols; ++d) {
      const double v = w.at(i, d);
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument(
            "assignment weights must be finite and nonnegative");
      totals[d] += v;
    }
  return totals;
}

DomainStats statistics_impl(const Matrix& x, const Matrix& w,
                            const DomainStats* prev) {
  if (w.rows != x.rows)
    throw std::invalid_argument("mda_statistics: batch size mismatch");
  check_batch(x, x.cols, "mda_statistics");
  const std::size_t domains = w.cols, features = x.cols;
  if (prev != nullptr &&
      (prev->mean.rows != domains || prev->mean.cols != features))
    throw std::invalid_argument("mda_statistics: carry-over shape mismatch");

  const auto totals = column_totals(w);
  DomainStats out;
  out.mean = Matrix(domains, features);
  out.var = Matrix(domains, features);
  out.carried.assign(domains, 0);

  for (std::size_t d = 0; d < domains; ++d) {
    if (totals[d] <= 0.0) {
      if (prev == nullptr)
        throw std::invalid_argument("mda_statistics: empty-domain " +
                                    std::to_string(d));
      out.carried[d] = 1;
      for (std::size_t f = 0; f < features; ++f) {
        out.mean.at(d, f) = prev->mean.at(d, f);
        out.var.at(d, f) = prev->var.at(d, f);
      }
      continue;
    }
    for (std::size_t f = 0; f < features; ++f) {
      double mu = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i)
        mu += (w.at(i, d) / totals[d]) * x.at(i, f);
      double var = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) {
        const double c = x.at(i, f) - mu;
        var += (w.at(i, d) / totals[d]) * c * c;
      }
      out.mean.at(d, f) = mu;
      out.var.at(d, f) = var;
    }
  }
  return out;
}

void check_mda_shapes(const Matrix& x, const Matrix& w,
                      const DomainStats& stats,
                      const std::vector<double>& gamma,
                      const std::vector<double>& beta, double eps,
                      const char* what) {
  if (w.rows != x.rows)
    throw std::invalid_argument(std::string(what) + ": batch size mismatch");
  if (stats.mean.rows != w.cols || stats.mean.cols != x.cols ||
      !stats.mean.same_shape(stats.var))
    throw std::invalid_argument(std::string(what) +
                                ": missing or mismatched domain statistics");
  if (gamma.size() != x.cols || beta.size() != x.cols)
    throw std::invalid_argument(std::string(what) + ": affine dim mismatch");
  if (eps <= 0.0)
    throw std::invalid_argument(std::string(what) + ": eps must be positive");
}

}  // namespace

BNState make_bn_state(std::size_t dim) {
  BNState s;
  s.mean.assign(dim, 0.0);
  s.var.assign(dim, 1.0);
  s.gamma.assign(dim, 1.0);
  s.beta.assign(dim, 0.0);
  return s;
}

void validate_assignment(const Matrix& w) {
  for (std::size_t i = 0; i < w.rows; ++i) {
    double sum = 0.0;
    for (std::size_t d = 0; d < w.cols; ++d) {
      const double v = w.at(i, d);
      if (!std::isfinite(v) || v < 0.0 || v > 1.0 + 1e-9)
        throw std::invalid_argument(
            "assignment entries must lie in [0,1]");
      sum += v;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("assignment rows must sum to 1");
  }
}

Matrix da_normalize(const Matrix& x, const BNState& s) {
  check_state_dims(s, x.cols, "da_normalize");
  check_batch(x, s.mean.size(), "da_normalize");
  Matrix y(x.rows, x.cols);
  for (std::size_t f = 0; f < x.cols; ++f) {
    const double inv = 1.0 / std::sqrt(s.var[f] + s.eps);
    for (std::size_t i = 0; i < x.rows; ++i)
      y.at(i, f) = s.gamma[f] * (x.at(i, f) - s.mean[f]) * inv + s.beta[f];
  }
  return y;
}

DomainStats mda_statistics(const Matrix& x, const Matrix& w) {
  return statistics_impl(x, w, nullptr);
}

DomainStats mda_statistics(const Matrix& x, const Matrix& w,
                           const DomainStats& prev) {
  return statistics_impl(x, w, &prev);
}

Matrix mda_forward(const Matrix& x, const Matrix& w, const DomainStats& stats,
                   const std::vector<double>& gamma,
                   const std::vector<double>& beta, double eps) {
  check_mda_shapes(x, w, stats, gamma, beta, eps, "mda_forward");
  Matrix y(x.rows, x.cols);
  for (std::size_t f = 0; f < x.cols; ++f)
    for (std::size_t i = 0; i < x.rows; ++i) {
      double acc = 0.0;
      for (std::size_t d = 0; d < w.cols; ++d)
        acc += w.at(i, d) * (x.at(i, f) - stats.mean.at(d, f)) /
               std::sqrt(stats.var.at(d, f) + eps);
      y.at(i, f) = gamma[f] * acc + beta[f];
    }
  return y;
}

MdaGrads mda_backward(const Matrix& x, const Matrix& w,
                      const DomainStats& stats,
                      const std::vector<double>& gamma,
                      const std::vector<double>& beta, double eps,
                      const Matrix& dy) {
  check_mda_shapes(x, w, stats, gamma, beta, eps, "mda_backward");
  if (!dy.same_shape(x))
    throw std::invalid_argument("mda_backward: upstream gradient shape");

  const std::size_t b = x.rows, features = x.cols, domains = w.cols;
  std::vector<double> totals(domains, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t d = 0; d < domains; ++d) totals[d] += w.at(i, d);

  MdaGrads out;
  out.dx = Matrix(b, features);
  out.dw = Matrix(b, domains);
  out.dgamma.assign(features, 0.0);
  out.dbeta.assign(features, 0.0);

  for (std::size_t f = 0; f < features; ++f) {
    for (std::size_t d = 0; d < domains; ++d) {
      const double mu = stats.mean.at(d, f);
      const double denom = stats.var.at(d, f) + eps;
      const double inv = 1.0 / std::sqrt(denom);
      // Weighted reductions A_d, B_d vanish for empty domains: their
      // statistics are carried constants, leaving only the direct term.
      double a = 0.0, bsum = 0.0;
      if (totals[d] > 0.0) {
        for (std::size_t i = 0; i < b; ++i) {
          const double wn = w.at(i, d) / totals[d];
          const double g = gamma[f] * dy.at(i, f);
          const double xhat = (x.at(i, f) - mu) * inv;
          a += wn * g;
          bsum += wn * xhat * g;
        }
      }
      for (std::size_t i = 0; i < b; ++i) {
        const double g = gamma[f] * dy.at(i, f);
        const double xhat = (x.at(i, f) - mu) * inv;
        out.dx.at(i, f) += w.at(i, d) * inv * (g - a - xhat * bsum);
        out.dw.at(i, d) += xhat * (g - a) -
                           0.5 * (xhat * xhat - stats.var.at(d, f) / denom) *
                               bsum;
      }
    }
    for (std::size_t i = 0; i < b; ++i) {
      double u = 0.0;
      for (std::size_t d = 0; d < domains; ++d)
        u += w.at(i, d) * (x.at(i, f) - stats.mean.at(d, f)) /
             std::sqrt(stats.var.at(d, f) + eps);
      out.dgamma[f] += dy.at(i, f) * u;
      out.dbeta[f] += dy.at(i, f);
    }
  }
  return out;
}

std::vector<double> wbn_forward(const std::vector<double>& x,
                                const std::vector<double>& weights,
                                const std::vector<BNState>& states) {
  if (states.empty())
    throw std::invalid_argument("wbn_forward: no domain states");
  if (weights.size() != states.size())
    throw std::invalid_argument("wbn_forward: unknown domain index");
  double sum = 0.0;
  for (double v : weights) {
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument("wbn_forward: weights must be nonnegative");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("wbn_forward: weights must sum to 1");

  const std::size_t dim = x.size();
  for (const auto& s : states) check_state_dims(s, dim, "wbn_forward");

  const BNState& shared = states[0];
  std::vector<double> y(dim, 0.0);
  for (std::size_t f = 0; f < dim; ++f) {
    double acc = 0.0;
    for (std::size_t j = 0; j < states.size(); ++j)
      acc += weights[j] * (x[f] - states[j].mean[f]) /
             std::sqrt(states[j].var[f] + shared.eps);
    y[f] = shared.gamma[f] * acc + shared.beta[f];
  }
  return y;
}

BNState running_update(const BNState& s, const std::vector<double>& batch_mean,
                       const std::vector<double>& batch_var, double m) {
  if (!(m > 0.0) || m > 1.0)
    throw std::invalid_argument("running_update: momentum outside (0,1]");
  if (batch_mean.size() != s.mean.size() || batch_var.size() != s.var.size())
    throw std::invalid_argument("running_update: dim mismatch");
  BNState out = s;
  for (std::size_t f = 0; f < s.mean.size(); ++f) {
    out.mean[f] = (1.0 - m) * s.mean[f] + m * batch_mean[f];
    out.var[f] = (1.0 - m) * s.var[f] + m * batch_var[f];
  }
  out.count = s.count + 1.0;
  return out;
}

}  // namespace shiftlab
