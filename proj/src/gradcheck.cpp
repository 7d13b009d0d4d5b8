#include "shiftlab/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace shiftlab {

std::vector<double> finite_diff_grad(const ScalarFn& f, std::vector<double> x,
                                     double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be positive");
  std::vector<double> g(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::invalid_argument("finite_diff_grad: non-finite function value");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double grad_rel_error(const std::vector<double>& analytic,
                      const std::vector<double>& numeric) {
  if (analytic.size() != numeric.size())
    throw std::invalid_argument("grad_rel_error: size mismatch");
  double scale = 1e-8;
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    scale = std::max({scale, std::fabs(analytic[i]), std::fabs(numeric[i])});
    diff = std::max(diff, std::fabs(analytic[i] - numeric[i]));
  }
  return diff / scale;
}

}  // namespace shiftlab
