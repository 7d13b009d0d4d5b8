#pragma once

#include <functional>
#include <vector>

namespace shiftlab {

using ScalarFn = std::function<double(const std::vector<double>&)>;

// Central differences: (f(x + h e_i) - f(x - h e_i)) / (2h).
std::vector<double> finite_diff_grad(const ScalarFn& f, std::vector<double> x,
                                     double h);

// Infinity-norm error relative to the gradient's own scale:
//   max_i |a_i - n_i| / max(max|a|, max|n|, 1e-8)
double grad_rel_error(const std::vector<double>& analytic,
                      const std::vector<double>& numeric);

}  // namespace shiftlab
