#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "shiftlab/alignment.hpp"
#include "shiftlab/linear.hpp"
#include "shiftlab/matrix.hpp"

namespace shiftlab {

// Online normalization state: global statistics plus a bounded buffer of the
// most recent target samples.
struct OnlineBN {
  BNState state;
  std::vector<std::vector<double>> buffer;
  std::size_t n_t = 10;
  double alpha = 0.1;
};

OnlineBN make_online_bn(BNState state, std::size_t n_t = 10,
                        double alpha = 0.1);

// Biased per-buffer estimates: mean = (1/n) sum x, var = (1/n) sum (x-mean)^2.
std::pair<std::vector<double>, std::vector<double>> onda_partial(
    const std::vector<std::vector<double>>& buffer);

// mu <- (1-alpha) mu + alpha mu_hat
// var <- (1-alpha) var + alpha * (n_t/(n_t-1)) * var_hat
// The Bessel factor applies to the variance only; gamma/beta stay frozen.
BNState onda_update(const BNState& state, const std::vector<double>& mu_hat,
                    const std::vector<double>& var_hat, double alpha,
                    std::size_t n_t);

// Source-trained classifier whose input normalization adapts online. The
// linear head is frozen during streaming.
struct OndaClassifier {
  OnlineBN bn;
  LinearModel head;
};

struct OndaStreamResult {
  std::vector<std::size_t> predictions;
  BNState final_state;
  std::size_t updates = 0;
};

// Classifies each sample with the statistics available *before* it arrived,
// then buffers it; every n_t samples the buffer folds into the global
// statistics and clears. A leftover partial buffer at stream end is dropped.
OndaStreamResult onda_stream(const OndaClassifier& model, const Matrix& stream);

}  // namespace shiftlab
