#pragma once

#include <vector>

#include "shiftlab/matrix.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

// One dense layer: logits = W x + b, W is [out x in].
struct LinearModel {
  Matrix W;
  std::vector<double> b;
};

LinearModel make_linear(std::size_t out, std::size_t in, RngStream& rng,
                        double scale = 0.1);

std::vector<double> linear_forward(const LinearModel& m,
                                   const std::vector<double>& x);
// Batch version: X rows are samples, result rows are logits.
Matrix linear_forward(const LinearModel& m, const Matrix& x);

struct LinearGrads {
  Matrix dW;
  std::vector<double> db;
};

LinearGrads zero_grads(const LinearModel& m);

// Accumulate dW += dlogits x^T, db += dlogits; returns dx = W^T dlogits.
std::vector<double> linear_backward(const LinearModel& m,
                                    const std::vector<double>& x,
                                    const std::vector<double>& dlogits,
                                    LinearGrads& acc);

}  // namespace shiftlab
