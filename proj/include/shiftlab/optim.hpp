#pragma once

#include <vector>

namespace shiftlab {

// Momentum SGD with coupled weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - learning_rate * v
struct OptimState {
  double learning_rate = 0.1;
  double momentum = 0.0;      // in [0, 1)
  double weight_decay = 0.0;  // >= 0
  std::vector<double> velocity;  // sized lazily to the parameter vector
};

void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              OptimState& state);

}  // namespace shiftlab
