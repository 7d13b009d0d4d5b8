#include "shiftlab/optim.hpp"

#include <stdexcept>

namespace shiftlab {

void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              OptimState& state) {
  if (params.size() != grads.size())
    throw std::invalid_argument("sgd_step: shape mismatch");
  if (state.momentum < 0.0 || state.momentum >= 1.0)
    throw std::invalid_argument("sgd_step: momentum out of [0,1)");
  if (state.weight_decay < 0.0)
    throw std::invalid_argument("sgd_step: negative weight decay");
  if (state.velocity.empty()) state.velocity.assign(params.size(), 0.0);
  if (state.velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: velocity shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.velocity[i] = state.momentum * state.velocity[i] + grads[i] +
                        state.weight_decay * params[i];
    params[i] -= state.learning_rate * state.velocity[i];
  }
}

}  // namespace shiftlab
