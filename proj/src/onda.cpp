#include "shiftlab/onda.hpp"

#include <stdexcept>

#include "shiftlab/numerics.hpp"

namespace shiftlab {

OnlineBN make_online_bn(BNState state, std::size_t n_t, double alpha) {
  if (n_t < 2) throw std::invalid_argument("online bn: n_t must be >= 2");
  if (!(alpha > 0.0) || !(alpha < 1.0))
    throw std::invalid_argument("online bn: alpha outside (0,1)");
  OnlineBN bn;
  bn.state = std::move(state);
  bn.n_t = n_t;
  bn.alpha = alpha;
  return bn;
}

std::pair<std::vector<double>, std::vector<double>> onda_partial(
    const std::vector<std::vector<double>>& buffer) {
  if (buffer.size() < 2)
    throw std::invalid_argument("onda_partial: buffer underfull");
  const std::size_t dim = buffer.front().size();
  const double n = static_cast<double>(buffer.size());
  std::vector<double> mu(dim, 0.0), var(dim, 0.0);
  for (const auto& x : buffer) {
    if (x.size() != dim)
      throw std::invalid_argument("onda_partial: ragged buffer");
    for (std::size_t f = 0; f < dim; ++f) mu[f] += x[f] / n;
  }
  for (const auto& x : buffer)
    for (std::size_t f = 0; f < dim; ++f)
      var[f] += (x[f] - mu[f]) * (x[f] - mu[f]) / n;
  return {mu, var};
}

BNState onda_update(const BNState& state, const std::vector<double>& mu_hat,
                    const std::vector<double>& var_hat, double alpha,
                    std::size_t n_t) {
  if (n_t < 2) throw std::invalid_argument("onda_update: n_t must be >= 2");
  if (mu_hat.size() != state.mean.size() ||
      var_hat.size() != state.var.size())
    throw std::invalid_argument("onda_update: dim mismatch");
  const double bessel =
      static_cast<double>(n_t) / (static_cast<double>(n_t) - 1.0);
  BNState out = state;
  for (std::size_t f = 0; f < state.mean.size(); ++f) {
    out.mean[f] = (1.0 - alpha) * state.mean[f] + alpha * mu_hat[f];
    out.var[f] = (1.0 - alpha) * state.var[f] + alpha * bessel * var_hat[f];
  }
  out.count = state.count + 1.0;
  return out;
}

OndaStreamResult onda_stream(const OndaClassifier& model,
                             const Matrix& stream) {
  OnlineBN bn = model.bn;
  OndaStreamResult result;
  result.predictions.reserve(stream.rows);

  Matrix one(1, stream.cols);
  for (std::size_t i = 0; i < stream.rows; ++i) {
    const auto x = stream.row(i);
    one.set_row(0, x);
    const auto normalized = da_normalize(one, bn.state);
    const auto logits = linear_forward(model.head, normalized.row(0));
    result.predictions.push_back(argmax_index(logits));

    bn.buffer.push_back(x);
    if (bn.buffer.size() == bn.n_t) {
      const auto [mu, var] = onda_partial(bn.buffer);
      bn.state = onda_update(bn.state, mu, var, bn.alpha, bn.n_t);
      bn.buffer.clear();
      result.updates += 1;
    }
  }
  result.final_state = bn.state;
  return result;
}

}  // namespace shiftlab
