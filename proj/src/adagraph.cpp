#include "shiftlab/adagraph.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "shiftlab/numerics.hpp"
#include "shiftlab/onda.hpp"
#include "shiftlab/optim.hpp"

namespace shiftlab {

namespace {

void check_node_layer(const DomainGraph& g, std::size_t v, std::size_t layer,
                      const char* what) {
  if (v >= g.nodes.size())
    throw std::invalid_argument(std::string(what) + ": node out of range");
  if (layer >= g.nodes[v].layers.size())
    throw std::invalid_argument(std::string(what) + ": layer out of range");
}

GBNLayer zero_like(const GBNLayer& proto) {
  GBNLayer l;
  l.mu.assign(proto.mu.size(), 0.0);
  l.var.assign(proto.var.size(), 0.0);
  l.gamma.assign(proto.gamma.size(), 0.0);
  l.beta.assign(proto.beta.size(), 0.0);
  return l;
}

void axpy(std::vector<double>& acc, double a, const std::vector<double>& x) {
  if (acc.size() != x.size())
    throw std::invalid_argument("graph regression: layer dim mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) acc[i] += a * x[i];
}

std::vector<GBNLayer> mix_nodes(const DomainGraph& graph,
                                const std::vector<double>& coeff) {
  const auto& proto = graph.nodes.front().layers;
  std::vector<GBNLayer> out;
  out.reserve(proto.size());
  for (const auto& l : proto) out.push_back(zero_like(l));
  for (std::size_t k = 0; k < graph.nodes.size(); ++k) {
    const auto& node = graph.nodes[k];
    if (node.layers.size() != out.size())
      throw std::invalid_argument("graph regression: layer count mismatch");
    for (std::size_t s = 0; s < out.size(); ++s) {
      axpy(out[s].mu, coeff[k], node.layers[s].mu);
      axpy(out[s].var, coeff[k], node.layers[s].var);
      axpy(out[s].gamma, coeff[k], node.layers[s].gamma);
      axpy(out[s].beta, coeff[k], node.layers[s].beta);
    }
  }
  return out;
}

BNState layer_state(const GBNLayer& layer, const std::vector<double>& gamma,
                    const std::vector<double>& beta, double eps) {
  BNState s;
  s.mean = layer.mu;
  s.var = layer.var;
  s.gamma = gamma;
  s.beta = beta;
  s.eps = eps;
  return s;
}

Matrix ones_column(std::size_t rows) {
  Matrix w(rows, 1);
  for (auto& v : w.data) v = 1.0;
  return w;
}

std::vector<std::size_t> sample_batch(RngStream& rng, std::size_t n,
                                      std::size_t batch) {
  std::vector<std::size_t> idx(std::min(batch, n));
  for (auto& i : idx) i = rng.next_below(n);
  return idx;
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), x.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) out.set_row(i, x.row(idx[i]));
  return out;
}

// One SGD step on a domain-pure batch routed through node v. labels == null
// switches the loss from cross-entropy to lambda * mean entropy.
void gbn_training_step(GraphModel& model, const Matrix& bx,
                       const std::vector<std::size_t>* labels, double lambda,
                       std::size_t v, const AdaGraphConfig& cfg,
                       bool update_head) {
  auto& graph = model.graph;
  const auto [gamma_g, beta_g] = graph_scalebias(graph, v, 0);
  const Matrix w = ones_column(bx.rows);
  const DomainStats st = mda_statistics(bx, w);
  const Matrix y = mda_forward(bx, w, st, gamma_g, beta_g, cfg.eps);

  const double b = static_cast<double>(bx.rows);
  LinearGrads lg = zero_grads(model.head);
  Matrix dy(bx.rows, bx.cols);
  for (std::size_t i = 0; i < bx.rows; ++i) {
    const auto p = softmax(linear_forward(model.head, y.row(i)));
    std::vector<double> dlogits =
        labels != nullptr ? ce_grad_logits(p, (*labels)[i])
                          : entropy_grad_logits(p);
    const double scale = (labels != nullptr ? 1.0 : lambda) / b;
    for (auto& g : dlogits) g *= scale;
    dy.set_row(i, linear_backward(model.head, y.row(i), dlogits, lg));
  }

  const MdaGrads mg =
      mda_backward(bx, w, st, gamma_g, beta_g, cfg.eps, dy);

  // distribute the coupled scale/bias gradient over the contributing nodes
  double total = 0.0;
  std::vector<double> omega(graph.nodes.size());
  for (std::size_t k = 0; k < graph.nodes.size(); ++k) {
    omega[k] = edge_weight(graph.nodes[v].metadata, graph.nodes[k].metadata,
                           graph.sigma_d);
    total += omega[k];
  }
  for (std::size_t k = 0; k < graph.nodes.size(); ++k) {
    const double c = cfg.learning_rate * omega[k] / total;
    auto& layer = graph.nodes[k].layers[0];
    for (std::size_t f = 0; f < layer.gamma.size(); ++f) {
      layer.gamma[f] -= c * mg.dgamma[f];
      layer.beta[f] -= c * mg.dbeta[f];
    }
  }

  if (update_head) {
    for (std::size_t i = 0; i < model.head.W.data.size(); ++i)
      model.head.W.data[i] -= cfg.learning_rate * lg.dW.data[i];
    for (std::size_t i = 0; i < model.head.b.size(); ++i)
      model.head.b[i] -= cfg.learning_rate * lg.db[i];
  }

  auto& layer = graph.nodes[v].layers[0];
  for (std::size_t f = 0; f < layer.mu.size(); ++f) {
    layer.mu[f] = (1.0 - cfg.stats_momentum) * layer.mu[f] +
                  cfg.stats_momentum * st.mean.at(0, f);
    layer.var[f] = (1.0 - cfg.stats_momentum) * layer.var[f] +
                   cfg.stats_momentum * st.var.at(0, f);
  }
}

}  // namespace

double edge_weight(const std::vector<double>& m1, const std::vector<double>& m2,
                   double sigma_d) {
  if (m1.size() != m2.size())
    throw std::invalid_argument("edge_weight: metadata length mismatch");
  if (!(sigma_d > 0.0))
    throw std::invalid_argument("edge_weight: sigma_d must be positive");
  double d2 = 0.0;
  for (std::size_t i = 0; i < m1.size(); ++i)
    d2 += (m1[i] - m2[i]) * (m1[i] - m2[i]);
  return std::exp(-d2 / (2.0 * sigma_d));
}

std::vector<GBNLayer> regress_params_metadata(
    const DomainGraph& graph, const std::vector<double>& metadata) {
  if (graph.nodes.empty())
    throw std::invalid_argument("regress_params_metadata: empty graph");
  std::vector<double> coeff(graph.nodes.size());
  double total = 0.0;
  for (std::size_t k = 0; k < graph.nodes.size(); ++k) {
    coeff[k] = edge_weight(metadata, graph.nodes[k].metadata, graph.sigma_d);
    total += coeff[k];
  }
  for (auto& c : coeff) c /= total;
  return mix_nodes(graph, coeff);
}

std::vector<GBNLayer> regress_params_image(const DomainGraph& graph,
                                           const std::vector<double>& probs) {
  if (graph.nodes.empty())
    throw std::invalid_argument("regress_params_image: empty graph");
  if (probs.size() != graph.nodes.size())
    throw std::invalid_argument(
        "regress_params_image: probability over unknown node");
  validate_distribution(probs);
  return mix_nodes(graph, probs);
}

std::pair<std::vector<double>, std::vector<double>> graph_scalebias(
    const DomainGraph& graph, std::size_t v, std::size_t layer) {
  check_node_layer(graph, v, layer, "graph_scalebias");
  const auto& ref = graph.nodes[v];
  std::vector<double> gamma(ref.layers[layer].gamma.size(), 0.0);
  std::vector<double> beta(ref.layers[layer].beta.size(), 0.0);
  double total = 0.0;
  for (const auto& node : graph.nodes) {
    const double w = edge_weight(ref.metadata, node.metadata, graph.sigma_d);
    total += w;
    axpy(gamma, w, node.layers[layer].gamma);
    axpy(beta, w, node.layers[layer].beta);
  }
  for (auto& g : gamma) g /= total;
  for (auto& b : beta) b /= total;
  return {gamma, beta};
}

Matrix gbn_forward(const Matrix& x, const DomainGraph& graph, std::size_t v,
                   std::size_t layer, double eps) {
  check_node_layer(graph, v, layer, "gbn_forward");
  const auto [gamma, beta] = graph_scalebias(graph, v, layer);
  return da_normalize(x, layer_state(graph.nodes[v].layers[layer], gamma,
                                     beta, eps));
}

Matrix gbn_forward_train(const Matrix& x, DomainGraph& graph, std::size_t v,
                         std::size_t layer, double momentum, double eps) {
  check_node_layer(graph, v, layer, "gbn_forward_train");
  const auto [gamma, beta] = graph_scalebias(graph, v, layer);
  const Matrix w = ones_column(x.rows);
  const DomainStats st = mda_statistics(x, w);
  GBNLayer batch;
  batch.mu = st.mean.row(0);
  batch.var = st.var.row(0);
  const Matrix y = da_normalize(x, layer_state(batch, gamma, beta, eps));

  auto& l = graph.nodes[v].layers[layer];
  for (std::size_t f = 0; f < l.mu.size(); ++f) {
    l.mu[f] = (1.0 - momentum) * l.mu[f] + momentum * batch.mu[f];
    l.var[f] = (1.0 - momentum) * l.var[f] + momentum * batch.var[f];
  }
  return y;
}

GraphModel make_graph_model(std::size_t feature_dim, std::size_t classes,
                            std::vector<double> source_metadata,
                            double sigma_d, RngStream& rng) {
  if (!(sigma_d > 0.0))
    throw std::invalid_argument("graph model: sigma_d must be positive");
  GraphModel model;
  model.graph.sigma_d = sigma_d;
  GBNNode source;
  source.metadata = std::move(source_metadata);
  GBNLayer layer;
  layer.mu.assign(feature_dim, 0.0);
  layer.var.assign(feature_dim, 1.0);
  layer.gamma.assign(feature_dim, 1.0);
  layer.beta.assign(feature_dim, 0.0);
  source.layers.push_back(std::move(layer));
  model.graph.nodes.push_back(std::move(source));
  model.head = make_linear(classes, feature_dim, rng);
  return model;
}

void train_source(GraphModel& model, const Matrix& x,
                  const std::vector<std::size_t>& labels,
                  const AdaGraphConfig& cfg, RngStream& rng) {
  if (x.rows != labels.size())
    throw std::invalid_argument("train_source: label count mismatch");
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto idx = sample_batch(rng, x.rows, cfg.batch);
    const Matrix bx = gather_rows(x, idx);
    std::vector<std::size_t> by(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) by[i] = labels[idx[i]];
    gbn_training_step(model, bx, &by, 0.0, 0, cfg, true);
  }
}

void train_with_auxiliaries(GraphModel& model, const Matrix& source_x,
                            const std::vector<std::size_t>& source_labels,
                            const std::vector<AuxiliaryDomain>& auxiliaries,
                            const AdaGraphConfig& cfg, RngStream& rng) {
  const std::size_t meta_dim = model.graph.nodes.front().metadata.size();
  for (const auto& aux : auxiliaries) {
    if (aux.metadata.size() != meta_dim || aux.metadata.empty())
      throw std::invalid_argument(
          "train_with_auxiliaries: auxiliary domain without metadata");
    GBNNode node;
    node.metadata = aux.metadata;
    node.layers = model.graph.nodes.front().layers;  // start from source
    model.graph.nodes.push_back(std::move(node));
  }

  const std::size_t rounds = 1 + auxiliaries.size();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::size_t slot = step % rounds;
    if (slot == 0) {
      const auto idx = sample_batch(rng, source_x.rows, cfg.batch);
      const Matrix bx = gather_rows(source_x, idx);
      std::vector<std::size_t> by(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        by[i] = source_labels[idx[i]];
      gbn_training_step(model, bx, &by, 0.0, 0, cfg, false);
    } else {
      const auto& aux = auxiliaries[slot - 1];
      const auto idx = sample_batch(rng, aux.x.rows, cfg.batch);
      gbn_training_step(model, gather_rows(aux.x, idx), nullptr, cfg.lambda,
                        slot, cfg, false);
    }
  }
}

GBNNode refine(const GBNNode& node, const LinearModel& head,
               const Matrix& stream, std::size_t m, double lambda, double lr,
               double alpha, double eps) {
  if (m < 2) throw std::invalid_argument("refine: memory size must be >= 2");
  GBNNode out = node;
  auto& layer = out.layers.at(0);
  std::vector<std::vector<double>> memory;

  for (std::size_t i = 0; i < stream.rows; ++i) {
    memory.push_back(stream.row(i));
    if (memory.size() < m) continue;

    // statistics fold first (decayed moving average, Bessel on variance)
    const auto [mu_hat, var_hat] = onda_partial(memory);
    const double bessel =
        static_cast<double>(m) / (static_cast<double>(m) - 1.0);
    for (std::size_t f = 0; f < layer.mu.size(); ++f) {
      layer.mu[f] = (1.0 - alpha) * layer.mu[f] + alpha * mu_hat[f];
      layer.var[f] =
          (1.0 - alpha) * layer.var[f] + alpha * bessel * var_hat[f];
    }

    // one entropy step on the node's scale/bias over the memory batch
    const double mm = static_cast<double>(memory.size());
    std::vector<double> dgamma(layer.gamma.size(), 0.0);
    std::vector<double> dbeta(layer.beta.size(), 0.0);
    LinearGrads lg = zero_grads(head);
    for (const auto& sample : memory) {
      std::vector<double> xhat(sample.size()), y(sample.size());
      for (std::size_t f = 0; f < sample.size(); ++f) {
        xhat[f] = (sample[f] - layer.mu[f]) / std::sqrt(layer.var[f] + eps);
        y[f] = layer.gamma[f] * xhat[f] + layer.beta[f];
      }
      const auto p = softmax(linear_forward(head, y));
      auto dlogits = entropy_grad_logits(p);
      for (auto& g : dlogits) g *= lambda / mm;
      const auto dy = linear_backward(head, y, dlogits, lg);
      for (std::size_t f = 0; f < sample.size(); ++f) {
        dgamma[f] += dy[f] * xhat[f];
        dbeta[f] += dy[f];
      }
    }
    for (std::size_t f = 0; f < layer.gamma.size(); ++f) {
      layer.gamma[f] -= lr * dgamma[f];
      layer.beta[f] -= lr * dbeta[f];
    }
    memory.clear();
  }
  return out;
}

std::vector<std::size_t> gbn_predict(const LinearModel& head,
                                     const GBNLayer& params, const Matrix& x,
                                     double eps) {
  const Matrix y =
      da_normalize(x, layer_state(params, params.gamma, params.beta, eps));
  std::vector<std::size_t> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    out[i] = argmax_index(linear_forward(head, y.row(i)));
  return out;
}

std::string graph_to_json(const DomainGraph& graph) {
  nlohmann::ordered_json doc;
  doc["sigma_d"] = graph.sigma_d;
  doc["nodes"] = nlohmann::ordered_json::array();
  for (const auto& node : graph.nodes) {
    nlohmann::ordered_json jn;
    jn["metadata"] = node.metadata;
    jn["layers"] = nlohmann::ordered_json::array();
    for (const auto& layer : node.layers) {
      nlohmann::ordered_json jl;
      jl["mu"] = layer.mu;
      jl["var"] = layer.var;
      jl["gamma"] = layer.gamma;
      jl["beta"] = layer.beta;
      jn["layers"].push_back(std::move(jl));
    }
    doc["nodes"].push_back(std::move(jn));
  }
  return doc.dump(2);
}

DomainGraph graph_from_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  DomainGraph graph;
  graph.sigma_d = doc.at("sigma_d").get<double>();
  if (!(graph.sigma_d > 0.0))
    throw std::invalid_argument("graph_from_json: sigma_d must be positive");
  for (const auto& jn : doc.at("nodes")) {
    GBNNode node;
    node.metadata = jn.at("metadata").get<std::vector<double>>();
    for (const auto& jl : jn.at("layers")) {
      GBNLayer layer;
      layer.mu = jl.at("mu").get<std::vector<double>>();
      layer.var = jl.at("var").get<std::vector<double>>();
      layer.gamma = jl.at("gamma").get<std::vector<double>>();
      layer.beta = jl.at("beta").get<std::vector<double>>();
      node.layers.push_back(std::move(layer));
    }
    graph.nodes.push_back(std::move(node));
  }
  return graph;
}

}  // namespace shiftlab
