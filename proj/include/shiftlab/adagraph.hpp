#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "shiftlab/alignment.hpp"
#include "shiftlab/linear.hpp"
#include "shiftlab/matrix.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

// One normalization site's parameters and statistics for a single domain.
struct GBNLayer {
  std::vector<double> mu;
  std::vector<double> var;
  std::vector<double> gamma;
  std::vector<double> beta;
};

struct GBNNode {
  std::vector<double> metadata;  // normalized to [0,1] per component
  std::vector<GBNLayer> layers;
};

struct DomainGraph {
  std::vector<GBNNode> nodes;
  double sigma_d = 0.1;
};

// exp(-||m1 - m2||^2 / (2 sigma_d))
double edge_weight(const std::vector<double>& m1, const std::vector<double>& m2,
                   double sigma_d);

// Parameters for an unseen domain as the edge-weighted average over all
// nodes (the target connects to every node; no edge threshold).
std::vector<GBNLayer> regress_params_metadata(
    const DomainGraph& graph, const std::vector<double>& metadata);

// Mixture of node parameter sets under a node distribution p(v|x). All nodes
// in the graph are concrete; virtual domains must be materialized (via
// metadata regression) before they can receive probability mass.
std::vector<GBNLayer> regress_params_image(const DomainGraph& graph,
                                           const std::vector<double>& probs);

// Graph-coupled scale/bias for node v: nu_v^G = sum_k w(v,k) nu_k / sum_k
// w(v,k), self edge included. Statistics are never mixed this way.
std::pair<std::vector<double>, std::vector<double>> graph_scalebias(
    const DomainGraph& graph, std::size_t v, std::size_t layer);

// Inference form: node statistics with graph-coupled scale/bias.
Matrix gbn_forward(const Matrix& x, const DomainGraph& graph, std::size_t v,
                   std::size_t layer, double eps = kBnEps);

// Training form for a domain-pure batch: normalizes with the batch statistics
// and folds them into node v's stored statistics with the given momentum.
Matrix gbn_forward_train(const Matrix& x, DomainGraph& graph, std::size_t v,
                         std::size_t layer, double momentum,
                         double eps = kBnEps);

struct AdaGraphConfig {
  double lambda = 1.0;  // entropy weight on auxiliary domains
  double learning_rate = 0.05;
  std::size_t steps = 200;
  std::size_t batch = 16;
  double stats_momentum = 0.1;
  double eps = kBnEps;
};

// A single GBN site on the input features followed by a shared linear head.
struct GraphModel {
  DomainGraph graph;
  LinearModel head;
};

GraphModel make_graph_model(std::size_t feature_dim, std::size_t classes,
                            std::vector<double> source_metadata,
                            double sigma_d, RngStream& rng);

// Source phase: cross-entropy training of the head plus the source node's
// scale/bias and statistics.
void train_source(GraphModel& model, const Matrix& x,
                  const std::vector<std::size_t>& labels,
                  const AdaGraphConfig& cfg, RngStream& rng);

struct AuxiliaryDomain {
  Matrix x;  // unlabeled features
  std::vector<double> metadata;
};

// Auxiliary phase: appends one node per auxiliary domain (initialized from
// the source node) and minimizes source CE + lambda * per-domain entropy over
// domain-pure batches, updating only per-node BN parameters and statistics;
// the head stays frozen.
void train_with_auxiliaries(GraphModel& model, const Matrix& source_x,
                            const std::vector<std::size_t>& source_labels,
                            const std::vector<AuxiliaryDomain>& auxiliaries,
                            const AdaGraphConfig& cfg, RngStream& rng);

// Test-time refinement: every m samples, fold the memory's statistics into
// the node (decay alpha, Bessel on variance) and take one entropy step of
// size lr on the node's scale/bias; the memory then clears. Leftovers at
// stream end are dropped.
GBNNode refine(const GBNNode& node, const LinearModel& head,
               const Matrix& stream, std::size_t m, double lambda, double lr,
               double alpha = 0.1, double eps = kBnEps);

// Classify a batch normalized by an explicit parameter set (e.g. regressed).
std::vector<std::size_t> gbn_predict(const LinearModel& head,
                                     const GBNLayer& params, const Matrix& x,
                                     double eps = kBnEps);

std::string graph_to_json(const DomainGraph& graph);
DomainGraph graph_from_json(const std::string& text);

}  // namespace shiftlab
