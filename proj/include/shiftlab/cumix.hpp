#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "shiftlab/linear.hpp"
#include "shiftlab/matrix.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

// Curriculum mixup for recognizing unseen classes in unseen domains: inputs
// and features are interpolated across classes and domains with an intensity
// that ramps up over training.

// --- curriculum schedule ------------------------------------------------------

struct MixSchedule {
  double warmup = 1.0;    // N, in epochs
  double beta_max = 2.0;  // cap for the Beta concentration
  double epoch = 0.0;     // current epoch s
};

// (alpha, beta) at epoch s: beta = min(s/N * beta_max, beta_max) and
// alpha = max(0, min((s - N)/N, 1)). Three phases: plain classification,
// intra-domain mixing, cross-domain mixing.
std::pair<double, double> schedule(double s, double warmup, double beta_max);

// --- class embeddings ---------------------------------------------------------

struct EmbeddingBank {
  std::vector<int> ids;  // class ids, unique
  Matrix vectors;        // one embedding per row, aligned with ids
};

void validate_bank(const EmbeddingBank& bank);
std::size_t bank_index(const EmbeddingBank& bank, int id);
std::string bank_to_json(const EmbeddingBank& bank);
EmbeddingBank bank_from_json(const std::string& text);

// --- mixing ---------------------------------------------------------------------

// lambda * a_i + (1 - lambda) * a_j
std::vector<double> mix2(const std::vector<double>& a_i,
                         const std::vector<double>& a_j, double lambda);

// lambda * a_i + (1 - lambda) * (gamma * a_j + (1 - gamma) * a_k);
// gamma selects a cross-domain (1) or same-domain (0) partner.
std::vector<double> mix3(const std::vector<double>& a_i,
                         const std::vector<double>& a_j,
                         const std::vector<double>& a_k, double lambda,
                         int gamma);

// Partners for anchor i: j uniform over samples of a different domain, k
// uniform over same-domain samples other than i. Throws when either pool is
// empty.
std::pair<std::size_t, std::size_t> sample_triplet(
    const std::vector<int>& domains, std::size_t anchor, RngStream& rng);

// One frozen mixing decision per anchor. Freezing the randomness separates
// sampling from evaluation so the objective becomes a deterministic function
// of the model parameters.
struct MixSpec {
  std::size_t j = 0;  // cross-domain partner (ignored when gamma == 0)
  std::size_t k = 0;  // same-domain partner
  double lambda = 1.0;
  int gamma = 0;
};

struct MixPlan {
  std::vector<MixSpec> image;    // one per anchor
  std::vector<MixSpec> feature;  // independently resampled per anchor
};

// Draw the image- and feature-level mixing decisions for every anchor:
// gamma ~ Bernoulli(alpha), lambda ~ Beta(beta, beta) with the degenerate
// beta = 0 warm-up epoch mapped to lambda = 1 (no mixing). Same-domain
// partners are required for every anchor; cross-domain partners only when
// the drawn gamma is 1.
MixPlan plan_mixes(const std::vector<int>& domains, double alpha, double beta,
                   RngStream& rng);

// --- model and losses -----------------------------------------------------------

// f extracts features, g projects them into the embedding space; class
// scores are dot products with the bank rows.
struct CumixModel {
  LinearModel f;
  LinearModel g;
};

CumixModel make_cumix_model(std::size_t input_dim, std::size_t feature_dim,
                            std::size_t embed_dim, RngStream& rng);

struct ZslBatch {
  Matrix inputs;
  std::vector<int> labels;   // bank ids
  std::vector<int> domains;  // parallel to labels
};

void validate_zsl_batch(const ZslBatch& batch, const EmbeddingBank& bank);

struct CumixGrads {
  LinearGrads f;
  LinearGrads g;
};

CumixGrads zero_cumix_grads(const CumixModel& model);

// Mean cross-entropy of the bank-compatibility softmax against the labels.
double agg_loss(const CumixModel& model, const Matrix& inputs,
                const std::vector<int>& labels, const EmbeddingBank& bank);

// Aggregation loss on input-level three-way mixes; labels are mixed with the
// same (lambda, gamma) as the inputs.
double mimg_loss(const CumixModel& model, const ZslBatch& batch,
                 const std::vector<MixSpec>& mixes, const EmbeddingBank& bank);

// Same objective with the mixing applied to extracted features instead.
double mfeat_loss(const CumixModel& model, const ZslBatch& batch,
                  const std::vector<MixSpec>& mixes,
                  const EmbeddingBank& bank);

// mean over anchors of [AGG + eta_i * M-IMG + eta_f * M-F] under a frozen
// plan; fills grads (with respect to every parameter of f and g) when given.
double cumix_objective(const CumixModel& model, const ZslBatch& batch,
                       const EmbeddingBank& bank, const MixPlan& plan,
                       double eta_i, double eta_f,
                       CumixGrads* grads = nullptr);

// Convenience wrapper that draws the plan from the schedule state.
double cumix_objective(const CumixModel& model, const ZslBatch& batch,
                       const EmbeddingBank& bank, const MixSchedule& state,
                       double eta_i, double eta_f, RngStream& rng);

// --- prediction -------------------------------------------------------------------

// argmax over candidate rows of the dot product with an embedding-space
// vector; ties resolve to the lowest index.
int zsl_predict(const std::vector<double>& embedded,
                const EmbeddingBank& candidates);

// Project an input and predict among the candidate classes.
int classify_zsl(const CumixModel& model, const std::vector<double>& input,
                 const EmbeddingBank& candidates);

// --- desk-scale trainer -------------------------------------------------------------

struct CumixConfig {
  std::size_t feature_dim = 5;
  double warmup = 2.0;  // N
  double beta_max = 2.0;
  std::size_t epochs = 6;
  std::size_t steps_per_epoch = 40;
  std::size_t batch = 24;
  double eta_i = 0.5;
  double eta_f = 0.5;
  double learning_rate = 0.05;
};

// Minibatch SGD over the curriculum; batches are stratified by domain so the
// triplet constraints stay satisfiable. eta_i = eta_f = 0 recovers the plain
// aggregation baseline.
CumixModel train_cumix(const ZslBatch& train, const EmbeddingBank& bank,
                       const CumixConfig& config, RngStream& rng);

}  // namespace shiftlab
