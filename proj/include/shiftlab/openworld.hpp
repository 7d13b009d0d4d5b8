#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "shiftlab/linear.hpp"
#include "shiftlab/matrix.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

// Returned by every open-world predictor when a sample is rejected.
constexpr int kUnknown = -1;

// --- persistent per-class state ---------------------------------------------

struct ClassEntry {
  int id = 0;
  std::vector<double> centroid;
  double count = 0.0;
  double delta = 0.0;  // per-class rejection threshold
};

struct ClassStore {
  std::vector<ClassEntry> classes;
  double global_delta = 0.0;  // shared dynamic threshold
  double sigma2 = 1.0;        // running feature-activation variance
};

void validate_store(const ClassStore& store);
// Row c holds the centroid of store.classes[c].
Matrix centroid_matrix(const ClassStore& store);
// Index into store.classes for a label, or npos when absent.
std::size_t store_index(const ClassStore& store, int label);

std::string store_to_json(const ClassStore& store);
ClassStore store_from_json(const std::string& text);

// --- scores and predictions -------------------------------------------------

// z * (1 - ||f - mu|| / tau); rejection happens where the score is <= 0.
double nno_score(const std::vector<double>& feature,
                 const std::vector<double>& centroid, double tau,
                 double z = 1.0);

// exp(-0.5 ||f - mu||), always in (0, 1].
double dnno_score(const std::vector<double>& feature,
                  const std::vector<double>& centroid);

// kUnknown iff every score is <= delta, otherwise the argmax class index
// (ties resolve to the lowest index).
int dnno_predict(const std::vector<double>& scores, double delta);

// Squared distance scaled by the running variance; kUnknown iff the distance
// to every centroid exceeds that class's threshold, otherwise argmin.
int bdoc_predict(const std::vector<double>& feature, const ClassStore& store);

// --- streaming statistics ----------------------------------------------------

// mu_c <- (n_c mu_c + n_B mu_B) / (n_c + n_B) for each class in the batch;
// unseen labels get a fresh entry whose centroid is the batch mean.
void update_means(ClassStore& store, const Matrix& features,
                  const std::vector<int>& labels);

// Dynamic global threshold: the previous value (weighted by how many updates
// produced it) is averaged with the per-class weighted ground-truth scores of
// the batch. Accepted samples weigh w_plus, rejected ones w_minus.
double update_threshold(double delta, std::size_t t, const Matrix& scores,
                        const std::vector<int>& labels, double w_plus,
                        double w_minus);

// Pooled biased variance of every entry of the feature matrix.
double pooled_variance(const Matrix& features);

// --- losses over extracted features ------------------------------------------
// Centroids and sigma2 are treated as constants (online statistics); all
// gradients are with respect to the features.

// mean_i [ -log s_y(f_i) - sum_{c != y} log(1 - s_c(f_i)) ] with dnno scores
double dnno_ce(const Matrix& features, const std::vector<int>& labels,
               const Matrix& centroids);
Matrix dnno_ce_grad(const Matrix& features, const std::vector<int>& labels,
                    const Matrix& centroids);

// mean_i ||f_i - f_i^old||
double distill_penalty(const Matrix& features, const Matrix& old_features);
Matrix distill_penalty_grad(const Matrix& features,
                            const Matrix& old_features);

// dnno_ce + lambda * distill_penalty; pass an empty old_features matrix for
// the first learning episode.
double dnno_loss(const Matrix& features, const std::vector<int>& labels,
                 const Matrix& centroids, const Matrix& old_features,
                 double lambda);
Matrix dnno_loss_grad(const Matrix& features, const std::vector<int>& labels,
                      const Matrix& centroids, const Matrix& old_features,
                      double lambda);

// mean cross-entropy of the softmax over -||f - mu_k||^2 / sigma2
double bdoc_global(const Matrix& features, const std::vector<int>& labels,
                   const Matrix& centroids, double sigma2);
Matrix bdoc_global_grad(const Matrix& features, const std::vector<int>& labels,
                        const Matrix& centroids, double sigma2);

// Soft-nearest-neighbour loss; anchors without a same-class peer are excluded
// from the mean and reported through anchors_out when provided.
double bdoc_local(const Matrix& features, const std::vector<int>& labels,
                  double sigma2, std::size_t* anchors_out = nullptr);
Matrix bdoc_local_grad(const Matrix& features, const std::vector<int>& labels,
                       double sigma2);

// global + lambda * local + gamma * distillation (distillation only when
// old_features is nonempty, i.e. from the second episode on)
double bdoc_loss(const Matrix& features, const std::vector<int>& labels,
                 const Matrix& centroids, double sigma2,
                 const Matrix& old_features, double lambda, double gamma);
Matrix bdoc_loss_grad(const Matrix& features, const std::vector<int>& labels,
                      const Matrix& centroids, double sigma2,
                      const Matrix& old_features, double lambda, double gamma);

// --- per-class rejection thresholds ------------------------------------------

struct ThresholdResult {
  std::vector<double> deltas;   // aligned with store.classes
  std::vector<char> updated;    // 0 where the class was absent from the set
};

// Hinge objective over the thresholds with the extractor frozen: an in-class
// distance above delta_c pulls the threshold up, a cross-class distance below
// delta_k pushes it down. Thresholds start at the 95th percentile
// (nearest-rank) of the in-class distances found in the provided set.
ThresholdResult learn_thresholds(const Matrix& features,
                                 const std::vector<int>& labels,
                                 const ClassStore& store,
                                 double learning_rate = 0.005,
                                 std::size_t steps = 400);

// The value the hinge objective assigns to a candidate threshold vector.
double threshold_loss(const Matrix& features, const std::vector<int>& labels,
                      const ClassStore& store,
                      const std::vector<double>& deltas);

// --- episodic memory ----------------------------------------------------------

struct MemoryEntry {
  std::vector<double> feature;
  double relevance = 0.0;  // distance to the class centroid, lower is better
};

struct MemoryClass {
  int id = 0;
  std::vector<MemoryEntry> entries;  // sorted by ascending distance
};

struct EpisodicMemory {
  std::size_t capacity = 2000;
  double heldout_fraction = 0.2;
  std::vector<MemoryClass> classes;
};

EpisodicMemory make_memory(std::size_t capacity, double heldout_fraction);
std::size_t memory_total(const EpisodicMemory& memory);
// Entries at the tail (least relevant) of each class list are reserved for
// threshold learning and never sampled for training.
std::size_t heldout_count(const EpisodicMemory& memory, std::size_t class_pos);

// Insert a batch, re-rank every entry against the current centroids, and
// prune the largest classes down to capacity, dropping least-relevant entries.
void memory_update(EpisodicMemory& memory, const Matrix& features,
                   const std::vector<int>& labels, const ClassStore& store);

struct SampledBatch {
  Matrix features;
  std::vector<int> labels;
  std::size_t from_memory = 0;
};

// floor(ratio * batch) training-portion memory samples, remainder new data.
// An empty memory falls back to new data alone (from_memory reports 0).
SampledBatch balanced_batch(const EpisodicMemory& memory,
                            const Matrix& new_features,
                            const std::vector<int>& new_labels, double ratio,
                            std::size_t batch, RngStream& rng);

// --- evaluation ----------------------------------------------------------------

struct OwrReport {
  double closed_acc = 0.0;      // no rejection allowed
  double closed_rej_acc = 0.0;  // rejection counts as an error
  double open_acc = 0.0;        // fraction of unknowns rejected
  double owr = 0.0;             // arithmetic mean of the last two
  double owr_h = 0.0;           // harmonic mean of the same pair
};

OwrReport owr_metrics(const std::vector<int>& closed_preds,
                      const std::vector<int>& closed_rej_preds,
                      const std::vector<int>& closed_labels,
                      const std::vector<int>& open_preds);

// --- desk-scale trainers --------------------------------------------------------

struct OwrConfig {
  std::size_t feature_dim = 6;
  double learning_rate = 0.05;
  std::size_t steps = 300;
  std::size_t batch = 32;
  double lambda = 1.0;   // local-clustering weight / distillation weight
  double gamma = 0.0;    // distillation weight in the clustering loss
  double w_plus = 1.0;
  double w_minus = 3.0;
  double heldout_fraction = 0.2;
  double sigma_momentum = 0.1;
  double delta_learning_rate = 0.005;
  std::size_t delta_steps = 400;
};

struct DeepNnoModel {
  LinearModel extractor;
  ClassStore store;
  std::size_t updates = 0;  // threshold update count, persists across episodes
};

struct BdocModel {
  LinearModel extractor;
  ClassStore store;
};

// Single-episode trainers over a labeled pool with dense labels 0..C-1.
DeepNnoModel train_deep_nno(const Matrix& inputs,
                            const std::vector<int>& labels,
                            const OwrConfig& config, RngStream& rng);
BdocModel train_bdoc(const Matrix& inputs, const std::vector<int>& labels,
                     const OwrConfig& config, RngStream& rng);

int dnno_classify(const DeepNnoModel& model, const std::vector<double>& input,
                  bool allow_reject);
int bdoc_classify(const BdocModel& model, const std::vector<double>& input,
                  bool allow_reject);

}  // namespace shiftlab
