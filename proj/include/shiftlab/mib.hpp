#pragma once

#include <cstddef>
#include <vector>

#include "shiftlab/linear.hpp"
#include "shiftlab/matrix.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

// Label bookkeeping for one incremental step. The background class sits at
// index 0 and belongs to both the old label set and the new-class set, so the
// new-class set has new_count + 1 members.
struct LabelSpace {
  std::size_t old_count = 1;  // previously known classes, background included
  std::size_t new_count = 0;  // classes appended this step

  std::size_t total() const { return old_count + new_count; }
  std::size_t new_set_size() const { return new_count + 1; }
  bool is_old(std::size_t c) const { return c < old_count; }
  bool in_new_set(std::size_t c) const { return c == 0 || c >= old_count; }
};

LabelSpace make_label_space(std::size_t old_count, std::size_t new_count);

// A batch of independent pixels: current-model logits over the full label
// space, old-model probabilities over the old label space, and ground truth
// restricted to the new-class set (background or an appended class).
struct PixelBatch {
  LabelSpace space;
  Matrix logits;
  Matrix old_probs;
  std::vector<int> labels;
};

void validate_pixel_batch(const PixelBatch& batch);

// Background-aware cross-entropy: a background target is scored against the
// combined mass of all old classes instead of the bare background output.
double mib_ce(const PixelBatch& batch);
Matrix mib_ce_grad(const PixelBatch& batch);

// Background-aware distillation: the old model's background probability is
// matched against the current model's combined background + new-class mass;
// the current distribution is not renormalized.
double mib_kd(const PixelBatch& batch);
Matrix mib_kd_grad(const PixelBatch& batch);

// Classical distillation baseline: current probabilities renormalized over
// the old label set before the cross term; appended classes carry no weight.
double lwf_kd(const PixelBatch& batch);
Matrix lwf_kd_grad(const PixelBatch& batch);

// Plain cross-entropy on the raw labels (fine-tuning baseline).
double plain_ce(const PixelBatch& batch);
Matrix plain_ce_grad(const PixelBatch& batch);

// Head init that spreads the old background probability uniformly over the
// new-class set: weights copied from the background head, bias shifted by
// -log(new-set size). Applied to the background head itself as well, which
// keeps the softmax over old classes untouched.
struct HeadInit {
  std::vector<double> omega;
  double beta = 0.0;
};
HeadInit init_new_classifier(const std::vector<double>& omega_b, double beta_b,
                             std::size_t new_set_size);

// Grow a classifier by new_count outputs. background_aware applies
// init_new_classifier to the background head and every appended head;
// otherwise appended heads start at small random values and the old heads are
// carried over unchanged.
LinearModel extend_classifier(const LinearModel& old_model,
                              std::size_t new_count, bool background_aware,
                              RngStream& rng, double init_scale = 0.01);

// Per-class intersection-over-union. Classes absent from both predictions
// and ground truth are excluded from the mean and reported as NaN.
struct IouReport {
  std::vector<double> per_class;
  std::vector<char> present;
  double mean = 0.0;
};
IouReport miou(const std::vector<int>& predictions,
               const std::vector<int>& labels, std::size_t num_classes);

// Mean IoU over classes in [first, last); absent classes are skipped.
double subset_miou(const IouReport& report, std::size_t first,
                   std::size_t last);

enum class IncrementalMethod { mib, finetune, lwf };

struct IncrementalConfig {
  IncrementalMethod method = IncrementalMethod::mib;
  double lambda = 1.0;  // distillation weight, ignored by finetune
  double learning_rate = 0.5;
  std::size_t steps = 300;
  std::size_t batch = 32;
  double init_scale = 0.01;  // appended-head scale for non-aware methods
};

// One incremental step: extend the old classifier to cover new_count extra
// classes and train it on (features, labels) with the configured losses.
// Labels must lie in the new-class set of the extended space.
LinearModel incremental_step(const LinearModel& old_model,
                             const Matrix& features,
                             const std::vector<int>& labels,
                             std::size_t new_count,
                             const IncrementalConfig& config, RngStream& rng);

// Row-wise argmax labels under the model.
std::vector<int> predict_labels(const LinearModel& model,
                                const Matrix& features);

}  // namespace shiftlab
