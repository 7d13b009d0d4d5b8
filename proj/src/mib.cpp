#include "shiftlab/mib.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "shiftlab/numerics.hpp"

namespace shiftlab {

LabelSpace make_label_space(std::size_t old_count, std::size_t new_count) {
  if (old_count < 1)
    throw std::invalid_argument("label space: background must exist");
  LabelSpace space;
  space.old_count = old_count;
  space.new_count = new_count;
  return space;
}

void validate_pixel_batch(const PixelBatch& batch) {
  const std::size_t n = batch.logits.rows;
  if (n == 0) throw std::invalid_argument("pixel batch: empty");
  if (batch.logits.cols != batch.space.total())
    throw std::invalid_argument("pixel batch: logit width mismatch");
  if (batch.old_probs.rows != n ||
      batch.old_probs.cols != batch.space.old_count)
    throw std::invalid_argument("pixel batch: old-model shape mismatch");
  if (batch.labels.size() != n)
    throw std::invalid_argument("pixel batch: label count mismatch");
  if (!all_finite(batch.logits))
    throw std::invalid_argument("pixel batch: non-finite logits");
  for (std::size_t i = 0; i < n; ++i) {
    validate_distribution(batch.old_probs.row(i));
    const int y = batch.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= batch.space.total() ||
        !batch.space.in_new_set(static_cast<std::size_t>(y)))
      throw std::invalid_argument(
          "pixel batch: label outside the new-class set");
  }
}

namespace {

// total probability of the background + appended classes for one row
double new_set_mass(const Matrix& q, std::size_t i, const LabelSpace& space) {
  double mass = q.at(i, 0);
  for (std::size_t j = space.old_count; j < space.total(); ++j)
    mass += q.at(i, j);
  return mass;
}

double old_mass(const Matrix& q, std::size_t i, const LabelSpace& space) {
  double mass = 0.0;
  for (std::size_t k = 0; k < space.old_count; ++k) mass += q.at(i, k);
  return mass;
}

}  // namespace

double mib_ce(const PixelBatch& batch) {
  validate_pixel_batch(batch);
  const Matrix q = row_softmax(batch.logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < q.rows; ++i) {
    const auto y = static_cast<std::size_t>(batch.labels[i]);
    const double mass = y == 0 ? old_mass(q, i, batch.space) : q.at(i, y);
    loss -= safe_log(mass);
  }
  return loss / static_cast<double>(q.rows);
}

Matrix mib_ce_grad(const PixelBatch& batch) {
  validate_pixel_batch(batch);
  const Matrix q = row_softmax(batch.logits);
  const auto& space = batch.space;
  const double inv_n = 1.0 / static_cast<double>(q.rows);
  Matrix grad(q.rows, q.cols);
  for (std::size_t i = 0; i < q.rows; ++i) {
    const auto y = static_cast<std::size_t>(batch.labels[i]);
    if (y == 0) {
      const double mass = old_mass(q, i, space);
      if (mass <= kProbFloor) continue;  // inside the flat floored region
      for (std::size_t j = 0; j < q.cols; ++j) {
        const double qj = q.at(i, j);
        grad.at(i, j) = inv_n * (qj - (j < space.old_count ? qj / mass : 0.0));
      }
    } else {
      if (q.at(i, y) <= kProbFloor) continue;
      for (std::size_t j = 0; j < q.cols; ++j)
        grad.at(i, j) = inv_n * (q.at(i, j) - (j == y ? 1.0 : 0.0));
    }
  }
  return grad;
}

double mib_kd(const PixelBatch& batch) {
  validate_pixel_batch(batch);
  const Matrix q = row_softmax(batch.logits);
  const auto& space = batch.space;
  double loss = 0.0;
  for (std::size_t i = 0; i < q.rows; ++i) {
    loss -= batch.old_probs.at(i, 0) * safe_log(new_set_mass(q, i, space));
    for (std::size_t c = 1; c < space.old_count; ++c)
      loss -= batch.old_probs.at(i, c) * safe_log(q.at(i, c));
  }
  return loss / static_cast<double>(q.rows);
}

Matrix mib_kd_grad(const PixelBatch& batch) {
  validate_pixel_batch(batch);
  const Matrix q = row_softmax(batch.logits);
  const auto& space = batch.space;
  const double inv_n = 1.0 / static_cast<double>(q.rows);
  Matrix grad(q.rows, q.cols);
  for (std::size_t i = 0; i < q.rows; ++i) {
    // inverse aggregated masses with the floored-log regions flattened out
    const double mass_b = new_set_mass(q, i, space);
    const double inv_b = mass_b > kProbFloor ? 1.0 / mass_b : 0.0;
    double live_weight = mass_b > kProbFloor ? batch.old_probs.at(i, 0) : 0.0;
    for (std::size_t c = 1; c < space.old_count; ++c)
      if (q.at(i, c) > kProbFloor) live_weight += batch.old_probs.at(i, c);
    for (std::size_t j = 0; j < q.cols; ++j) {
      double pulled;  // p_c / mass_c for the aggregate j feeds into
      if (space.in_new_set(j)) {
        pulled = batch.old_probs.at(i, 0) * inv_b;
      } else {
        const double qj = q.at(i, j);
        pulled = qj > kProbFloor ? batch.old_probs.at(i, j) / qj : 0.0;
      }
      grad.at(i, j) = inv_n * q.at(i, j) * (live_weight - pulled);
    }
  }
  return grad;
}

double lwf_kd(const PixelBatch& batch) {
  validate_pixel_batch(batch);
  const Matrix q = row_softmax(batch.logits);
  const auto& space = batch.space;
  double loss = 0.0;
  for (std::size_t i = 0; i < q.rows; ++i) {
    const double denom = std::max(old_mass(q, i, space), kProbFloor);
    for (std::size_t c = 0; c < space.old_count; ++c)
      loss -= batch.old_probs.at(i, c) * safe_log(q.at(i, c) / denom);
  }
  return loss / static_cast<double>(q.rows);
}

Matrix lwf_kd_grad(const PixelBatch& batch) {
  validate_pixel_batch(batch);
  const Matrix q = row_softmax(batch.logits);
  const auto& space = batch.space;
  const double inv_n = 1.0 / static_cast<double>(q.rows);
  Matrix grad(q.rows, q.cols);
  for (std::size_t i = 0; i < q.rows; ++i) {
    const double denom = old_mass(q, i, space);
    if (denom <= kProbFloor) continue;  // fully floored row
    double live_weight = 0.0;
    for (std::size_t c = 0; c < space.old_count; ++c)
      if (q.at(i, c) / denom > kProbFloor)
        live_weight += batch.old_probs.at(i, c);
    for (std::size_t j = 0; j < space.old_count; ++j) {
      const double qj = q.at(i, j);
      const double direct =
          qj / denom > kProbFloor ? batch.old_probs.at(i, j) : 0.0;
      grad.at(i, j) = inv_n * (qj / denom * live_weight - direct);
    }
  }
  return grad;
}

double plain_ce(const PixelBatch& batch) {
  validate_pixel_batch(batch);
  const Matrix q = row_softmax(batch.logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < q.rows; ++i)
    loss -= safe_log(q.at(i, static_cast<std::size_t>(batch.labels[i])));
  return loss / static_cast<double>(q.rows);
}

Matrix plain_ce_grad(const PixelBatch& batch) {
  validate_pixel_batch(batch);
  const Matrix q = row_softmax(batch.logits);
  const double inv_n = 1.0 / static_cast<double>(q.rows);
  Matrix grad(q.rows, q.cols);
  for (std::size_t i = 0; i < q.rows; ++i) {
    const auto y = static_cast<std::size_t>(batch.labels[i]);
    if (q.at(i, y) <= kProbFloor) continue;
    for (std::size_t j = 0; j < q.cols; ++j)
      grad.at(i, j) = inv_n * (q.at(i, j) - (j == y ? 1.0 : 0.0));
  }
  return grad;
}

HeadInit init_new_classifier(const std::vector<double>& omega_b, double beta_b,
                             std::size_t new_set_size) {
  if (new_set_size < 1)
    throw std::invalid_argument("classifier init: empty new-class set");
  HeadInit head;
  head.omega = omega_b;
  head.beta = beta_b - std::log(static_cast<double>(new_set_size));
  return head;
}

LinearModel extend_classifier(const LinearModel& old_model,
                              std::size_t new_count, bool background_aware,
                              RngStream& rng, double init_scale) {
  if (old_model.W.rows < 1)
    throw std::invalid_argument("extend classifier: empty old model");
  const std::size_t out = old_model.W.rows + new_count;
  const std::size_t in = old_model.W.cols;
  LinearModel grown;
  grown.W = Matrix(out, in);
  grown.b.assign(out, 0.0);
  for (std::size_t c = 0; c < old_model.W.rows; ++c) {
    for (std::size_t j = 0; j < in; ++j)
      grown.W.at(c, j) = old_model.W.at(c, j);
    grown.b[c] = old_model.b[c];
  }
  if (background_aware) {
    const HeadInit head =
        init_new_classifier(old_model.W.row(0), old_model.b[0], new_count + 1);
    grown.b[0] = head.beta;
    for (std::size_t c = old_model.W.rows; c < out; ++c) {
      grown.W.set_row(c, head.omega);
      grown.b[c] = head.beta;
    }
  } else {
    for (std::size_t c = old_model.W.rows; c < out; ++c)
      for (std::size_t j = 0; j < in; ++j)
        grown.W.at(c, j) = rng.next_uniform(-init_scale, init_scale);
  }
  return grown;
}

IouReport miou(const std::vector<int>& predictions,
               const std::vector<int>& labels, std::size_t num_classes) {
  if (predictions.empty() || num_classes == 0)
    throw std::invalid_argument("miou: empty evaluation set");
  if (predictions.size() != labels.size())
    throw std::invalid_argument("miou: prediction/label count mismatch");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0),
      fn(num_classes, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if (p < 0 || y < 0 || static_cast<std::size_t>(p) >= num_classes ||
        static_cast<std::size_t>(y) >= num_classes)
      throw std::invalid_argument("miou: label outside the evaluation space");
    if (p == y) {
      ++tp[static_cast<std::size_t>(y)];
    } else {
      ++fp[static_cast<std::size_t>(p)];
      ++fn[static_cast<std::size_t>(y)];
    }
  }
  IouReport report;
  report.per_class.assign(num_classes,
                          std::numeric_limits<double>::quiet_NaN());
  report.present.assign(num_classes, 0);
  double sum = 0.0;
  std::size_t live = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    report.present[c] = 1;
    report.per_class[c] =
        static_cast<double>(tp[c]) / static_cast<double>(denom);
    sum += report.per_class[c];
    ++live;
  }
  report.mean = sum / static_cast<double>(live);
  return report;
}

double subset_miou(const IouReport& report, std::size_t first,
                   std::size_t last) {
  last = std::min(last, report.per_class.size());
  double sum = 0.0;
  std::size_t live = 0;
  for (std::size_t c = first; c < last; ++c) {
    if (!report.present[c]) continue;
    sum += report.per_class[c];
    ++live;
  }
  if (live == 0)
    throw std::invalid_argument("miou: no class present in the subset");
  return sum / static_cast<double>(live);
}

LinearModel incremental_step(const LinearModel& old_model,
                             const Matrix& features,
                             const std::vector<int>& labels,
                             std::size_t new_count,
                             const IncrementalConfig& config, RngStream& rng) {
  const std::size_t n = features.rows;
  if (n == 0 || labels.size() != n)
    throw std::invalid_argument("incremental step: bad dataset");
  const LabelSpace space = make_label_space(old_model.W.rows, new_count);
  for (const int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= space.total() ||
        !space.in_new_set(static_cast<std::size_t>(y)))
      throw std::invalid_argument(
          "incremental step: label outside the new-class set");

  LinearModel model =
      extend_classifier(old_model, new_count,
                        config.method == IncrementalMethod::mib, rng,
                        config.init_scale);
  const Matrix old_probs = row_softmax(linear_forward(old_model, features));

  const std::size_t bsz = std::min(config.batch, n);
  for (std::size_t step = 0; step < config.steps; ++step) {
    Matrix bx(bsz, features.cols);
    PixelBatch batch;
    batch.space = space;
    batch.old_probs = Matrix(bsz, space.old_count);
    batch.labels.resize(bsz);
    for (std::size_t r = 0; r < bsz; ++r) {
      const std::size_t pick = rng.next_below(n);
      bx.set_row(r, features.row(pick));
      batch.old_probs.set_row(r, old_probs.row(pick));
      batch.labels[r] = labels[pick];
    }
    batch.logits = linear_forward(model, bx);

    Matrix grad;
    switch (config.method) {
      case IncrementalMethod::mib: {
        grad = mib_ce_grad(batch);
        if (config.lambda != 0.0) {
          const Matrix kd = mib_kd_grad(batch);
          for (std::size_t i = 0; i < grad.data.size(); ++i)
            grad.data[i] += config.lambda * kd.data[i];
        }
        break;
      }
      case IncrementalMethod::finetune:
        grad = plain_ce_grad(batch);
        break;
      case IncrementalMethod::lwf: {
        grad = plain_ce_grad(batch);
        if (config.lambda != 0.0) {
          const Matrix kd = lwf_kd_grad(batch);
          for (std::size_t i = 0; i < grad.data.size(); ++i)
            grad.data[i] += config.lambda * kd.data[i];
        }
        break;
      }
    }

    LinearGrads acc = zero_grads(model);
    for (std::size_t r = 0; r < bsz; ++r)
      linear_backward(model, bx.row(r), grad.row(r), acc);
    for (std::size_t i = 0; i < model.W.data.size(); ++i)
      model.W.data[i] -= config.learning_rate * acc.dW.data[i];
    for (std::size_t i = 0; i < model.b.size(); ++i)
      model.b[i] -= config.learning_rate * acc.db[i];
  }
  return model;
}

std::vector<int> predict_labels(const LinearModel& model,
                                const Matrix& features) {
  const Matrix logits = linear_forward(model, features);
  std::vector<int> out(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i)
    out[i] = static_cast<int>(argmax_index(logits.row(i)));
  return out;
}

}  // namespace shiftlab
