#include "shiftlab/openworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "shiftlab/numerics.hpp"

namespace shiftlab {

namespace {

double squared_distance(const double* a, const double* b, std::size_t n) {
  double d2 = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double diff = a[j] - b[j];
    d2 += diff * diff;
  }
  return d2;
}

double squared_distance(const std::vector<double>& a,
                        const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("dimension mismatch");
  return squared_distance(a.data(), b.data(), a.size());
}

void check_batch(const Matrix& features, const std::vector<int>& labels) {
  if (features.rows != labels.size())
    throw std::invalid_argument("one label per feature row required");
  if (features.rows == 0) throw std::invalid_argument("empty batch");
  for (int l : labels)
    if (l < 0) throw std::invalid_argument("labels must be non-negative");
}

void check_label_range(const std::vector<int>& labels, std::size_t classes) {
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw std::invalid_argument("label outside the class range");
}

// relevance of a stored vector: distance to its class centroid
double entry_relevance(const std::vector<double>& feature,
                       const ClassStore& store, int id) {
  const auto& centroid = store.classes[store_index(store, id)].centroid;
  return std::sqrt(squared_distance(feature, centroid));
}

}  // namespace

void validate_store(const ClassStore& store) {
  if (!(store.sigma2 > 0.0) || !std::isfinite(store.sigma2))
    throw std::invalid_argument("sigma2 must be positive and finite");
  if (!std::isfinite(store.global_delta))
    throw std::invalid_argument("global threshold must be finite");
  std::size_t dim = 0;
  for (const auto& entry : store.classes) {
    if (entry.centroid.empty())
      throw std::invalid_argument("empty centroid");
    if (dim == 0) dim = entry.centroid.size();
    if (entry.centroid.size() != dim)
      throw std::invalid_argument("inconsistent centroid dimensions");
    if (!all_finite(entry.centroid) || !std::isfinite(entry.count) ||
        !std::isfinite(entry.delta))
      throw std::invalid_argument("non-finite class entry");
    if (entry.count < 0.0) throw std::invalid_argument("negative count");
    for (const auto& other : store.classes)
      if (&other != &entry && other.id == entry.id)
        throw std::invalid_argument("duplicate class id");
  }
}

Matrix centroid_matrix(const ClassStore& store) {
  if (store.classes.empty()) throw std::invalid_argument("empty store");
  Matrix m(store.classes.size(), store.classes.front().centroid.size());
  for (std::size_t k = 0; k < store.classes.size(); ++k)
    m.set_row(k, store.classes[k].centroid);
  return m;
}

std::size_t store_index(const ClassStore& store, int label) {
  for (std::size_t k = 0; k < store.classes.size(); ++k)
    if (store.classes[k].id == label) return k;
  throw std::invalid_argument("label not present in the store");
}

std::string store_to_json(const ClassStore& store) {
  validate_store(store);
  nlohmann::ordered_json doc;
  doc["version"] = 1;
  doc["global_delta"] = store.global_delta;
  doc["sigma2"] = store.sigma2;
  doc["classes"] = nlohmann::ordered_json::array();
  for (const auto& entry : store.classes) {
    nlohmann::ordered_json row;
    row["id"] = entry.id;
    row["centroid"] = entry.centroid;
    row["count"] = entry.count;
    row["delta"] = entry.delta;
    doc["classes"].push_back(row);
  }
  return doc.dump(2);
}

ClassStore store_from_json(const std::string& text) {
  ClassStore store;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("version").get<int>() != 1)
      throw std::invalid_argument("unsupported store version");
    store.global_delta = doc.at("global_delta").get<double>();
    store.sigma2 = doc.at("sigma2").get<double>();
    for (const auto& row : doc.at("classes")) {
      ClassEntry entry;
      entry.id = row.at("id").get<int>();
      entry.centroid = row.at("centroid").get<std::vector<double>>();
      entry.count = row.at("count").get<double>();
      entry.delta = row.at("delta").get<double>();
      store.classes.push_back(entry);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad class store: ") + e.what());
  }
  validate_store(store);
  return store;
}

// --- scores and predictions -------------------------------------------------

double nno_score(const std::vector<double>& feature,
                 const std::vector<double>& centroid, double tau, double z) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  const double d = std::sqrt(squared_distance(feature, centroid));
  return z * (1.0 - d / tau);
}

double dnno_score(const std::vector<double>& feature,
                  const std::vector<double>& centroid) {
  return std::exp(-0.5 * std::sqrt(squared_distance(feature, centroid)));
}

int dnno_predict(const std::vector<double>& scores, double delta) {
  if (scores.empty()) throw std::invalid_argument("no scores");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[best]) best = k;
  if (scores[best] <= delta) return kUnknown;
  return static_cast<int>(best);
}

int bdoc_predict(const std::vector<double>& feature, const ClassStore& store) {
  if (store.classes.empty()) throw std::invalid_argument("empty store");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  bool admitted = false;
  for (std::size_t k = 0; k < store.classes.size(); ++k) {
    const double d =
        squared_distance(feature, store.classes[k].centroid) / store.sigma2;
    if (d < best_d) {
      best_d = d;
      best = k;
    }
    admitted = admitted || d <= store.classes[k].delta;
  }
  if (!admitted) return kUnknown;
  return store.classes[best].id;
}

// --- streaming statistics ----------------------------------------------------

void update_means(ClassStore& store, const Matrix& features,
                  const std::vector<int>& labels) {
  check_batch(features, labels);
  std::map<int, std::pair<std::vector<double>, double>> sums;
  for (std::size_t i = 0; i < features.rows; ++i) {
    auto& slot = sums[labels[i]];
    if (slot.first.empty()) slot.first.assign(features.cols, 0.0);
    for (std::size_t j = 0; j < features.cols; ++j)
      slot.first[j] += features.at(i, j);
    slot.second += 1.0;
  }
  for (auto& [label, slot] : sums) {
    for (auto& v : slot.first) v /= slot.second;
    bool found = false;
    for (auto& entry : store.classes) {
      if (entry.id != label) continue;
      if (entry.centroid.size() != features.cols)
        throw std::invalid_argument("feature dimension mismatch");
      const double total = entry.count + slot.second;
      for (std::size_t j = 0; j < features.cols; ++j)
        entry.centroid[j] = (entry.count * entry.centroid[j] +
                             slot.second * slot.first[j]) /
                            total;
      entry.count = total;
      found = true;
      break;
    }
    if (!found) {
      ClassEntry entry;
      entry.id = label;
      entry.centroid = slot.first;
      entry.count = slot.second;
      store.classes.push_back(entry);
    }
  }
}

double update_threshold(double delta, std::size_t t, const Matrix& scores,
                        const std::vector<int>& labels, double w_plus,
                        double w_minus) {
  if (!(w_plus > 0.0) || !(w_minus > 0.0))
    throw std::invalid_argument("weights must be positive");
  check_batch(scores, labels);
  check_label_range(labels, scores.cols);
  std::map<int, std::pair<double, double>> per_class;  // weighted sum, weight
  for (std::size_t i = 0; i < scores.rows; ++i) {
    const double s = scores.at(i, static_cast<std::size_t>(labels[i]));
    const double w = s > delta ? w_plus : w_minus;
    auto& slot = per_class[labels[i]];
    slot.first += w * s;
    slot.second += w;
  }
  double mean = 0.0;
  for (const auto& [label, slot] : per_class)
    mean += slot.first / slot.second;
  mean /= static_cast<double>(per_class.size());
  return (static_cast<double>(t) * delta + mean) / static_cast<double>(t + 1);
}

double pooled_variance(const Matrix& features) {
  if (features.data.empty()) throw std::invalid_argument("empty matrix");
  double mean = 0.0;
  for (double v : features.data) mean += v;
  mean /= static_cast<double>(features.data.size());
  double var = 0.0;
  for (double v : features.data) var += (v - mean) * (v - mean);
  return var / static_cast<double>(features.data.size());
}

// --- losses over extracted features ------------------------------------------

double dnno_ce(const Matrix& features, const std::vector<int>& labels,
               const Matrix& centroids) {
  check_batch(features, labels);
  check_label_range(labels, centroids.rows);
  double loss = 0.0;
  for (std::size_t i = 0; i < features.rows; ++i) {
    for (std::size_t c = 0; c < centroids.rows; ++c) {
      const double r = std::sqrt(
          squared_distance(&features.data[i * features.cols],
                           &centroids.data[c * centroids.cols],
                           features.cols));
      const double s = std::exp(-0.5 * r);
      if (static_cast<std::size_t>(labels[i]) == c)
        loss -= safe_log(s);
      else
        loss -= safe_log(1.0 - s);
    }
  }
  return loss / static_cast<double>(features.rows);
}

Matrix dnno_ce_grad(const Matrix& features, const std::vector<int>& labels,
                    const Matrix& centroids) {
  check_batch(features, labels);
  check_label_range(labels, centroids.rows);
  Matrix grad(features.rows, features.cols);
  const double inv_n = 1.0 / static_cast<double>(features.rows);
  for (std::size_t i = 0; i < features.rows; ++i) {
    for (std::size_t c = 0; c < centroids.rows; ++c) {
      const double r = std::sqrt(
          squared_distance(&features.data[i * features.cols],
                           &centroids.data[c * centroids.cols],
                           features.cols));
      if (r <= 1e-12) continue;  // at the centroid the norm has no gradient
      const double s = std::exp(-0.5 * r);
      double coeff;
      if (static_cast<std::size_t>(labels[i]) == c) {
        if (s <= kProbFloor) continue;  // clamped log region is flat
        coeff = 0.5;
      } else {
        if (1.0 - s <= kProbFloor) continue;
        coeff = -0.5 * s / (1.0 - s);
      }
      for (std::size_t j = 0; j < features.cols; ++j)
        grad.at(i, j) += inv_n * coeff *
                         (features.at(i, j) - centroids.at(c, j)) / r;
    }
  }
  return grad;
}

double distill_penalty(const Matrix& features, const Matrix& old_features) {
  if (!features.same_shape(old_features))
    throw std::invalid_argument("feature shape mismatch");
  if (features.rows == 0) throw std::invalid_argument("empty batch");
  double loss = 0.0;
  for (std::size_t i = 0; i < features.rows; ++i)
    loss += std::sqrt(squared_distance(&features.data[i * features.cols],
                                       &old_features.data[i * features.cols],
                                       features.cols));
  return loss / static_cast<double>(features.rows);
}

Matrix distill_penalty_grad(const Matrix& features,
                            const Matrix& old_features) {
  if (!features.same_shape(old_features))
    throw std::invalid_argument("feature shape mismatch");
  Matrix grad(features.rows, features.cols);
  const double inv_n = 1.0 / static_cast<double>(features.rows);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const double r = std::sqrt(
        squared_distance(&features.data[i * features.cols],
                         &old_features.data[i * features.cols],
                         features.cols));
    if (r <= 1e-12) continue;
    for (std::size_t j = 0; j < features.cols; ++j)
      grad.at(i, j) =
          inv_n * (features.at(i, j) - old_features.at(i, j)) / r;
  }
  return grad;
}

double dnno_loss(const Matrix& features, const std::vector<int>& labels,
                 const Matrix& centroids, const Matrix& old_features,
                 double lambda) {
  double loss = dnno_ce(features, labels, centroids);
  if (old_features.rows > 0)
    loss += lambda * distill_penalty(features, old_features);
  return loss;
}

Matrix dnno_loss_grad(const Matrix& features, const std::vector<int>& labels,
                      const Matrix& centroids, const Matrix& old_features,
                      double lambda) {
  Matrix grad = dnno_ce_grad(features, labels, centroids);
  if (old_features.rows > 0) {
    const Matrix dist = distill_penalty_grad(features, old_features);
    for (std::size_t i = 0; i < grad.data.size(); ++i)
      grad.data[i] += lambda * dist.data[i];
  }
  return grad;
}

double bdoc_global(const Matrix& features, const std::vector<int>& labels,
                   const Matrix& centroids, double sigma2) {
  check_batch(features, labels);
  check_label_range(labels, centroids.rows);
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
  double loss = 0.0;
  for (std::size_t i = 0; i < features.rows; ++i) {
    std::vector<double> logits(centroids.rows);
    for (std::size_t c = 0; c < centroids.rows; ++c)
      logits[c] = -squared_distance(&features.data[i * features.cols],
                                    &centroids.data[c * centroids.cols],
                                    features.cols) /
                  sigma2;
    const double m = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (double l : logits) lse += std::exp(l - m);
    loss += std::log(lse) + m - logits[static_cast<std::size_t>(labels[i])];
  }
  return loss / static_cast<double>(features.rows);
}

Matrix bdoc_global_grad(const Matrix& features, const std::vector<int>& labels,
                        const Matrix& centroids, double sigma2) {
  check_batch(features, labels);
  check_label_range(labels, centroids.rows);
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
  Matrix grad(features.rows, features.cols);
  const double inv_n = 1.0 / static_cast<double>(features.rows);
  for (std::size_t i = 0; i < features.rows; ++i) {
    std::vector<double> logits(centroids.rows);
    for (std::size_t c = 0; c < centroids.rows; ++c)
      logits[c] = -squared_distance(&features.data[i * features.cols],
                                    &centroids.data[c * centroids.cols],
                                    features.cols) /
                  sigma2;
    const std::vector<double> p = softmax(logits);
    for (std::size_t c = 0; c < centroids.rows; ++c) {
      const double dlogit =
          p[c] - (static_cast<std::size_t>(labels[i]) == c ? 1.0 : 0.0);
      for (std::size_t j = 0; j < features.cols; ++j)
        grad.at(i, j) += inv_n * dlogit * (-2.0 / sigma2) *
                         (features.at(i, j) - centroids.at(c, j));
    }
  }
  return grad;
}

double bdoc_local(const Matrix& features, const std::vector<int>& labels,
                  double sigma2, std::size_t* anchors_out) {
  check_batch(features, labels);
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
  double loss = 0.0;
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < features.rows; ++i) {
    double shift = -std::numeric_limits<double>::infinity();
    bool has_peer = false;
    for (std::size_t k = 0; k < features.rows; ++k) {
      if (k == i) continue;
      const double x = -squared_distance(&features.data[i * features.cols],
                                         &features.data[k * features.cols],
                                         features.cols) /
                       sigma2;
      shift = std::max(shift, x);
      has_peer = has_peer || labels[k] == labels[i];
    }
    if (!has_peer) continue;
    double same = 0.0, all = 0.0;
    for (std::size_t k = 0; k < features.rows; ++k) {
      if (k == i) continue;
      const double e =
          std::exp(-squared_distance(&features.data[i * features.cols],
                                     &features.data[k * features.cols],
                                     features.cols) /
                       sigma2 -
                   shift);
      all += e;
      if (labels[k] == labels[i]) same += e;
    }
    loss += std::log(all) - std::log(std::max(same, 1e-300));
    ++anchors;
  }
  if (anchors_out != nullptr) *anchors_out = anchors;
  if (anchors == 0)
    throw std::invalid_argument("no anchor has a same-class peer");
  return loss / static_cast<double>(anchors);
}

Matrix bdoc_local_grad(const Matrix& features, const std::vector<int>& labels,
                       double sigma2) {
  check_batch(features, labels);
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
  Matrix grad(features.rows, features.cols);
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < features.rows; ++i) {
    bool has_peer = false;
    for (std::size_t k = 0; k < features.rows; ++k)
      if (k != i && labels[k] == labels[i]) has_peer = true;
    if (has_peer) ++anchors;
  }
  if (anchors == 0)
    throw std::invalid_argument("no anchor has a same-class peer");
  const double inv_n = 1.0 / static_cast<double>(anchors);
  for (std::size_t i = 0; i < features.rows; ++i) {
    double shift = -std::numeric_limits<double>::infinity();
    bool has_peer = false;
    for (std::size_t k = 0; k < features.rows; ++k) {
      if (k == i) continue;
      shift = std::max(shift,
                       -squared_distance(&features.data[i * features.cols],
                                         &features.data[k * features.cols],
                                         features.cols) /
                           sigma2);
      has_peer = has_peer || labels[k] == labels[i];
    }
    if (!has_peer) continue;
    double same = 0.0, all = 0.0;
    for (std::size_t k = 0; k < features.rows; ++k) {
      if (k == i) continue;
      const double e =
          std::exp(-squared_distance(&features.data[i * features.cols],
                                     &features.data[k * features.cols],
                                     features.cols) /
                       sigma2 -
                   shift);
      all += e;
      if (labels[k] == labels[i]) same += e;
    }
    same = std::max(same, 1e-300);
    for (std::size_t k = 0; k < features.rows; ++k) {
      if (k == i) continue;
      const double e =
          std::exp(-squared_distance(&features.data[i * features.cols],
                                     &features.data[k * features.cols],
                                     features.cols) /
                       sigma2 -
                   shift);
      const double coeff =
          (labels[k] == labels[i] ? -1.0 / same : 0.0) + 1.0 / all;
      for (std::size_t j = 0; j < features.cols; ++j) {
        const double pull = coeff * e * (-2.0 / sigma2) *
                            (features.at(i, j) - features.at(k, j));
        grad.at(i, j) += inv_n * pull;
        grad.at(k, j) -= inv_n * pull;
      }
    }
  }
  return grad;
}

double bdoc_loss(const Matrix& features, const std::vector<int>& labels,
                 const Matrix& centroids, double sigma2,
                 const Matrix& old_features, double lambda, double gamma) {
  double loss = bdoc_global(features, labels, centroids, sigma2) +
                lambda * bdoc_local(features, labels, sigma2);
  if (old_features.rows > 0)
    loss += gamma * distill_penalty(features, old_features);
  return loss;
}

Matrix bdoc_loss_grad(const Matrix& features, const std::vector<int>& labels,
                      const Matrix& centroids, double sigma2,
                      const Matrix& old_features, double lambda,
                      double gamma) {
  Matrix grad = bdoc_global_grad(features, labels, centroids, sigma2);
  const Matrix local = bdoc_local_grad(features, labels, sigma2);
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    grad.data[i] += lambda * local.data[i];
  if (old_features.rows > 0) {
    const Matrix dist = distill_penalty_grad(features, old_features);
    for (std::size_t i = 0; i < grad.data.size(); ++i)
      grad.data[i] += gamma * dist.data[i];
  }
  return grad;
}

// --- per-class rejection thresholds ------------------------------------------

double threshold_loss(const Matrix& features, const std::vector<int>& labels,
                      const ClassStore& store,
                      const std::vector<double>& deltas) {
  check_batch(features, labels);
  if (deltas.size() != store.classes.size())
    throw std::invalid_argument("one threshold per class required");
  double loss = 0.0;
  for (std::size_t i = 0; i < features.rows; ++i) {
    for (std::size_t k = 0; k < store.classes.size(); ++k) {
      const double d =
          squared_distance(features.row(i), store.classes[k].centroid) /
          store.sigma2;
      if (store.classes[k].id == labels[i])
        loss += std::max(0.0, d - deltas[k]);
      else
        loss += std::max(0.0, deltas[k] - d);
    }
  }
  return loss;
}

ThresholdResult learn_thresholds(const Matrix& features,
                                 const std::vector<int>& labels,
                                 const ClassStore& store, double learning_rate,
                                 std::size_t steps) {
  check_batch(features, labels);
  validate_store(store);
  for (int l : labels) store_index(store, l);  // every label must be known

  const std::size_t classes = store.classes.size();
  // distances of every sample to every class centroid, scaled by sigma2
  Matrix dist(features.rows, classes);
  for (std::size_t i = 0; i < features.rows; ++i)
    for (std::size_t k = 0; k < classes; ++k)
      dist.at(i, k) =
          squared_distance(features.row(i), store.classes[k].centroid) /
          store.sigma2;

  ThresholdResult result;
  result.deltas.resize(classes);
  result.updated.assign(classes, 0);
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<double> in_class;
    for (std::size_t i = 0; i < features.rows; ++i)
      if (store.classes[k].id == labels[i]) in_class.push_back(dist.at(i, k));
    if (in_class.empty()) {
      result.deltas[k] = store.classes[k].delta;
      continue;
    }
    std::sort(in_class.begin(), in_class.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(0.95 * static_cast<double>(in_class.size())));
    result.deltas[k] = in_class[std::max<std::size_t>(rank, 1) - 1];
    result.updated[k] = 1;
  }

  for (std::size_t step = 0; step < steps; ++step) {
    for (std::size_t k = 0; k < classes; ++k) {
      if (!result.updated[k]) continue;
      double subgrad = 0.0;
      for (std::size_t i = 0; i < features.rows; ++i) {
        const double d = dist.at(i, k);
        if (store.classes[k].id == labels[i]) {
          if (d > result.deltas[k]) subgrad -= 1.0;
        } else {
          if (d < result.deltas[k]) subgrad += 1.0;
        }
      }
      result.deltas[k] =
          std::max(0.0, result.deltas[k] - learning_rate * subgrad);
    }
  }
  return result;
}

// --- episodic memory ----------------------------------------------------------

EpisodicMemory make_memory(std::size_t capacity, double heldout_fraction) {
  if (capacity == 0) throw std::invalid_argument("capacity must be positive");
  if (heldout_fraction < 0.0 || heldout_fraction >= 1.0)
    throw std::invalid_argument("heldout fraction must lie in [0, 1)");
  EpisodicMemory memory;
  memory.capacity = capacity;
  memory.heldout_fraction = heldout_fraction;
  return memory;
}

std::size_t memory_total(const EpisodicMemory& memory) {
  std::size_t total = 0;
  for (const auto& cls : memory.classes) total += cls.entries.size();
  return total;
}

std::size_t heldout_count(const EpisodicMemory& memory,
                          std::size_t class_pos) {
  if (class_pos >= memory.classes.size())
    throw std::invalid_argument("class position out of range");
  const std::size_t n = memory.classes[class_pos].entries.size();
  return static_cast<std::size_t>(
      std::ceil(memory.heldout_fraction * static_cast<double>(n)));
}

void memory_update(EpisodicMemory& memory, const Matrix& features,
                   const std::vector<int>& labels, const ClassStore& store) {
  if (features.rows != labels.size())
    throw std::invalid_argument("one label per feature row required");
  for (std::size_t i = 0; i < features.rows; ++i) {
    MemoryClass* slot = nullptr;
    for (auto& cls : memory.classes)
      if (cls.id == labels[i]) slot = &cls;
    if (slot == nullptr) {
      memory.classes.push_back({labels[i], {}});
      slot = &memory.classes.back();
    }
    slot->entries.push_back({features.row(i), 0.0});
  }
  // re-rank everything against the current centroids
  for (auto& cls : memory.classes) {
    for (auto& entry : cls.entries)
      entry.relevance = entry_relevance(entry.feature, store, cls.id);
    std::stable_sort(cls.entries.begin(), cls.entries.end(),
                     [](const MemoryEntry& a, const MemoryEntry& b) {
                       return a.relevance < b.relevance;
                     });
  }
  // prune least-relevant entries of the largest classes down to capacity
  while (memory_total(memory) > memory.capacity) {
    std::size_t victim = 0;
    for (std::size_t k = 1; k < memory.classes.size(); ++k) {
      const std::size_t a = memory.classes[k].entries.size();
      const std::size_t b = memory.classes[victim].entries.size();
      if (a > b ||
          (a == b && a > 0 &&
           memory.classes[k].entries.back().relevance >
               memory.classes[victim].entries.back().relevance))
        victim = k;
    }
    memory.classes[victim].entries.pop_back();
  }
}

SampledBatch balanced_batch(const EpisodicMemory& memory,
                            const Matrix& new_features,
                            const std::vector<int>& new_labels, double ratio,
                            std::size_t batch, RngStream& rng) {
  if (new_features.rows != new_labels.size())
    throw std::invalid_argument("one label per feature row required");
  if (batch == 0) throw std::invalid_argument("empty batch request");
  if (ratio < 0.0 || ratio > 1.0)
    throw std::invalid_argument("memory ratio must lie in [0, 1]");

  // training pool: every entry below the heldout tail of its class
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t k = 0; k < memory.classes.size(); ++k) {
    const std::size_t n = memory.classes[k].entries.size();
    const std::size_t held = heldout_count(memory, k);
    for (std::size_t e = 0; e + held < n; ++e) pool.emplace_back(k, e);
  }
  std::size_t from_memory =
      static_cast<std::size_t>(ratio * static_cast<double>(batch));
  if (pool.empty()) from_memory = 0;
  if (from_memory < batch && new_features.rows == 0)
    throw std::invalid_argument("no new data to fill the batch");

  const std::size_t dim =
      new_features.rows > 0 ? new_features.cols
                            : memory.classes.front().entries.front()
                                  .feature.size();
  SampledBatch out;
  out.features = Matrix(batch, dim);
  out.labels.resize(batch);
  out.from_memory = from_memory;
  for (std::size_t i = 0; i < from_memory; ++i) {
    const auto [k, e] = pool[rng.next_below(pool.size())];
    out.features.set_row(i, memory.classes[k].entries[e].feature);
    out.labels[i] = memory.classes[k].id;
  }
  for (std::size_t i = from_memory; i < batch; ++i) {
    const std::size_t r = rng.next_below(new_features.rows);
    out.features.set_row(i, new_features.row(r));
    out.labels[i] = new_labels[r];
  }
  return out;
}

// --- evaluation ----------------------------------------------------------------

OwrReport owr_metrics(const std::vector<int>& closed_preds,
                      const std::vector<int>& closed_rej_preds,
                      const std::vector<int>& closed_labels,
                      const std::vector<int>& open_preds) {
  if (closed_labels.empty() || open_preds.empty())
    throw std::invalid_argument("both evaluation pools must be non-empty");
  if (closed_preds.size() != closed_labels.size() ||
      closed_rej_preds.size() != closed_labels.size())
    throw std::invalid_argument("closed-set prediction count mismatch");
  OwrReport report;
  const double n = static_cast<double>(closed_labels.size());
  for (std::size_t i = 0; i < closed_labels.size(); ++i) {
    report.closed_acc += closed_preds[i] == closed_labels[i] ? 1.0 : 0.0;
    report.closed_rej_acc +=
        closed_rej_preds[i] == closed_labels[i] ? 1.0 : 0.0;
  }
  report.closed_acc /= n;
  report.closed_rej_acc /= n;
  for (int p : open_preds) report.open_acc += p == kUnknown ? 1.0 : 0.0;
  report.open_acc /= static_cast<double>(open_preds.size());
  report.owr = 0.5 * (report.closed_rej_acc + report.open_acc);
  const double sum = report.closed_rej_acc + report.open_acc;
  report.owr_h =
      sum > 0.0 ? 2.0 * report.closed_rej_acc * report.open_acc / sum : 0.0;
  return report;
}

// --- desk-scale trainers --------------------------------------------------------

namespace {

std::size_t dense_class_count(const std::vector<int>& labels) {
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("labels must be non-negative");
    max_label = std::max(max_label, l);
  }
  const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
  std::vector<char> seen(classes, 0);
  for (int l : labels) seen[static_cast<std::size_t>(l)] = 1;
  for (char s : seen)
    if (!s) throw std::invalid_argument("labels must be dense 0..C-1");
  return classes;
}

struct MiniBatch {
  Matrix inputs;
  std::vector<int> labels;
};

MiniBatch sample_batch(const Matrix& inputs, const std::vector<int>& labels,
                       std::size_t batch, RngStream& rng) {
  MiniBatch out;
  out.inputs = Matrix(batch, inputs.cols);
  out.labels.resize(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t r = rng.next_below(inputs.rows);
    out.inputs.set_row(i, inputs.row(r));
    out.labels[i] = labels[r];
  }
  return out;
}

void apply_feature_grads(LinearModel& model, const Matrix& inputs,
                         const Matrix& feature_grads, double lr) {
  LinearGrads acc = zero_grads(model);
  for (std::size_t r = 0; r < inputs.rows; ++r)
    linear_backward(model, inputs.row(r), feature_grads.row(r), acc);
  for (std::size_t i = 0; i < model.W.data.size(); ++i)
    model.W.data[i] -= lr * acc.dW.data[i];
  for (std::size_t i = 0; i < model.b.size(); ++i)
    model.b[i] -= lr * acc.db[i];
}

std::vector<int> store_positions(const ClassStore& store,
                                 const std::vector<int>& labels) {
  std::vector<int> positions(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    positions[i] = static_cast<int>(store_index(store, labels[i]));
  return positions;
}

// Stand-in for a pretrained backbone: anchor the random extractor at the
// identity so the input geometry survives until fine-tuning reshapes it.
LinearModel warm_extractor(std::size_t out, std::size_t in, RngStream& rng) {
  LinearModel model = make_linear(out, in, rng);
  for (std::size_t j = 0; j < std::min(out, in); ++j)
    model.W.at(j, j) += 1.0;
  return model;
}

}  // namespace

DeepNnoModel train_deep_nno(const Matrix& inputs,
                            const std::vector<int>& labels,
                            const OwrConfig& config, RngStream& rng) {
  check_batch(inputs, labels);
  dense_class_count(labels);
  DeepNnoModel model;
  model.extractor = warm_extractor(config.feature_dim, inputs.cols, rng);
  update_means(model.store, linear_forward(model.extractor, inputs), labels);

  for (std::size_t step = 0; step < config.steps; ++step) {
    const MiniBatch batch = sample_batch(inputs, labels, config.batch, rng);
    const Matrix features = linear_forward(model.extractor, batch.inputs);
    const Matrix grads = dnno_loss_grad(features, batch.labels,
                                        centroid_matrix(model.store), Matrix(),
                                        config.lambda);
    apply_feature_grads(model.extractor, batch.inputs, grads,
                        config.learning_rate);

    // refresh the online statistics with the post-step features
    const Matrix fresh = linear_forward(model.extractor, batch.inputs);
    update_means(model.store, fresh, batch.labels);
    Matrix scores(fresh.rows, model.store.classes.size());
    for (std::size_t i = 0; i < fresh.rows; ++i)
      for (std::size_t k = 0; k < model.store.classes.size(); ++k)
        scores.at(i, k) =
            dnno_score(fresh.row(i), model.store.classes[k].centroid);
    model.store.global_delta = update_threshold(
        model.store.global_delta, model.updates, scores,
        store_positions(model.store, batch.labels), config.w_plus,
        config.w_minus);
    ++model.updates;
  }
  return model;
}

BdocModel train_bdoc(const Matrix& inputs, const std::vector<int>& labels,
                     const OwrConfig& config, RngStream& rng) {
  check_batch(inputs, labels);
  const std::size_t classes = dense_class_count(labels);

  // reserve a heldout slice of every class for threshold learning
  std::vector<std::size_t> heldout, train;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == static_cast<int>(c)) members.push_back(i);
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[rng.next_below(i)]);
    const std::size_t held = static_cast<std::size_t>(std::ceil(
        config.heldout_fraction * static_cast<double>(members.size())));
    if (held >= members.size())
      throw std::invalid_argument("heldout slice leaves no training data");
    heldout.insert(heldout.end(), members.begin(), members.begin() + held);
    train.insert(train.end(), members.begin() + held, members.end());
  }
  auto take = [&](const std::vector<std::size_t>& rows, Matrix* x,
                  std::vector<int>* y) {
    *x = Matrix(rows.size(), inputs.cols);
    y->resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      x->set_row(i, inputs.row(rows[i]));
      (*y)[i] = labels[rows[i]];
    }
  };
  Matrix train_x, held_x;
  std::vector<int> train_y, held_y;
  take(train, &train_x, &train_y);
  take(heldout, &held_x, &held_y);

  BdocModel model;
  model.extractor = warm_extractor(config.feature_dim, inputs.cols, rng);
  const Matrix initial = linear_forward(model.extractor, train_x);
  update_means(model.store, initial, train_y);
  model.store.sigma2 = std::max(pooled_variance(initial), 1e-8);

  for (std::size_t step = 0; step < config.steps; ++step) {
    const MiniBatch batch = sample_batch(train_x, train_y, config.batch, rng);
    const Matrix features = linear_forward(model.extractor, batch.inputs);
    // the loss normalizes by the batch variance; the running value is kept
    // for inference only
    const double batch_sigma2 = std::max(pooled_variance(features), 1e-8);
    const Matrix grads = bdoc_loss_grad(features, batch.labels,
                                        centroid_matrix(model.store),
                                        batch_sigma2, Matrix(), config.lambda,
                                        config.gamma);
    apply_feature_grads(model.extractor, batch.inputs, grads,
                        config.learning_rate);

    const Matrix fresh = linear_forward(model.extractor, batch.inputs);
    update_means(model.store, fresh, batch.labels);
    model.store.sigma2 =
        (1.0 - config.sigma_momentum) * model.store.sigma2 +
        config.sigma_momentum * std::max(pooled_variance(fresh), 1e-8);
  }

  const Matrix held_features = linear_forward(model.extractor, held_x);
  const ThresholdResult thresholds =
      learn_thresholds(held_features, held_y, model.store,
                       config.delta_learning_rate, config.delta_steps);
  for (std::size_t k = 0; k < model.store.classes.size(); ++k)
    model.store.classes[k].delta = thresholds.deltas[k];
  return model;
}

int dnno_classify(const DeepNnoModel& model, const std::vector<double>& input,
                  bool allow_reject) {
  const std::vector<double> f = linear_forward(model.extractor, input);
  std::vector<double> scores(model.store.classes.size());
  for (std::size_t k = 0; k < scores.size(); ++k)
    scores[k] = dnno_score(f, model.store.classes[k].centroid);
  const int pick =
      dnno_predict(scores, allow_reject ? model.store.global_delta : -1.0);
  if (pick == kUnknown) return kUnknown;
  return model.store.classes[static_cast<std::size_t>(pick)].id;
}

int bdoc_classify(const BdocModel& model, const std::vector<double>& input,
                  bool allow_reject) {
  const std::vector<double> f = linear_forward(model.extractor, input);
  if (allow_reject) return bdoc_predict(f, model.store);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < model.store.classes.size(); ++k) {
    const double d = squared_distance(f, model.store.classes[k].centroid);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return model.store.classes[best].id;
}

}  // namespace shiftlab
