#include "shiftlab/cumix.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "shiftlab/numerics.hpp"

namespace shiftlab {

namespace {

// cross entropy of softmax(logits) against a soft target that sums to one
double soft_ce(const std::vector<double>& logits,
               const std::vector<double>& target) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double lse = 0.0;
  for (double z : logits) lse += std::exp(z - m);
  double dot = 0.0;
  for (std::size_t y = 0; y < logits.size(); ++y) dot += target[y] * logits[y];
  return std::log(lse) + m - dot;
}

std::vector<double> bank_logits(const EmbeddingBank& bank,
                                const std::vector<double>& embedded) {
  if (embedded.size() != bank.vectors.cols)
    throw std::invalid_argument("embedding dimension mismatch");
  return matvec(bank.vectors, embedded);
}

std::vector<double> onehot(std::size_t classes, std::size_t hot) {
  std::vector<double> v(classes, 0.0);
  v[hot] = 1.0;
  return v;
}

std::vector<double> label_target(const EmbeddingBank& bank, int label) {
  return onehot(bank.ids.size(), bank_index(bank, label));
}

// dL/dlogits for soft-target cross entropy, scaled by coeff
std::vector<double> ce_logit_grad(const std::vector<double>& logits,
                                  const std::vector<double>& target,
                                  double coeff) {
  std::vector<double> dz = softmax(logits);
  for (std::size_t y = 0; y < dz.size(); ++y)
    dz[y] = coeff * (dz[y] - target[y]);
  return dz;
}

std::vector<double> embed_grad(const EmbeddingBank& bank,
                               const std::vector<double>& dz) {
  std::vector<double> de(bank.vectors.cols, 0.0);
  for (std::size_t y = 0; y < bank.vectors.rows; ++y)
    for (std::size_t d = 0; d < bank.vectors.cols; ++d)
      de[d] += bank.vectors.at(y, d) * dz[y];
  return de;
}

void check_mixes(const std::vector<MixSpec>& mixes, std::size_t batch) {
  if (mixes.size() != batch)
    throw std::invalid_argument("one mix per anchor required");
  for (const auto& mix : mixes) {
    if (mix.j >= batch || mix.k >= batch)
      throw std::invalid_argument("mix partner out of range");
    if (mix.lambda < 0.0 || mix.lambda > 1.0)
      throw std::invalid_argument("lambda must lie in [0, 1]");
    if (mix.gamma != 0 && mix.gamma != 1)
      throw std::invalid_argument("gamma must be 0 or 1");
  }
}

}  // namespace

// --- curriculum schedule ------------------------------------------------------

std::pair<double, double> schedule(double s, double warmup, double beta_max) {
  if (s < 0.0) throw std::invalid_argument("epoch must be non-negative");
  if (warmup < 1.0) throw std::invalid_argument("warm-up must be >= 1 epoch");
  if (!(beta_max > 0.0))
    throw std::invalid_argument("beta_max must be positive");
  const double beta = std::min(s / warmup * beta_max, beta_max);
  const double alpha = std::max(0.0, std::min((s - warmup) / warmup, 1.0));
  return {alpha, beta};
}

// --- class embeddings ---------------------------------------------------------

void validate_bank(const EmbeddingBank& bank) {
  if (bank.ids.empty()) throw std::invalid_argument("empty embedding bank");
  if (bank.vectors.rows != bank.ids.size())
    throw std::invalid_argument("one embedding per class required");
  if (bank.vectors.cols == 0)
    throw std::invalid_argument("embeddings need at least one dimension");
  if (!all_finite(bank.vectors))
    throw std::invalid_argument("non-finite embedding");
  for (std::size_t a = 0; a < bank.ids.size(); ++a)
    for (std::size_t b = a + 1; b < bank.ids.size(); ++b)
      if (bank.ids[a] == bank.ids[b])
        throw std::invalid_argument("duplicate class id");
}

std::size_t bank_index(const EmbeddingBank& bank, int id) {
  for (std::size_t k = 0; k < bank.ids.size(); ++k)
    if (bank.ids[k] == id) return k;
  throw std::invalid_argument("class id not present in the bank");
}

std::string bank_to_json(const EmbeddingBank& bank) {
  validate_bank(bank);
  nlohmann::ordered_json doc;
  doc["dim"] = bank.vectors.cols;
  doc["classes"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < bank.ids.size(); ++k) {
    nlohmann::ordered_json row;
    row["id"] = bank.ids[k];
    row["vector"] = bank.vectors.row(k);
    doc["classes"].push_back(row);
  }
  return doc.dump(2);
}

EmbeddingBank bank_from_json(const std::string& text) {
  EmbeddingBank bank;
  try {
    const auto doc = nlohmann::json::parse(text);
    const std::size_t dim = doc.at("dim").get<std::size_t>();
    const auto& classes = doc.at("classes");
    bank.vectors = Matrix(classes.size(), dim);
    std::size_t k = 0;
    for (const auto& row : classes) {
      bank.ids.push_back(row.at("id").get<int>());
      const auto vec = row.at("vector").get<std::vector<double>>();
      if (vec.size() != dim)
        throw std::invalid_argument("embedding dimension mismatch");
      bank.vectors.set_row(k++, vec);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad embedding bank: ") +
                                e.what());
  }
  validate_bank(bank);
  return bank;
}

// --- mixing ---------------------------------------------------------------------

std::vector<double> mix2(const std::vector<double>& a_i,
                         const std::vector<double>& a_j, double lambda) {
  if (a_i.size() != a_j.size())
    throw std::invalid_argument("mix2 shape mismatch");
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("lambda must lie in [0, 1]");
  std::vector<double> out(a_i.size());
  for (std::size_t d = 0; d < out.size(); ++d)
    out[d] = lambda * a_i[d] + (1.0 - lambda) * a_j[d];
  return out;
}

std::vector<double> mix3(const std::vector<double>& a_i,
                         const std::vector<double>& a_j,
                         const std::vector<double>& a_k, double lambda,
                         int gamma) {
  if (gamma != 0 && gamma != 1)
    throw std::invalid_argument("gamma must be 0 or 1");
  if (a_i.size() != a_j.size() || a_i.size() != a_k.size())
    throw std::invalid_argument("mix3 shape mismatch");
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("lambda must lie in [0, 1]");
  const double wj = (1.0 - lambda) * static_cast<double>(gamma);
  const double wk = (1.0 - lambda) * static_cast<double>(1 - gamma);
  std::vector<double> out(a_i.size());
  for (std::size_t d = 0; d < out.size(); ++d)
    out[d] = lambda * a_i[d] + wj * a_j[d] + wk * a_k[d];
  return out;
}

std::pair<std::size_t, std::size_t> sample_triplet(
    const std::vector<int>& domains, std::size_t anchor, RngStream& rng) {
  if (anchor >= domains.size())
    throw std::invalid_argument("anchor out of range");
  std::vector<std::size_t> cross, same;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i] != domains[anchor])
      cross.push_back(i);
    else if (i != anchor)
      same.push_back(i);
  }
  if (cross.empty())
    throw std::invalid_argument("no sample from a different domain");
  if (same.empty())
    throw std::invalid_argument("no same-domain partner for the anchor");
  const std::size_t j = cross[rng.next_below(cross.size())];
  const std::size_t k = same[rng.next_below(same.size())];
  return {j, k};
}

MixPlan plan_mixes(const std::vector<int>& domains, double alpha, double beta,
                   RngStream& rng) {
  if (domains.empty()) throw std::invalid_argument("empty batch");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("alpha must lie in [0, 1]");
  if (beta < 0.0) throw std::invalid_argument("beta must be non-negative");
  auto draw = [&](std::size_t anchor) {
    MixSpec mix;
    mix.gamma = rng.next_bernoulli(alpha) ? 1 : 0;
    // Beta(0, 0) is improper; the warm-up epoch means no mixing at all
    mix.lambda = beta > 0.0 ? rng.next_beta(beta) : 1.0;
    std::vector<std::size_t> same;
    for (std::size_t i = 0; i < domains.size(); ++i)
      if (i != anchor && domains[i] == domains[anchor]) same.push_back(i);
    if (same.empty())
      throw std::invalid_argument("no same-domain partner for the anchor");
    mix.k = same[rng.next_below(same.size())];
    if (mix.gamma == 1) {
      std::vector<std::size_t> cross;
      for (std::size_t i = 0; i < domains.size(); ++i)
        if (domains[i] != domains[anchor]) cross.push_back(i);
      if (cross.empty())
        throw std::invalid_argument("no sample from a different domain");
      mix.j = cross[rng.next_below(cross.size())];
    } else {
      mix.j = anchor;  // unused at gamma = 0
    }
    return mix;
  };
  MixPlan plan;
  for (std::size_t i = 0; i < domains.size(); ++i)
    plan.image.push_back(draw(i));
  for (std::size_t i = 0; i < domains.size(); ++i)
    plan.feature.push_back(draw(i));
  return plan;
}

// --- model and losses -----------------------------------------------------------

CumixModel make_cumix_model(std::size_t input_dim, std::size_t feature_dim,
                            std::size_t embed_dim, RngStream& rng) {
  CumixModel model;
  model.f = make_linear(feature_dim, input_dim, rng);
  model.g = make_linear(embed_dim, feature_dim, rng);
  return model;
}

void validate_zsl_batch(const ZslBatch& batch, const EmbeddingBank& bank) {
  validate_bank(bank);
  if (batch.inputs.rows == 0) throw std::invalid_argument("empty batch");
  if (batch.labels.size() != batch.inputs.rows ||
      batch.domains.size() != batch.inputs.rows)
    throw std::invalid_argument("labels and domains must match the inputs");
  for (int label : batch.labels) bank_index(bank, label);
}

CumixGrads zero_cumix_grads(const CumixModel& model) {
  return {zero_grads(model.f), zero_grads(model.g)};
}

double agg_loss(const CumixModel& model, const Matrix& inputs,
                const std::vector<int>& labels, const EmbeddingBank& bank) {
  validate_bank(bank);
  if (inputs.rows == 0 || inputs.rows != labels.size())
    throw std::invalid_argument("one label per input row required");
  double loss = 0.0;
  for (std::size_t i = 0; i < inputs.rows; ++i) {
    const auto embedded =
        linear_forward(model.g, linear_forward(model.f, inputs.row(i)));
    loss += soft_ce(bank_logits(bank, embedded), label_target(bank, labels[i]));
  }
  return loss / static_cast<double>(inputs.rows);
}

double mimg_loss(const CumixModel& model, const ZslBatch& batch,
                 const std::vector<MixSpec>& mixes,
                 const EmbeddingBank& bank) {
  validate_zsl_batch(batch, bank);
  check_mixes(mixes, batch.inputs.rows);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.inputs.rows; ++i) {
    const auto& mix = mixes[i];
    const auto x_mix = mix3(batch.inputs.row(i), batch.inputs.row(mix.j),
                            batch.inputs.row(mix.k), mix.lambda, mix.gamma);
    const auto target = mix3(label_target(bank, batch.labels[i]),
                             label_target(bank, batch.labels[mix.j]),
                             label_target(bank, batch.labels[mix.k]),
                             mix.lambda, mix.gamma);
    const auto embedded =
        linear_forward(model.g, linear_forward(model.f, x_mix));
    loss += soft_ce(bank_logits(bank, embedded), target);
  }
  return loss / static_cast<double>(batch.inputs.rows);
}

double mfeat_loss(const CumixModel& model, const ZslBatch& batch,
                  const std::vector<MixSpec>& mixes,
                  const EmbeddingBank& bank) {
  validate_zsl_batch(batch, bank);
  check_mixes(mixes, batch.inputs.rows);
  const Matrix features = linear_forward(model.f, batch.inputs);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.inputs.rows; ++i) {
    const auto& mix = mixes[i];
    const auto f_mix = mix3(features.row(i), features.row(mix.j),
                            features.row(mix.k), mix.lambda, mix.gamma);
    const auto target = mix3(label_target(bank, batch.labels[i]),
                             label_target(bank, batch.labels[mix.j]),
                             label_target(bank, batch.labels[mix.k]),
                             mix.lambda, mix.gamma);
    loss += soft_ce(bank_logits(bank, linear_forward(model.g, f_mix)), target);
  }
  return loss / static_cast<double>(batch.inputs.rows);
}

double cumix_objective(const CumixModel& model, const ZslBatch& batch,
                       const EmbeddingBank& bank, const MixPlan& plan,
                       double eta_i, double eta_f, CumixGrads* grads) {
  validate_zsl_batch(batch, bank);
  check_mixes(plan.image, batch.inputs.rows);
  check_mixes(plan.feature, batch.inputs.rows);
  if (eta_i < 0.0 || eta_f < 0.0)
    throw std::invalid_argument("loss weights must be non-negative");

  const std::size_t n = batch.inputs.rows;
  const double inv_n = 1.0 / static_cast<double>(n);
  const Matrix features = linear_forward(model.f, batch.inputs);
  double loss = 0.0;

  // one backward pass through g then f for a full-chain term
  auto backward_chain = [&](const std::vector<double>& x,
                            const std::vector<double>& feature,
                            const std::vector<double>& dz) {
    const auto de = embed_grad(bank, dz);
    const auto dfeat = linear_backward(model.g, feature, de, grads->g);
    linear_backward(model.f, x, dfeat, grads->f);
  };

  for (std::size_t i = 0; i < n; ++i) {
    const auto target_i = label_target(bank, batch.labels[i]);

    // aggregation term on the raw anchor
    const auto f_i = features.row(i);
    const auto z_agg = bank_logits(bank, linear_forward(model.g, f_i));
    loss += inv_n * soft_ce(z_agg, target_i);
    if (grads != nullptr)
      backward_chain(batch.inputs.row(i), f_i,
                     ce_logit_grad(z_agg, target_i, inv_n));

    // image-level mix goes through f
    const auto& im = plan.image[i];
    const auto x_mix = mix3(batch.inputs.row(i), batch.inputs.row(im.j),
                            batch.inputs.row(im.k), im.lambda, im.gamma);
    const auto t_img = mix3(target_i, label_target(bank, batch.labels[im.j]),
                            label_target(bank, batch.labels[im.k]), im.lambda,
                            im.gamma);
    const auto f_mix = linear_forward(model.f, x_mix);
    const auto z_img = bank_logits(bank, linear_forward(model.g, f_mix));
    loss += eta_i * inv_n * soft_ce(z_img, t_img);
    if (grads != nullptr && eta_i > 0.0)
      backward_chain(x_mix, f_mix, ce_logit_grad(z_img, t_img, eta_i * inv_n));

    // feature-level mix distributes the gradient over the three extractions
    const auto& fm = plan.feature[i];
    const auto feat_mix = mix3(features.row(i), features.row(fm.j),
                               features.row(fm.k), fm.lambda, fm.gamma);
    const auto t_feat = mix3(target_i, label_target(bank, batch.labels[fm.j]),
                             label_target(bank, batch.labels[fm.k]),
                             fm.lambda, fm.gamma);
    const auto z_feat = bank_logits(bank, linear_forward(model.g, feat_mix));
    loss += eta_f * inv_n * soft_ce(z_feat, t_feat);
    if (grads != nullptr && eta_f > 0.0) {
      const auto dz = ce_logit_grad(z_feat, t_feat, eta_f * inv_n);
      const auto de = embed_grad(bank, dz);
      const auto dfeat = linear_backward(model.g, feat_mix, de, grads->g);
      const double wj = (1.0 - fm.lambda) * static_cast<double>(fm.gamma);
      const double wk = (1.0 - fm.lambda) * static_cast<double>(1 - fm.gamma);
      auto scaled = [&](double w) {
        std::vector<double> d(dfeat.size());
        for (std::size_t v = 0; v < d.size(); ++v) d[v] = w * dfeat[v];
        return d;
      };
      linear_backward(model.f, batch.inputs.row(i), scaled(fm.lambda),
                      grads->f);
      if (wj > 0.0)
        linear_backward(model.f, batch.inputs.row(fm.j), scaled(wj),
                        grads->f);
      if (wk > 0.0)
        linear_backward(model.f, batch.inputs.row(fm.k), scaled(wk),
                        grads->f);
    }
  }
  return loss;
}

double cumix_objective(const CumixModel& model, const ZslBatch& batch,
                       const EmbeddingBank& bank, const MixSchedule& state,
                       double eta_i, double eta_f, RngStream& rng) {
  const auto [alpha, beta] = schedule(state.epoch, state.warmup,
                                      state.beta_max);
  const MixPlan plan = plan_mixes(batch.domains, alpha, beta, rng);
  return cumix_objective(model, batch, bank, plan, eta_i, eta_f);
}

// --- prediction -------------------------------------------------------------------

int zsl_predict(const std::vector<double>& embedded,
                const EmbeddingBank& candidates) {
  validate_bank(candidates);
  const auto scores = bank_logits(candidates, embedded);
  return candidates.ids[argmax_index(scores)];
}

int classify_zsl(const CumixModel& model, const std::vector<double>& input,
                 const EmbeddingBank& candidates) {
  return zsl_predict(linear_forward(model.g, linear_forward(model.f, input)),
                     candidates);
}

// --- desk-scale trainer -------------------------------------------------------------

CumixModel train_cumix(const ZslBatch& train, const EmbeddingBank& bank,
                       const CumixConfig& config, RngStream& rng) {
  validate_zsl_batch(train, bank);
  if (config.batch < 4) throw std::invalid_argument("batch too small to mix");
  if (!(config.learning_rate > 0.0))
    throw std::invalid_argument("learning rate must be positive");

  std::map<int, std::vector<std::size_t>> pools;
  for (std::size_t i = 0; i < train.domains.size(); ++i)
    pools[train.domains[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> pool_order;
  for (const auto& [domain, members] : pools)
    pool_order.push_back(&members);

  CumixModel model = make_cumix_model(train.inputs.cols, config.feature_dim,
                                      bank.vectors.cols, rng);
  const bool mixing = config.eta_i > 0.0 || config.eta_f > 0.0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto [alpha, beta] = schedule(static_cast<double>(epoch),
                                        config.warmup, config.beta_max);
    for (std::size_t step = 0; step < config.steps_per_epoch; ++step) {
      // stratify by domain so every anchor keeps a same-domain partner
      ZslBatch mini;
      mini.inputs = Matrix(config.batch, train.inputs.cols);
      mini.labels.resize(config.batch);
      mini.domains.resize(config.batch);
      for (std::size_t slot = 0; slot < config.batch; ++slot) {
        const auto& pool = *pool_order[slot % pool_order.size()];
        const std::size_t pick = pool[rng.next_below(pool.size())];
        mini.inputs.set_row(slot, train.inputs.row(pick));
        mini.labels[slot] = train.labels[pick];
        mini.domains[slot] = train.domains[pick];
      }
      MixPlan plan;
      if (mixing) {
        plan = plan_mixes(mini.domains, alpha, beta, rng);
      } else {
        // baseline: identity mixes, nothing drawn
        plan.image.assign(config.batch, MixSpec{});
        plan.feature.assign(config.batch, MixSpec{});
      }
      CumixGrads grads = zero_cumix_grads(model);
      cumix_objective(model, mini, bank, plan, config.eta_i, config.eta_f,
                      &grads);
      for (std::size_t i = 0; i < model.f.W.data.size(); ++i)
        model.f.W.data[i] -= config.learning_rate * grads.f.dW.data[i];
      for (std::size_t i = 0; i < model.f.b.size(); ++i)
        model.f.b[i] -= config.learning_rate * grads.f.db[i];
      for (std::size_t i = 0; i < model.g.W.data.size(); ++i)
        model.g.W.data[i] -= config.learning_rate * grads.g.dW.data[i];
      for (std::size_t i = 0; i < model.g.b.size(); ++i)
        model.g.b[i] -= config.learning_rate * grads.g.db[i];
    }
  }
  return model;
}

}  // namespace shiftlab
