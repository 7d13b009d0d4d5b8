#include "shiftlab/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

#include "shiftlab/adagraph.hpp"
#include "shiftlab/alignment.hpp"
#include "shiftlab/cumix.hpp"
#include "shiftlab/dataset.hpp"
#include "shiftlab/gradcheck.hpp"
#include "shiftlab/latent.hpp"
#include "shiftlab/masks.hpp"
#include "shiftlab/mib.hpp"
#include "shiftlab/numerics.hpp"
#include "shiftlab/onda.hpp"
#include "shiftlab/openworld.hpp"
#include "shiftlab/optim.hpp"

#ifndef SHIFTLAB_VERSION
#define SHIFTLAB_VERSION "0.1.0"
#endif

namespace shiftlab {

namespace {

using ordered_json = nlohmann::ordered_json;

// Merge user params over the scenario defaults; keys outside the default set
// are configuration errors.
ordered_json resolve_params(const ordered_json& user,
                            const ordered_json& defaults,
                            const std::string& scenario) {
  ordered_json out = defaults;
  if (user.is_null()) return out;
  if (!user.is_object())
    throw std::invalid_argument("params must be a JSON object");
  for (const auto& [key, value] : user.items()) {
    if (!out.contains(key))
      throw std::invalid_argument("unknown param '" + key + "' for scenario '" +
                                  scenario + "'");
    out[key] = value;
  }
  return out;
}

std::size_t p_count(const ordered_json& p, const char* key) {
  try {
    const auto v = p.at(key).get<long long>();
    if (v < 0) throw std::invalid_argument("negative");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("param '") + key +
                                "' must be a nonnegative integer");
  }
}

double p_real(const ordered_json& p, const char* key) {
  try {
    return p.at(key).get<double>();
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("param '") + key +
                                "' must be a number");
  }
}

std::string p_text(const ordered_json& p, const char* key) {
  try {
    return p.at(key).get<std::string>();
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("param '") + key +
                                "' must be a string");
  }
}

void reject_dataset(const std::string& dataset, const char* scenario) {
  if (!dataset.empty())
    throw std::invalid_argument(std::string(scenario) +
                                " generates its own data; drop 'dataset'");
}

Matrix cluster_inputs(RngStream& rng,
                      const std::vector<std::vector<double>>& means,
                      std::size_t per_class, double sigma,
                      std::vector<int>* labels) {
  Matrix x(means.size() * per_class, means.front().size());
  std::size_t row = 0;
  for (std::size_t c = 0; c < means.size(); ++c)
    for (std::size_t r = 0; r < per_class; ++r, ++row) {
      for (std::size_t f = 0; f < x.cols; ++f)
        x.at(row, f) = means[c][f] + sigma * rng.next_normal();
      if (labels) labels->push_back(static_cast<int>(c));
    }
  return x;
}

double head_accuracy(const LinearModel& head, const Matrix& x,
                     const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.rows; ++i)
    hits += argmax_index(linear_forward(head, x.row(i))) ==
            static_cast<std::size_t>(labels[i]);
  return static_cast<double>(hits) / static_cast<double>(x.rows);
}

RunReport finish(const std::string& scenario, std::uint64_t seed,
                 ordered_json params, ordered_json metrics, bool ok) {
  RunReport report;
  report.version = SHIFTLAB_VERSION;
  report.scenario = scenario;
  report.seed = seed;
  report.params = std::move(params);
  report.metrics = std::move(metrics);
  report.ok = ok;
  return report;
}

// ---- latent --------------------------------------------------------------
// Two latent source domains hidden in one batch. Domain B is scaled and
// shifted so its class-0 cluster lands exactly on domain A's class-1
// cluster: pooled statistics keep the collision, per-latent-domain
// statistics dissolve it.

struct LatentToy {
  Matrix xs;
  std::vector<std::size_t> ys;
  Matrix xt;
  std::vector<std::size_t> yt;
};

LatentToy latent_toy(std::uint64_t seed, std::size_t classes, std::size_t dim,
                     std::size_t per_class, double sigma, double scale_b,
                     double scale_t, double target_shift) {
  RngStream rng(seed);
  std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
  for (auto& m : means)
    for (auto& v : m) v = 2.0 * rng.next_uniform(-1.0, 1.0);
  std::vector<double> shift_b(dim), shift_t(dim);
  for (std::size_t f = 0; f < dim; ++f)
    shift_b[f] = means[1 % classes][f] - scale_b * means[0][f];
  for (auto& v : shift_t) v = target_shift * rng.next_uniform(-1.0, 1.0);

  LatentToy toy;
  std::vector<std::vector<double>> src, tgt;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t r = 0; r < per_class; ++r) {
      std::vector<double> a(dim), b(dim), t(dim);
      for (std::size_t f = 0; f < dim; ++f) {
        a[f] = means[c][f] + sigma * rng.next_normal();
        b[f] = scale_b * (means[c][f] + sigma * rng.next_normal()) + shift_b[f];
        t[f] = scale_t * (means[c][f] + sigma * rng.next_normal()) + shift_t[f];
      }
      src.push_back(std::move(a));
      toy.ys.push_back(c);
      src.push_back(std::move(b));
      toy.ys.push_back(c);
      tgt.push_back(std::move(t));
      toy.yt.push_back(c);
    }
  toy.xs = from_rows(src);
  toy.xt = from_rows(tgt);
  return toy;
}

struct LatentOutcome {
  double accuracy = 0.0;
  double branch_confidence = 1.0;  // mean max assignment over source rows
};

LatentOutcome train_latent_pipeline(std::uint64_t seed, const LatentToy& toy,
                                    bool use_branch, std::size_t classes,
                                    std::size_t steps, double lr,
                                    const LatentConfig& cfg) {
  RngStream rng(seed);
  const std::size_t dim = toy.xs.cols;
  const std::size_t k_s = use_branch ? cfg.k_s : 1;
  DomainBranch branch = make_domain_branch(dim, k_s, cfg.k_t, rng);
  BNState bn = make_bn_state(dim);
  LinearModel head = make_linear(classes, dim, rng);

  auto assignments = [&](const Matrix& x, bool target) {
    if ((target ? cfg.k_t : k_s) == 1) return Matrix(x.rows, 1, 1.0);
    return branch_assignments(branch, x, target);
  };

  OptimState o_hw{lr, 0.0, 0.0, {}}, o_hb{lr, 0.0, 0.0, {}};
  OptimState o_bw{lr, 0.0, 0.0, {}}, o_bb{lr, 0.0, 0.0, {}};
  OptimState o_g{lr, 0.0, 0.0, {}}, o_b{lr, 0.0, 0.0, {}};
  const std::size_t n = toy.xs.rows, m = toy.xt.rows;
  const std::vector<int> unlabeled(n, -1);

  for (std::size_t step = 0; step < steps; ++step) {
    Matrix ws = assignments(toy.xs, false);
    Matrix wt = assignments(toy.xt, true);
    DomainStats ss = mda_statistics(toy.xs, ws);
    DomainStats st = mda_statistics(toy.xt, wt);
    Matrix yn = mda_forward(toy.xs, ws, ss, bn.gamma, bn.beta);
    Matrix tn = mda_forward(toy.xt, wt, st, bn.gamma, bn.beta);
    Matrix ps = row_softmax(linear_forward(head, yn));
    Matrix pt = row_softmax(linear_forward(head, tn));

    LinearGrads hg = zero_grads(head);
    Matrix dys(n, dim), dyt(m, dim);
    for (std::size_t i = 0; i < n; ++i) {
      auto d = ce_grad_logits(ps.row(i), toy.ys[i]);
      for (auto& v : d) v /= static_cast<double>(n);
      dys.set_row(i, linear_backward(head, yn.row(i), d, hg));
    }
    for (std::size_t i = 0; i < m; ++i) {
      auto d = entropy_grad_logits(pt.row(i));
      for (auto& v : d) v *= cfg.lambda_c / static_cast<double>(m);
      dyt.set_row(i, linear_backward(head, tn.row(i), d, hg));
    }
    MdaGrads mgs = mda_backward(toy.xs, ws, ss, bn.gamma, bn.beta, kBnEps, dys);
    MdaGrads mgt = mda_backward(toy.xt, wt, st, bn.gamma, bn.beta, kBnEps, dyt);

    if (use_branch && k_s > 1) {
      LinearGrads bg = zero_grads(branch.head);
      DomainLossGrads dl = domain_loss_grad(ws, wt, unlabeled, cfg);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> dp = dl.dsource.row(i);
        const auto mix = mgs.dw.row(i);
        for (std::size_t k = 0; k < dp.size(); ++k) dp[k] += mix[k];
        const auto dlog = softmax_vjp(ws.row(i), dp);
        std::vector<double> full(k_s + cfg.k_t, 0.0);
        for (std::size_t k = 0; k < k_s; ++k) full[k] = dlog[k];
        linear_backward(branch.head, toy.xs.row(i), full, bg);
      }
      // k_t = 1: the target softmax is constant, nothing flows back
      sgd_step(branch.head.W.data, bg.dW.data, o_bw);
      sgd_step(branch.head.b, bg.db, o_bb);
    }

    std::vector<double> dg = mgs.dgamma, db = mgs.dbeta;
    for (std::size_t f = 0; f < dim; ++f) {
      dg[f] += mgt.dgamma[f];
      db[f] += mgt.dbeta[f];
    }
    sgd_step(head.W.data, hg.dW.data, o_hw);
    sgd_step(head.b, hg.db, o_hb);
    sgd_step(bn.gamma, dg, o_g);
    sgd_step(bn.beta, db, o_b);
  }

  LatentOutcome out;
  Matrix wt = assignments(toy.xt, true);
  DomainStats st = mda_statistics(toy.xt, wt);
  Matrix tn = mda_forward(toy.xt, wt, st, bn.gamma, bn.beta);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i)
    hits += argmax_index(linear_forward(head, tn.row(i))) == toy.yt[i];
  out.accuracy = static_cast<double>(hits) / static_cast<double>(m);
  if (use_branch && k_s > 1) {
    Matrix ws = assignments(toy.xs, false);
    double conf = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = ws.row(i);
      conf += *std::max_element(r.begin(), r.end());
    }
    out.branch_confidence = conf / static_cast<double>(n);
  }
  return out;
}

RunReport run_latent(std::uint64_t seed, const ordered_json& user,
                     const std::string& dataset) {
  reject_dataset(dataset, "latent");
  const ordered_json defaults = {
      {"classes", 3},        {"dim", 6},
      {"per_class", 40},     {"sigma", 0.45},
      {"scale_b", 2.5},      {"scale_t", 1.6},
      {"target_shift", 1.5}, {"steps", 400},
      {"learning_rate", 0.1}, {"lambda_c", 0.02},
      {"lambda_e", 0.3},     {"lambda_b", 0.1}};
  const ordered_json p = resolve_params(user, defaults, "latent");
  const std::size_t classes = p_count(p, "classes");
  if (classes < 2) throw std::invalid_argument("latent needs >= 2 classes");

  LatentToy toy = latent_toy(seed * 101 + 7, classes, p_count(p, "dim"),
                             p_count(p, "per_class"), p_real(p, "sigma"),
                             p_real(p, "scale_b"), p_real(p, "scale_t"),
                             p_real(p, "target_shift"));
  LatentConfig cfg;
  cfg.k_s = 2;
  cfg.k_t = 1;
  cfg.lambda_c = p_real(p, "lambda_c");
  cfg.lambda_e = p_real(p, "lambda_e");
  cfg.lambda_b = p_real(p, "lambda_b");
  const std::size_t steps = p_count(p, "steps");
  const double lr = p_real(p, "learning_rate");

  const LatentOutcome mda =
      train_latent_pipeline(seed, toy, true, classes, steps, lr, cfg);
  const LatentOutcome single =
      train_latent_pipeline(seed, toy, false, classes, steps, lr, cfg);

  ordered_json metrics = {{"accuracy_mda", mda.accuracy},
                          {"accuracy_single_bn", single.accuracy},
                          {"branch_confidence", mda.branch_confidence}};
  return finish("latent", seed, p, metrics, mda.accuracy >= single.accuracy);
}

// ---- dg ------------------------------------------------------------------
// Leave-one-domain-out: per-source-domain normalization with randomized
// source weights at train time, domain-probability mixing at test time,
// against a pooled-statistics baseline.

BNState stats_state(const Matrix& x, const std::vector<std::size_t>& rows,
                    std::size_t dim) {
  if (rows.empty()) throw std::invalid_argument("empty domain");
  BNState s = make_bn_state(dim);
  for (std::size_t r : rows)
    for (std::size_t f = 0; f < dim; ++f) s.mean[f] += x.at(r, f);
  for (std::size_t f = 0; f < dim; ++f)
    s.mean[f] /= static_cast<double>(rows.size());
  for (std::size_t r : rows)
    for (std::size_t f = 0; f < dim; ++f) {
      const double d = x.at(r, f) - s.mean[f];
      s.var[f] += d * d;
    }
  for (std::size_t f = 0; f < dim; ++f)
    s.var[f] /= static_cast<double>(rows.size());
  s.count = static_cast<double>(rows.size());
  return s;
}

RunReport run_dg(std::uint64_t seed, const ordered_json& user,
                 const std::string& dataset) {
  const ordered_json defaults = {
      {"classes", 4},  {"domains", 4},       {"dim", 6},
      {"per_pair", 30}, {"noise", 0.35},     {"rotation", 0.4},
      {"shift", 1.2},  {"alpha", 0.2},       {"lambda", 0.5},
      {"steps", 300},  {"learning_rate", 0.1}};
  const ordered_json p = resolve_params(user, defaults, "dg");

  FeatureDataset ds;
  if (!dataset.empty()) {
    ds = read_dataset(dataset);
  } else {
    SyntheticSpec spec;
    spec.classes = p_count(p, "classes");
    spec.domains = p_count(p, "domains");
    spec.dim = p_count(p, "dim");
    spec.per_pair = p_count(p, "per_pair");
    spec.noise = p_real(p, "noise");
    spec.rotation = p_real(p, "rotation");
    spec.shift = p_real(p, "shift");
    ds = gen_synthetic(spec, seed * 19 + 3);
  }
  const std::size_t domains = dataset_domains(ds);
  const std::size_t classes = dataset_classes(ds);
  if (domains < 3) throw std::invalid_argument("dg needs >= 3 domains");
  if (classes < 2) throw std::invalid_argument("dg needs >= 2 classes");
  const int held = static_cast<int>(domains) - 1;
  const std::size_t k = domains - 1;

  std::vector<std::size_t> train_rows, test_rows;
  std::vector<std::vector<std::size_t>> by_domain(k);
  for (std::size_t i = 0; i < ds.features.rows; ++i) {
    if (ds.domains[i] == held) {
      test_rows.push_back(i);
    } else {
      train_rows.push_back(i);
      by_domain[static_cast<std::size_t>(ds.domains[i])].push_back(i);
    }
  }
  // leave-one-domain-out contract: the held-out domain id never trains
  for (std::size_t r : train_rows)
    if (ds.domains[r] == held)
      throw std::logic_error("held-out domain leaked into training");
  if (test_rows.empty()) throw std::invalid_argument("held-out domain empty");

  std::vector<BNState> states;
  for (std::size_t d = 0; d < k; ++d)
    states.push_back(stats_state(ds.features, by_domain[d], ds.dim));

  const double alpha = p_real(p, "alpha");
  const double lambda = p_real(p, "lambda");
  const std::size_t steps = p_count(p, "steps");
  const double lr = p_real(p, "learning_rate");

  RngStream rng(seed * 19 + 4);
  LinearModel class_head = make_linear(classes, ds.dim, rng);
  LinearModel domain_head = make_linear(k, ds.dim, rng);
  OptimState o_cw{lr, 0.0, 0.0, {}}, o_cb{lr, 0.0, 0.0, {}};
  OptimState o_dw{lr, 0.0, 0.0, {}}, o_db{lr, 0.0, 0.0, {}};
  const double inv_n = 1.0 / static_cast<double>(train_rows.size());

  for (std::size_t step = 0; step < steps; ++step) {
    LinearGrads cg = zero_grads(class_head), dg = zero_grads(domain_head);
    for (std::size_t r : train_rows) {
      const auto x = ds.features.row(r);
      const std::size_t dom = static_cast<std::size_t>(ds.domains[r]);
      const auto w = bsf_train_weights(dom, k, alpha, rng);
      const auto feat = wbn_forward(x, w, states);
      auto dc = ce_grad_logits(softmax(linear_forward(class_head, feat)),
                               static_cast<std::size_t>(ds.labels[r]));
      for (auto& v : dc) v *= inv_n;
      linear_backward(class_head, feat, dc, cg);
      auto dd = ce_grad_logits(softmax(linear_forward(domain_head, x)), dom);
      for (auto& v : dd) v *= lambda * inv_n;
      linear_backward(domain_head, x, dd, dg);
    }
    sgd_step(class_head.W.data, cg.dW.data, o_cw);
    sgd_step(class_head.b, cg.db, o_cb);
    sgd_step(domain_head.W.data, dg.dW.data, o_dw);
    sgd_step(domain_head.b, dg.db, o_db);
  }

  // training objective at the final parameters, hard source weights
  Matrix train_class_probs(train_rows.size(), classes);
  Matrix train_domain_probs(train_rows.size(), k);
  std::vector<std::size_t> train_labels, train_domains;
  for (std::size_t idx = 0; idx < train_rows.size(); ++idx) {
    const std::size_t r = train_rows[idx];
    const std::size_t dom = static_cast<std::size_t>(ds.domains[r]);
    std::vector<double> onehot(k, 0.0);
    onehot[dom] = 1.0;
    const auto feat = wbn_forward(ds.features.row(r), onehot, states);
    train_class_probs.set_row(idx,
                              softmax(linear_forward(class_head, feat)));
    train_domain_probs.set_row(
        idx, softmax(linear_forward(domain_head, ds.features.row(r))));
    train_labels.push_back(static_cast<std::size_t>(ds.labels[r]));
    train_domains.push_back(dom);
  }
  const double train_loss = wbn_loss(train_class_probs, train_labels,
                                     train_domain_probs, train_domains, lambda);

  std::size_t hits_bsf = 0;
  for (std::size_t r : test_rows) {
    const auto x = ds.features.row(r);
    const auto w = softmax(linear_forward(domain_head, x));
    Matrix scores(k, classes);
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<double> onehot(k, 0.0);
      onehot[j] = 1.0;
      scores.set_row(j, softmax(linear_forward(
                            class_head, wbn_forward(x, onehot, states))));
    }
    const auto mixed = bsf_predict(scores, w, alpha);
    hits_bsf += argmax_index(mixed) == static_cast<std::size_t>(ds.labels[r]);
  }
  const double acc_bsf =
      static_cast<double>(hits_bsf) / static_cast<double>(test_rows.size());

  // pooled-statistics baseline
  BNState pooled = stats_state(ds.features, train_rows, ds.dim);
  Matrix pooled_train(train_rows.size(), ds.dim);
  std::vector<int> pooled_labels;
  for (std::size_t idx = 0; idx < train_rows.size(); ++idx) {
    pooled_train.set_row(idx, ds.features.row(train_rows[idx]));
    pooled_labels.push_back(ds.labels[train_rows[idx]]);
  }
  const Matrix pooled_norm = da_normalize(pooled_train, pooled);
  RngStream rng_base(seed * 19 + 4);
  make_linear(classes, ds.dim, rng_base);  // keep the init draws aligned
  LinearModel base = train_softmax_classifier(pooled_norm, pooled_labels,
                                              classes, steps, lr, rng_base);
  Matrix test_x(test_rows.size(), ds.dim);
  std::vector<int> test_labels;
  for (std::size_t idx = 0; idx < test_rows.size(); ++idx) {
    test_x.set_row(idx, ds.features.row(test_rows[idx]));
    test_labels.push_back(ds.labels[test_rows[idx]]);
  }
  const double acc_pooled =
      head_accuracy(base, da_normalize(test_x, pooled), test_labels);

  const double chance = 1.0 / static_cast<double>(classes);
  ordered_json metrics = {{"accuracy_bsf", acc_bsf},
                          {"accuracy_pooled", acc_pooled},
                          {"chance", chance},
                          {"train_loss", train_loss},
                          {"held_out_domain", held}};
  return finish("dg", seed, p, metrics, acc_bsf > chance);
}

// ---- onda ----------------------------------------------------------------

RunReport run_onda(std::uint64_t seed, const ordered_json& user,
                   const std::string& dataset) {
  const ordered_json defaults = {
      {"dim", 4},          {"class_offset", 2.0}, {"noise", 0.25},
      {"scale", 1.3},      {"shift", 5.0},        {"source_n", 240},
      {"stream_n", 600},   {"n_t", 10},           {"alpha", 0.1},
      {"head_steps", 200}, {"head_lr", 0.1}};
  const ordered_json p = resolve_params(user, defaults, "onda");
  const std::size_t n_t = p_count(p, "n_t");
  const double alpha = p_real(p, "alpha");

  Matrix source_x, stream;
  std::vector<int> source_y, stream_y;
  std::vector<double> truth_mean;
  std::size_t dim = 0, classes = 2;

  if (!dataset.empty()) {
    FeatureDataset ds = read_dataset(dataset);
    const std::size_t domains = dataset_domains(ds);
    if (domains < 2)
      throw std::invalid_argument("onda dataset needs >= 2 domains");
    dim = ds.dim;
    classes = dataset_classes(ds);
    const int target = static_cast<int>(domains) - 1;
    std::vector<std::vector<double>> src_rows, stream_rows;
    for (std::size_t i = 0; i < ds.features.rows; ++i) {
      if (ds.domains[i] == 0) {
        src_rows.push_back(ds.features.row(i));
        source_y.push_back(ds.labels[i]);
      } else if (ds.domains[i] == target) {
        stream_rows.push_back(ds.features.row(i));
        stream_y.push_back(ds.labels[i]);
      }
    }
    if (src_rows.empty() || stream_rows.empty())
      throw std::invalid_argument("onda dataset: empty source or stream");
    source_x = from_rows(src_rows);
    stream = from_rows(stream_rows);
    truth_mean.assign(dim, 0.0);
    for (const auto& r : stream_rows)
      for (std::size_t f = 0; f < dim; ++f)
        truth_mean[f] += r[f] / static_cast<double>(stream_rows.size());
  } else {
    dim = p_count(p, "dim");
    const double offset = p_real(p, "class_offset");
    const double noise = p_real(p, "noise");
    const double scale = p_real(p, "scale");
    const double shift = p_real(p, "shift");
    RngStream rng(seed * 47 + 11);
    auto draw = [&](int label) {
      std::vector<double> x(dim);
      for (std::size_t f = 0; f < dim; ++f) x[f] = noise * rng.next_normal();
      x[0] += label == 0 ? -offset : offset;
      return x;
    };
    std::vector<std::vector<double>> src_rows, stream_rows;
    for (std::size_t i = 0; i < p_count(p, "source_n"); ++i) {
      const int label = static_cast<int>(i % 2);
      src_rows.push_back(draw(label));
      source_y.push_back(label);
    }
    for (std::size_t i = 0; i < p_count(p, "stream_n"); ++i) {
      const int label = static_cast<int>(i % 2);
      auto x = draw(label);
      for (auto& v : x) v = scale * v + shift;
      stream_rows.push_back(std::move(x));
      stream_y.push_back(label);
    }
    source_x = from_rows(src_rows);
    stream = from_rows(stream_rows);
    // balanced interleaving: the class term cancels in the population mean
    truth_mean.assign(dim, shift);
  }

  std::vector<std::size_t> all(source_x.rows);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  BNState source_state = stats_state(source_x, all, dim);
  RngStream rng_head(seed * 47 + 12);
  LinearModel head = train_softmax_classifier(
      da_normalize(source_x, source_state), source_y, classes,
      p_count(p, "head_steps"), p_real(p, "head_lr"), rng_head);

  OndaClassifier model;
  model.bn = make_online_bn(source_state, n_t, alpha);
  model.head = head;
  const OndaStreamResult result = onda_stream(model, stream);

  std::size_t hits_online = 0;
  for (std::size_t i = 0; i < stream.rows; ++i)
    hits_online += result.predictions[i] ==
                   static_cast<std::size_t>(stream_y[i]);
  const double acc_online =
      static_cast<double>(hits_online) / static_cast<double>(stream.rows);
  const double acc_frozen =
      head_accuracy(head, da_normalize(stream, source_state), stream_y);

  double gap = 0.0, scale_ref = 1e-9;
  for (std::size_t f = 0; f < dim; ++f) {
    gap = std::max(gap, std::fabs(result.final_state.mean[f] - truth_mean[f]));
    scale_ref = std::max(scale_ref, std::fabs(truth_mean[f]));
  }
  const double rel_gap = gap / scale_ref;

  const bool ok =
      result.updates >= 50 && rel_gap <= 0.02 && acc_online >= acc_frozen;
  ordered_json metrics = {{"updates", result.updates},
                          {"mean_rel_gap", rel_gap},
                          {"accuracy_online", acc_online},
                          {"accuracy_frozen", acc_frozen}};
  return finish("onda", seed, p, metrics, ok);
}

// ---- adagraph ------------------------------------------------------------
// 1-d metadata axis; the input shift grows linearly with the metadata so
// nearby nodes have nearby statistics. The target node is regressed from
// metadata, then refined on its stream.

RunReport run_adagraph(std::uint64_t seed, const ordered_json& user,
                       const std::string& dataset) {
  reject_dataset(dataset, "adagraph");
  const ordered_json defaults = {{"dim", 3},
                                 {"classes", 2},
                                 {"per_domain", 120},
                                 {"sigma", 0.5},
                                 {"drift", 4.0},
                                 {"sigma_d", 0.1},
                                 {"lambda", 1.0},
                                 {"source_steps", 150},
                                 {"aux_steps", 120},
                                 {"learning_rate", 0.05},
                                 {"refine_memory", 16},
                                 {"refine_lr", 0.05},
                                 {"target_metadata", 0.6}};
  const ordered_json p = resolve_params(user, defaults, "adagraph");
  const std::size_t dim = p_count(p, "dim");
  const std::size_t classes = p_count(p, "classes");
  const std::size_t n = p_count(p, "per_domain");
  const double sigma = p_real(p, "sigma");
  const double drift = p_real(p, "drift");
  const double theta_t = p_real(p, "target_metadata");

  RngStream rng(seed * 59 + 1);
  auto domain_batch = [&](double theta, std::vector<std::size_t>* labels) {
    Matrix x(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y = i % classes;
      for (std::size_t f = 0; f < dim; ++f)
        x.at(i, f) =
            (f == 0 ? (y == 0 ? -2.0 : 2.0) : 0.0) + sigma * rng.next_normal() +
            drift * theta;
      if (labels) labels->push_back(y);
    }
    return x;
  };

  std::vector<std::size_t> source_y;
  const Matrix source_x = domain_batch(0.0, &source_y);
  auto model = make_graph_model(dim, classes, {0.0}, p_real(p, "sigma_d"), rng);
  AdaGraphConfig cfg;
  cfg.lambda = p_real(p, "lambda");
  cfg.learning_rate = p_real(p, "learning_rate");
  cfg.steps = p_count(p, "source_steps");
  train_source(model, source_x, source_y, cfg, rng);

  std::vector<AuxiliaryDomain> auxiliaries;
  for (double theta : {0.25, 0.5, 0.75})
    auxiliaries.push_back({domain_batch(theta, nullptr), {theta}});
  cfg.steps = p_count(p, "aux_steps");
  train_with_auxiliaries(model, source_x, source_y, auxiliaries, cfg, rng);

  std::vector<std::size_t> target_y;
  const Matrix target_x = domain_batch(theta_t, &target_y);

  auto accuracy_with = [&](const GBNLayer& params) {
    const auto preds = gbn_predict(model.head, params, target_x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
      hits += preds[i] == target_y[i];
    return static_cast<double>(hits) / static_cast<double>(preds.size());
  };

  const auto regressed = regress_params_metadata(model.graph, {theta_t});
  const double acc_source = accuracy_with(model.graph.nodes[0].layers[0]);
  const double acc_regressed = accuracy_with(regressed[0]);

  std::vector<double> truth(dim, drift * theta_t);
  auto l2_mu = [&](const GBNLayer& layer) {
    double s = 0.0;
    for (std::size_t f = 0; f < dim; ++f)
      s += (layer.mu[f] - truth[f]) * (layer.mu[f] - truth[f]);
    return std::sqrt(s);
  };

  GBNNode target_node{{theta_t}, regressed};
  const Matrix refine_stream = domain_batch(theta_t, nullptr);
  const GBNNode refined =
      refine(target_node, model.head, refine_stream,
             p_count(p, "refine_memory"), cfg.lambda, p_real(p, "refine_lr"));
  const double l2_before = l2_mu(target_node.layers[0]);
  const double l2_after = l2_mu(refined.layers[0]);
  const double acc_refined = accuracy_with(refined.layers[0]);

  const bool ok = l2_after < l2_before && acc_regressed >= acc_source;
  ordered_json metrics = {{"accuracy_source_params", acc_source},
                          {"accuracy_regressed", acc_regressed},
                          {"accuracy_refined", acc_refined},
                          {"l2_mu_before_refine", l2_before},
                          {"l2_mu_after_refine", l2_after}};
  return finish("adagraph", seed, p, metrics, ok);
}

// ---- bat -----------------------------------------------------------------
// Frozen task-A weights; task B learns a binary mask (and, for the full
// variant, the affine coefficients) plus its own bias.

struct MaskTaskModel {
  MaskedAffine layer;
  std::vector<double> bias;
};

double mask_task_accuracy(const MaskTaskModel& m, const Matrix& x,
                          const std::vector<int>& labels) {
  const Matrix eff = effective_weights(m.layer);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto logits = matvec(eff, x.row(i));
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += m.bias[c];
    hits += argmax_index(logits) == static_cast<std::size_t>(labels[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(x.rows);
}

MaskTaskModel train_mask_task(const Matrix& base_w, MaskVariant variant,
                              bool train_mask, const Matrix& x,
                              const std::vector<int>& labels,
                              std::size_t steps, double lr_r, double lr_k,
                              double lr_b, RngStream& rng) {
  MaskTaskModel m;
  m.layer = init_masked(base_w, variant, MaskSurrogate::identity, rng);
  m.bias.assign(base_w.rows, 0.0);
  OptimState o_r{lr_r, 0.0, 0.0, {}}, o_b{lr_b, 0.0, 0.0, {}};
  OptimState o_k{lr_k, 0.0, 0.0, {}};
  const double inv_n = 1.0 / static_cast<double>(x.rows);
  for (std::size_t step = 0; step < steps; ++step) {
    const Matrix eff = effective_weights(m.layer);
    Matrix d_eff(base_w.rows, base_w.cols);
    std::vector<double> d_bias(base_w.rows, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
      auto logits = matvec(eff, x.row(i));
      for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += m.bias[c];
      auto d = ce_grad_logits(softmax(logits),
                              static_cast<std::size_t>(labels[i]));
      const auto xi = x.row(i);
      for (std::size_t c = 0; c < d.size(); ++c) {
        d[c] *= inv_n;
        d_bias[c] += d[c];
        for (std::size_t f = 0; f < base_w.cols; ++f)
          d_eff.at(c, f) += d[c] * xi[f];
      }
    }
    if (train_mask) {
      const MaskGrads g = masked_backward(m.layer, d_eff);
      sgd_step(m.layer.R.data, g.dR.data, o_r);
      if (variant != MaskVariant::piggyback) {
        std::vector<double> ks = {m.layer.k0, m.layer.k1, m.layer.k2,
                                  m.layer.k3};
        std::vector<double> dks = {g.dk0, g.dk1, g.dk2, g.dk3};
        if (variant == MaskVariant::simple) dks[3] = 0.0;  // k3 stays 0
        sgd_step(ks, dks, o_k);
        m.layer.k0 = ks[0];
        m.layer.k1 = ks[1];
        m.layer.k2 = ks[2];
        m.layer.k3 = ks[3];
      }
    }
    sgd_step(m.bias, d_bias, o_b);
  }
  return m;
}

RunReport run_bat(std::uint64_t seed, const ordered_json& user,
                  const std::string& dataset) {
  reject_dataset(dataset, "bat");
  const ordered_json defaults = {{"dim", 8},
                                 {"classes", 3},
                                 {"per_class", 40},
                                 {"sigma", 0.5},
                                 {"head_steps", 250},
                                 {"head_lr", 0.2},
                                 {"mask_steps", 250},
                                 {"mask_lr", 0.005},
                                 {"coeff_lr", 0.05},
                                 {"bias_lr", 0.2},
                                 {"variant", "full"}};
  const ordered_json p = resolve_params(user, defaults, "bat");
  const std::size_t dim = p_count(p, "dim");
  const std::size_t classes = p_count(p, "classes");
  const std::size_t per = p_count(p, "per_class");
  const double sigma = p_real(p, "sigma");
  const std::string variant_name = p_text(p, "variant");
  MaskVariant variant;
  if (variant_name == "piggyback") {
    variant = MaskVariant::piggyback;
  } else if (variant_name == "simple") {
    variant = MaskVariant::simple;
  } else if (variant_name == "full") {
    variant = MaskVariant::full;
  } else {
    throw std::invalid_argument("variant must be piggyback, simple or full");
  }

  auto task_data = [&](std::uint64_t task_seed, std::vector<int>* labels,
                       Matrix* test, std::vector<int>* test_labels) {
    RngStream rng(task_seed);
    std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
    for (auto& m : means)
      for (auto& v : m) v = 2.0 * rng.next_uniform(-1.0, 1.0);
    const Matrix train = cluster_inputs(rng, means, per, sigma, labels);
    *test = cluster_inputs(rng, means, per, sigma, test_labels);
    return train;
  };

  std::vector<int> a_labels, a_test_labels, b_labels, b_test_labels;
  Matrix a_test, b_test;
  const Matrix a_train = task_data(seed * 71 + 1, &a_labels, &a_test,
                                   &a_test_labels);
  const Matrix b_train = task_data(seed * 71 + 2, &b_labels, &b_test,
                                   &b_test_labels);

  RngStream rng_a(seed * 71 + 3);
  const LinearModel task_a = train_softmax_classifier(
      a_train, a_labels, classes, p_count(p, "head_steps"),
      p_real(p, "head_lr"), rng_a);
  const double acc_a_before = head_accuracy(task_a, a_test, a_test_labels);
  const std::vector<double> base_w_snapshot = task_a.W.data;

  RngStream rng_mask(seed * 71 + 4), rng_bias(seed * 71 + 4);
  const MaskTaskModel masked = train_mask_task(
      task_a.W, variant, true, b_train, b_labels, p_count(p, "mask_steps"),
      p_real(p, "mask_lr"), p_real(p, "coeff_lr"), p_real(p, "bias_lr"),
      rng_mask);
  const MaskTaskModel bias_only = train_mask_task(
      task_a.W, variant, false, b_train, b_labels, p_count(p, "mask_steps"),
      p_real(p, "mask_lr"), p_real(p, "coeff_lr"), p_real(p, "bias_lr"),
      rng_bias);

  const double acc_b_masked = mask_task_accuracy(masked, b_test, b_test_labels);
  const double acc_b_base =
      mask_task_accuracy(bias_only, b_test, b_test_labels);
  const double acc_a_after = head_accuracy(task_a, a_test, a_test_labels);
  const bool weights_untouched = task_a.W.data == base_w_snapshot;

  const double mask_on =
      static_cast<double>(std::count_if(
          masked.layer.R.data.begin(), masked.layer.R.data.end(),
          [](double r) { return r >= 0.0; })) /
      static_cast<double>(masked.layer.R.data.size());

  const bool ok = weights_untouched && acc_a_before == acc_a_after &&
                  acc_b_masked > acc_b_base;
  ordered_json metrics = {{"accuracy_task_a_before", acc_a_before},
                          {"accuracy_task_a_after", acc_a_after},
                          {"accuracy_task_b_masked", acc_b_masked},
                          {"accuracy_task_b_bias_only", acc_b_base},
                          {"mask_on_fraction", mask_on},
                          {"overhead_two_tasks", param_overhead(1, 1, 2)},
                          {"overhead_six_tasks", param_overhead(1, 1, 6)}};
  return finish("bat", seed, p, metrics, ok);
}

// ---- mib -----------------------------------------------------------------
// Two incremental steps with the old class hidden in the background of the
// second step; background-aware training against plain fine-tuning.

RunReport run_mib(std::uint64_t seed, const ordered_json& user,
                  const std::string& dataset) {
  reject_dataset(dataset, "mib");
  const ordered_json defaults = {{"sigma", 0.4},       {"warm_count", 80},
                                 {"step_count", 60},   {"eval_count", 100},
                                 {"steps", 400},       {"lambda", 1.0},
                                 {"learning_rate", 0.5}};
  const ordered_json p = resolve_params(user, defaults, "mib");
  const double sigma = p_real(p, "sigma");
  const std::size_t warm_n = p_count(p, "warm_count");
  const std::size_t step_n = p_count(p, "step_count");
  const std::size_t eval_n = p_count(p, "eval_count");

  const std::vector<std::vector<double>> means = {
      {0.0, 0.0}, {3.0, 0.0}, {0.0, 3.0}};

  RngStream rng(seed * 31 + 5);
  LinearModel base = make_linear(1, 2, rng, 0.01);
  std::vector<int> warm_labels;
  Matrix warm_x = cluster_inputs(rng, {means[0], means[1]}, warm_n, sigma,
                                 &warm_labels);
  IncrementalConfig warm_cfg;
  warm_cfg.method = IncrementalMethod::mib;
  warm_cfg.lambda = 0.0;
  warm_cfg.steps = p_count(p, "steps");
  warm_cfg.learning_rate = p_real(p, "learning_rate");
  const LinearModel old_model =
      incremental_step(base, warm_x, warm_labels, 1, warm_cfg, rng);

  // step 2: class 1 is present but labeled as background
  std::vector<int> step_labels;
  Matrix step_x = cluster_inputs(rng, means, step_n, sigma, &step_labels);
  for (auto& y : step_labels) y = y == 2 ? 2 : 0;

  IncrementalConfig cfg = warm_cfg;
  cfg.lambda = p_real(p, "lambda");
  RngStream rng_mib(seed * 31 + 6), rng_ft(seed * 31 + 6);
  cfg.method = IncrementalMethod::mib;
  const LinearModel mib_model =
      incremental_step(old_model, step_x, step_labels, 1, cfg, rng_mib);
  cfg.method = IncrementalMethod::finetune;
  const LinearModel ft_model =
      incremental_step(old_model, step_x, step_labels, 1, cfg, rng_ft);

  std::vector<int> eval_labels;
  Matrix eval_x = cluster_inputs(rng, means, eval_n, sigma, &eval_labels);
  const auto mib_report = miou(predict_labels(mib_model, eval_x), eval_labels, 3);
  const auto ft_report = miou(predict_labels(ft_model, eval_x), eval_labels, 3);
  const double mib_old = subset_miou(mib_report, 1, 2);
  const double ft_old = subset_miou(ft_report, 1, 2);

  ordered_json metrics = {{"old_miou_mib", mib_old},
                          {"old_miou_finetune", ft_old},
                          {"old_miou_gap", mib_old - ft_old},
                          {"new_iou_mib", mib_report.per_class[2]},
                          {"new_iou_finetune", ft_report.per_class[2]}};
  return finish("mib", seed, p, metrics, mib_old - ft_old >= 0.2);
}

// ---- owr -----------------------------------------------------------------

RunReport run_owr(std::uint64_t seed, const ordered_json& user,
                  const std::string& dataset) {
  reject_dataset(dataset, "owr");
  const ordered_json defaults = {
      {"dim", 6},          {"known", 4},   {"unknown", 4},
      {"train_per", 80},   {"test_per", 40}, {"sigma", 0.6},
      {"radius", 4.0},     {"steps", 400},   {"learning_rate", 0.02}};
  const ordered_json p = resolve_params(user, defaults, "owr");
  const std::size_t dim = p_count(p, "dim");
  const std::size_t known_n = p_count(p, "known");
  const std::size_t unknown_n = p_count(p, "unknown");
  const double sigma = p_real(p, "sigma");
  const double radius = p_real(p, "radius");

  RngStream rng(seed);
  std::vector<std::vector<double>> means(known_n + unknown_n,
                                         std::vector<double>(dim));
  for (auto& m : means) {
    double norm = 0.0;
    for (auto& v : m) {
      v = rng.next_normal();
      norm += v * v;
    }
    for (auto& v : m) v *= radius / std::sqrt(norm);
  }
  const std::vector<std::vector<double>> known(means.begin(),
                                               means.begin() + known_n);
  const std::vector<std::vector<double>> unknown(means.begin() + known_n,
                                                 means.end());

  std::vector<int> train_labels, known_labels, unknown_labels;
  const Matrix train = cluster_inputs(rng, known, p_count(p, "train_per"),
                                      sigma, &train_labels);
  const Matrix known_test = cluster_inputs(rng, known, p_count(p, "test_per"),
                                           sigma, &known_labels);
  const Matrix unknown_test = cluster_inputs(
      rng, unknown, p_count(p, "test_per"), sigma, &unknown_labels);

  // open-world contract: the unknown pool shares no class with training
  std::set<int> train_set(train_labels.begin(), train_labels.end());
  for (std::size_t c = 0; c < unknown_n; ++c)
    if (train_set.count(static_cast<int>(known_n + c)))
      throw std::logic_error("unknown class leaked into training");

  OwrConfig cfg;
  cfg.feature_dim = dim;
  cfg.steps = p_count(p, "steps");
  cfg.learning_rate = p_real(p, "learning_rate");
  RngStream rng_nno(seed * 7 + 1), rng_bdoc(seed * 7 + 2);
  const DeepNnoModel nno = train_deep_nno(train, train_labels, cfg, rng_nno);
  const BdocModel bdoc = train_bdoc(train, train_labels, cfg, rng_bdoc);

  auto evaluate = [&](auto&& classify) {
    std::vector<int> closed, closed_rej, open;
    for (std::size_t i = 0; i < known_test.rows; ++i) {
      closed.push_back(classify(known_test.row(i), false));
      closed_rej.push_back(classify(known_test.row(i), true));
    }
    for (std::size_t i = 0; i < unknown_test.rows; ++i)
      open.push_back(classify(unknown_test.row(i), true));
    return owr_metrics(closed, closed_rej, known_labels, open);
  };
  const OwrReport r_nno = evaluate([&](const std::vector<double>& x,
                                       bool rej) {
    return dnno_classify(nno, x, rej);
  });
  const OwrReport r_bdoc = evaluate([&](const std::vector<double>& x,
                                        bool rej) {
    return bdoc_classify(bdoc, x, rej);
  });

  auto rejection_gap = [&](const OwrReport& r) {
    // open_acc is the unknown rejection rate; known rejection shows up as
    // closed_acc - closed_rej_acc
    return r.open_acc - (r.closed_acc - r.closed_rej_acc);
  };
  const double gap_nno = rejection_gap(r_nno);
  const double gap_bdoc = rejection_gap(r_bdoc);

  auto report_json = [](const OwrReport& r) {
    return ordered_json{{"closed_acc", r.closed_acc},
                        {"closed_rej_acc", r.closed_rej_acc},
                        {"open_acc", r.open_acc},
                        {"owr", r.owr},
                        {"owr_h", r.owr_h}};
  };
  ordered_json metrics = {{"deep_nno", report_json(r_nno)},
                          {"bdoc", report_json(r_bdoc)},
                          {"rejection_gap_nno", gap_nno},
                          {"rejection_gap_bdoc", gap_bdoc}};
  return finish("owr", seed, p, metrics, gap_bdoc > gap_nno);
}

// ---- cumix ---------------------------------------------------------------

RunReport run_cumix(std::uint64_t seed, const ordered_json& user,
                    const std::string& dataset) {
  reject_dataset(dataset, "cumix");
  const ordered_json defaults = {
      {"input_dim", 6},    {"feature_dim", 5}, {"per_class", 30},
      {"test_per", 60},    {"map_jitter", 0.35}, {"noise", 0.25},
      {"epochs", 6},       {"warmup", 2},      {"steps_per_epoch", 40},
      {"batch", 24},       {"eta_i", 0.5},     {"eta_f", 0.5},
      {"learning_rate", 0.05}};
  const ordered_json p = resolve_params(user, defaults, "cumix");
  const std::size_t input_dim = p_count(p, "input_dim");
  const double jitter = p_real(p, "map_jitter");
  const double noise = p_real(p, "noise");

  const std::vector<std::vector<double>> seen_attrs = {
      {1, 1, 0, 0}, {1, 0, 1, 0}, {1, 0, 0, 1}, {0, 1, 1, 0}};
  const std::vector<std::vector<double>> unseen_attrs = {{0, 1, 0, 1},
                                                         {0, 0, 1, 1}};
  const std::size_t attr_dim = 4;

  RngStream rng(seed);
  Matrix base(input_dim, attr_dim);
  for (auto& v : base.data) v = rng.next_uniform(-1.0, 1.0);
  std::vector<Matrix> domain_maps;
  for (int d = 0; d < 3; ++d) {
    Matrix m = base;
    for (auto& v : m.data) v += jitter * rng.next_normal();
    domain_maps.push_back(m);
  }
  auto make_sample = [&](const std::vector<double>& attr, int domain) {
    std::vector<double> x = matvec(domain_maps[(std::size_t)domain], attr);
    for (auto& v : x) v += noise * rng.next_normal();
    return x;
  };

  EmbeddingBank seen_bank, unseen_bank;
  for (std::size_t k = 0; k < seen_attrs.size(); ++k)
    seen_bank.ids.push_back(static_cast<int>(k));
  seen_bank.vectors = from_rows(seen_attrs);
  for (std::size_t k = 0; k < unseen_attrs.size(); ++k)
    unseen_bank.ids.push_back(static_cast<int>(seen_attrs.size() + k));
  unseen_bank.vectors = from_rows(unseen_attrs);

  // leave-classes-and-domain-out contract
  for (int id : unseen_bank.ids)
    for (int sid : seen_bank.ids)
      if (id == sid) throw std::logic_error("seen/unseen class overlap");

  ZslBatch train;
  std::vector<std::vector<double>> rows;
  for (int domain = 0; domain < 2; ++domain)
    for (std::size_t k = 0; k < seen_attrs.size(); ++k)
      for (std::size_t rep = 0; rep < p_count(p, "per_class"); ++rep) {
        rows.push_back(make_sample(seen_attrs[k], domain));
        train.labels.push_back(static_cast<int>(k));
        train.domains.push_back(domain);
      }
  train.inputs = from_rows(rows);
  const int test_domain = 2;
  for (int d : train.domains)
    if (d == test_domain) throw std::logic_error("test domain leaked");

  std::vector<std::vector<double>> test_rows;
  std::vector<int> test_labels;
  for (std::size_t k = 0; k < unseen_attrs.size(); ++k)
    for (std::size_t rep = 0; rep < p_count(p, "test_per"); ++rep) {
      test_rows.push_back(make_sample(unseen_attrs[k], test_domain));
      test_labels.push_back(static_cast<int>(seen_attrs.size() + k));
    }

  CumixConfig cfg;
  cfg.feature_dim = p_count(p, "feature_dim");
  cfg.warmup = p_real(p, "warmup");
  cfg.epochs = p_count(p, "epochs");
  cfg.steps_per_epoch = p_count(p, "steps_per_epoch");
  cfg.batch = p_count(p, "batch");
  cfg.eta_i = p_real(p, "eta_i");
  cfg.eta_f = p_real(p, "eta_f");
  cfg.learning_rate = p_real(p, "learning_rate");
  CumixConfig agg_cfg = cfg;
  agg_cfg.eta_i = 0.0;
  agg_cfg.eta_f = 0.0;

  RngStream rng_mix(seed * 13 + 1), rng_agg(seed * 13 + 1);
  const CumixModel mix_model = train_cumix(train, seen_bank, cfg, rng_mix);
  const CumixModel agg_model = train_cumix(train, seen_bank, agg_cfg, rng_agg);

  auto accuracy = [&](const CumixModel& model) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test_rows.size(); ++i)
      hits += classify_zsl(model, test_rows[i], unseen_bank) == test_labels[i];
    return static_cast<double>(hits) / static_cast<double>(test_rows.size());
  };
  const double acc_mix = accuracy(mix_model);
  const double acc_agg = accuracy(agg_model);
  const double chance = 1.0 / static_cast<double>(unseen_attrs.size());

  ordered_json metrics = {{"accuracy_cumix", acc_mix},
                          {"accuracy_agg", acc_agg},
                          {"chance", chance}};
  return finish("cumix", seed, p, metrics,
                acc_mix >= acc_agg && acc_mix > chance);
}

using ScenarioFn = RunReport (*)(std::uint64_t, const ordered_json&,
                                 const std::string&);

const std::vector<std::pair<std::string, ScenarioFn>>& scenario_table() {
  static const std::vector<std::pair<std::string, ScenarioFn>> table = {
      {"latent", run_latent}, {"dg", run_dg},
      {"onda", run_onda},     {"adagraph", run_adagraph},
      {"bat", run_bat},       {"mib", run_mib},
      {"owr", run_owr},       {"cumix", run_cumix}};
  return table;
}

}  // namespace

LinearModel train_softmax_classifier(const Matrix& x,
                                     const std::vector<int>& labels,
                                     std::size_t classes, std::size_t steps,
                                     double learning_rate, RngStream& rng) {
  if (x.rows == 0 || x.rows != labels.size())
    throw std::invalid_argument("bad training batch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw std::invalid_argument("label out of range");
  LinearModel model = make_linear(classes, x.cols, rng);
  OptimState o_w{learning_rate, 0.0, 0.0, {}};
  OptimState o_b{learning_rate, 0.0, 0.0, {}};
  const double inv_n = 1.0 / static_cast<double>(x.rows);
  for (std::size_t step = 0; step < steps; ++step) {
    LinearGrads g = zero_grads(model);
    for (std::size_t i = 0; i < x.rows; ++i) {
      auto d = ce_grad_logits(softmax(linear_forward(model, x.row(i))),
                              static_cast<std::size_t>(labels[i]));
      for (auto& v : d) v *= inv_n;
      linear_backward(model, x.row(i), d, g);
    }
    sgd_step(model.W.data, g.dW.data, o_w);
    sgd_step(model.b, g.db, o_b);
  }
  return model;
}

ExperimentConfig config_from_json(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad config json: ") + e.what());
  }
  if (!j.is_object())
    throw std::invalid_argument("config must be a JSON object");
  ExperimentConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "scenario") {
      cfg.scenario = value.get<std::string>();
    } else if (key == "seed") {
      cfg.seed = value.get<std::uint64_t>();
    } else if (key == "params") {
      cfg.params = value;
    } else if (key == "dataset") {
      cfg.dataset = value.get<std::string>();
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["scenario"] = cfg.scenario;
  j["seed"] = cfg.seed;
  j["params"] = cfg.params;
  if (!cfg.dataset.empty()) j["dataset"] = cfg.dataset;
  return j.dump(2) + "\n";
}

std::string report_to_json(const RunReport& report) {
  ordered_json j;
  j["version"] = report.version;
  j["scenario"] = report.scenario;
  j["seed"] = report.seed;
  if (!report.dataset.empty()) j["dataset"] = report.dataset;
  j["params"] = report.params;
  j["metrics"] = report.metrics;
  j["ok"] = report.ok;
  return j.dump(2) + "\n";
}

RunReport report_from_json(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad report json: ") + e.what());
  }
  RunReport report;
  try {
    report.version = j.at("version").get<std::string>();
    report.scenario = j.at("scenario").get<std::string>();
    report.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("dataset"))
      report.dataset = j.at("dataset").get<std::string>();
    report.params = j.at("params");
    report.metrics = j.at("metrics");
    report.ok = j.at("ok").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad report field: ") + e.what());
  }
  return report;
}

std::string format_report(const RunReport& report) {
  std::string out;
  out += "scenario: " + report.scenario + "\n";
  out += "seed:     " + std::to_string(report.seed) + "\n";
  out += "version:  " + report.version + "\n";
  if (!report.dataset.empty()) out += "dataset:  " + report.dataset + "\n";
  out += "status:   " + std::string(report.ok ? "ok" : "FAILED") + "\n";
  out += "metrics:\n";
  for (const auto& [key, value] : report.metrics.items()) {
    if (value.is_object()) {
      out += "  " + key + ":\n";
      for (const auto& [k2, v2] : value.items())
        out += "    " + k2 + ": " + v2.dump() + "\n";
    } else {
      out += "  " + key + ": " + value.dump() + "\n";
    }
  }
  return out;
}

std::vector<std::string> scenario_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : scenario_table()) names.push_back(name);
  return names;
}

RunReport run_scenario(const ExperimentConfig& cfg) {
  for (const auto& [name, fn] : scenario_table()) {
    if (name != cfg.scenario) continue;
    RunReport report = fn(cfg.seed, cfg.params, cfg.dataset);
    report.dataset = cfg.dataset;
    return report;
  }
  throw std::invalid_argument("unknown scenario '" + cfg.scenario + "'");
}

// ---- gradcheck registry ----------------------------------------------------

namespace {

Matrix uniform_matrix(RngStream& rng, std::size_t rows, std::size_t cols,
                      double lo, double hi) {
  Matrix m(rows, cols);
  for (auto& v : m.data) v = rng.next_uniform(lo, hi);
  return m;
}

// probe loss sum(c .* y + 0.5 y.^2), dL/dy = c + y
double probe_loss(const Matrix& y, const Matrix& coeff) {
  double loss = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i)
    loss += coeff.data[i] * y.data[i] + 0.5 * y.data[i] * y.data[i];
  return loss;
}

double check_mda(RngStream& rng) {
  const std::size_t b = 3 + rng.next_below(6);
  const std::size_t f = 1 + rng.next_below(4);
  const std::size_t d = 1 + rng.next_below(3);
  const Matrix x = uniform_matrix(rng, b, f, -2.0, 2.0);
  Matrix w(b, d);
  for (std::size_t i = 0; i < b; ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      w.at(i, k) = std::exp(rng.next_uniform(-1.0, 1.0));
      sum += w.at(i, k);
    }
    for (std::size_t k = 0; k < d; ++k) w.at(i, k) /= sum;
  }
  std::vector<double> gamma(f), beta(f);
  for (auto& v : gamma) v = rng.next_uniform(0.5, 1.5);
  for (auto& v : beta) v = rng.next_uniform(-0.5, 0.5);
  const Matrix coeff = uniform_matrix(rng, b, f, -1.0, 1.0);

  auto pack = [&]() {
    std::vector<double> p = x.data;
    p.insert(p.end(), w.data.begin(), w.data.end());
    p.insert(p.end(), gamma.begin(), gamma.end());
    p.insert(p.end(), beta.begin(), beta.end());
    return p;
  };
  auto eval = [&](const std::vector<double>& p) {
    Matrix qx = x, qw = w;
    std::vector<double> qg = gamma, qb = beta;
    std::size_t o = 0;
    for (auto& v : qx.data) v = p[o++];
    for (auto& v : qw.data) v = p[o++];
    for (auto& v : qg) v = p[o++];
    for (auto& v : qb) v = p[o++];
    const auto st = mda_statistics(qx, qw);
    return probe_loss(mda_forward(qx, qw, st, qg, qb), coeff);
  };

  const auto st = mda_statistics(x, w);
  const Matrix y = mda_forward(x, w, st, gamma, beta);
  Matrix dy(b, f);
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    dy.data[i] = coeff.data[i] + y.data[i];
  const MdaGrads g = mda_backward(x, w, st, gamma, beta, kBnEps, dy);
  std::vector<double> analytic = g.dx.data;
  analytic.insert(analytic.end(), g.dw.data.begin(), g.dw.data.end());
  analytic.insert(analytic.end(), g.dgamma.begin(), g.dgamma.end());
  analytic.insert(analytic.end(), g.dbeta.begin(), g.dbeta.end());
  return grad_rel_error(analytic, finite_diff_grad(eval, pack(), 1e-5));
}

double check_mask_k(RngStream& rng) {
  const std::size_t rows = 2 + rng.next_below(3);
  const std::size_t cols = 2 + rng.next_below(3);
  MaskedAffine layer;
  layer.W = uniform_matrix(rng, rows, cols, -1.5, 1.5);
  layer.R = uniform_matrix(rng, rows, cols, -1.0, 1.0);
  layer.k0 = rng.next_uniform(-1.0, 1.0);
  layer.k1 = rng.next_uniform(-1.0, 1.0);
  layer.k2 = rng.next_uniform(-1.0, 1.0);
  layer.k3 = rng.next_uniform(-1.0, 1.0);
  const Matrix coeff = uniform_matrix(rng, rows, cols, -1.0, 1.0);

  auto eval = [&](const std::vector<double>& k) {
    MaskedAffine q = layer;
    q.k0 = k[0];
    q.k1 = k[1];
    q.k2 = k[2];
    q.k3 = k[3];
    return probe_loss(effective_weights(q), coeff);
  };
  const Matrix w = effective_weights(layer);
  Matrix up(rows, cols);
  for (std::size_t i = 0; i < up.data.size(); ++i)
    up.data[i] = coeff.data[i] + w.data[i];
  const MaskGrads g = masked_backward(layer, up);
  const auto numeric = finite_diff_grad(
      eval, {layer.k0, layer.k1, layer.k2, layer.k3}, 1e-6);
  return grad_rel_error({g.dk0, g.dk1, g.dk2, g.dk3}, numeric);
}

double check_mib(RngStream& rng) {
  const std::size_t old_count = 2 + rng.next_below(3);
  const std::size_t new_count = 1 + rng.next_below(3);
  const std::size_t pixels = 3 + rng.next_below(4);
  PixelBatch batch;
  batch.space = make_label_space(old_count, new_count);
  batch.logits = Matrix(pixels, batch.space.total());
  for (auto& v : batch.logits.data) v = 1.5 * rng.next_normal();
  Matrix raw(pixels, old_count);
  for (auto& v : raw.data) v = rng.next_normal();
  batch.old_probs = row_softmax(raw);
  batch.labels.resize(pixels);
  for (auto& y : batch.labels) {
    const std::size_t pick = rng.next_below(new_count + 1);
    y = pick == 0 ? 0 : static_cast<int>(old_count + pick - 1);
  }

  auto packed = [&](int which) {
    return [&batch, which](const std::vector<double>& flat) {
      PixelBatch b = batch;
      b.logits.data = flat;
      switch (which) {
        case 0: return mib_ce(b);
        case 1: return mib_kd(b);
        case 2: return lwf_kd(b);
        default: return plain_ce(b);
      }
    };
  };
  const std::vector<Matrix> analytic = {mib_ce_grad(batch), mib_kd_grad(batch),
                                        lwf_kd_grad(batch),
                                        plain_ce_grad(batch)};
  double worst = 0.0;
  for (int which = 0; which < 4; ++which)
    worst = std::max(
        worst, grad_rel_error(analytic[which].data,
                              finite_diff_grad(packed(which),
                                               batch.logits.data, 1e-5)));
  return worst;
}

double check_bdoc(RngStream& rng) {
  const std::size_t classes = 2 + rng.next_below(3);
  const std::size_t dim = 2 + rng.next_below(3);
  const std::size_t b = 2 * classes + rng.next_below(3);
  const Matrix features = uniform_matrix(rng, b, dim, -2.0, 2.0);
  const Matrix old_features = uniform_matrix(rng, b, dim, -2.0, 2.0);
  const Matrix centroids = uniform_matrix(rng, classes, dim, -2.0, 2.0);
  std::vector<int> labels(b);
  for (std::size_t i = 0; i < b; ++i) labels[i] = static_cast<int>(i % classes);
  const double sigma2 = 0.5 + rng.next_double();
  const double lambda = 0.6, gamma = 0.3;

  auto packed = [&](int which) {
    return [&, which](const std::vector<double>& flat) {
      Matrix f = features;
      f.data = flat;
      switch (which) {
        case 0: return dnno_ce(f, labels, centroids);
        case 1: return distill_penalty(f, old_features);
        case 2: return dnno_loss(f, labels, centroids, old_features, lambda);
        case 3: return bdoc_global(f, labels, centroids, sigma2);
        case 4: return bdoc_local(f, labels, sigma2);
        default:
          return bdoc_loss(f, labels, centroids, sigma2, old_features, lambda,
                           gamma);
      }
    };
  };
  const std::vector<Matrix> analytic = {
      dnno_ce_grad(features, labels, centroids),
      distill_penalty_grad(features, old_features),
      dnno_loss_grad(features, labels, centroids, old_features, lambda),
      bdoc_global_grad(features, labels, centroids, sigma2),
      bdoc_local_grad(features, labels, sigma2),
      bdoc_loss_grad(features, labels, centroids, sigma2, old_features, lambda,
                     gamma)};
  double worst = 0.0;
  for (int which = 0; which < 6; ++which)
    worst = std::max(
        worst,
        grad_rel_error(analytic[which].data,
                       finite_diff_grad(packed(which), features.data, 1e-6)));
  return worst;
}

double check_cumix(RngStream& rng) {
  const std::size_t in = 2 + rng.next_below(3);
  const std::size_t feat = 2 + rng.next_below(2);
  const std::size_t embed = 2 + rng.next_below(2);
  const std::size_t classes = 2 + rng.next_below(2);
  const std::size_t b = 4 + rng.next_below(4);

  EmbeddingBank bank;
  for (std::size_t k = 0; k < classes; ++k)
    bank.ids.push_back(static_cast<int>(k));
  bank.vectors = uniform_matrix(rng, classes, embed, -1.0, 1.0);

  CumixModel model = make_cumix_model(in, feat, embed, rng);
  ZslBatch batch;
  batch.inputs = uniform_matrix(rng, b, in, -2.0, 2.0);
  batch.labels.resize(b);
  batch.domains.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    batch.labels[i] = static_cast<int>(rng.next_below(classes));
    batch.domains[i] = i < 4 ? static_cast<int>(i / 2)
                             : static_cast<int>(rng.next_below(2));
  }
  RngStream plan_rng(rng.next_u64());
  const MixPlan plan = plan_mixes(batch.domains, 0.5, 1.5, plan_rng);
  const double eta_i = 0.6, eta_f = 0.4;

  CumixGrads grads = zero_cumix_grads(model);
  cumix_objective(model, batch, bank, plan, eta_i, eta_f, &grads);

  auto pack = [&](const CumixModel& m) {
    std::vector<double> out = m.f.W.data;
    out.insert(out.end(), m.f.b.begin(), m.f.b.end());
    out.insert(out.end(), m.g.W.data.begin(), m.g.W.data.end());
    out.insert(out.end(), m.g.b.begin(), m.g.b.end());
    return out;
  };
  auto unpack = [&](const std::vector<double>& v) {
    CumixModel m = model;
    std::size_t off = 0;
    std::copy(v.begin(), v.begin() + m.f.W.data.size(), m.f.W.data.begin());
    off += m.f.W.data.size();
    std::copy(v.begin() + off, v.begin() + off + m.f.b.size(), m.f.b.begin());
    off += m.f.b.size();
    std::copy(v.begin() + off, v.begin() + off + m.g.W.data.size(),
              m.g.W.data.begin());
    off += m.g.W.data.size();
    std::copy(v.begin() + off, v.begin() + off + m.g.b.size(), m.g.b.begin());
    return m;
  };
  const auto numeric = finite_diff_grad(
      [&](const std::vector<double>& v) {
        return cumix_objective(unpack(v), batch, bank, plan, eta_i, eta_f);
      },
      pack(model), 1e-6);
  std::vector<double> analytic = grads.f.dW.data;
  analytic.insert(analytic.end(), grads.f.db.begin(), grads.f.db.end());
  analytic.insert(analytic.end(), grads.g.dW.data.begin(),
                  grads.g.dW.data.end());
  analytic.insert(analytic.end(), grads.g.db.begin(), grads.g.db.end());
  return grad_rel_error(analytic, numeric);
}

// negative control: a gradient that is analytically wrong by one percent
double check_negative_control(RngStream& rng) {
  std::vector<double> x(3);
  for (auto& v : x) v = rng.next_uniform(-1.0, 1.0);
  auto eval = [](const std::vector<double>& p) {
    double s = 0.0;
    for (double v : p) s += v * v;
    return s;
  };
  std::vector<double> analytic(3);
  for (std::size_t i = 0; i < 3; ++i) analytic[i] = 2.0 * x[i] * 1.01;
  return grad_rel_error(analytic, finite_diff_grad(eval, x, 1e-6));
}

using CheckFn = double (*)(RngStream&);

const std::vector<std::pair<std::string, CheckFn>>& gradcheck_table() {
  static const std::vector<std::pair<std::string, CheckFn>> table = {
      {"mda_backward", check_mda},
      {"mask_k_gradients", check_mask_k},
      {"mib_losses", check_mib},
      {"bdoc_losses", check_bdoc},
      {"cumix_objective", check_cumix},
      {"negative_control", check_negative_control}};
  return table;
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : gradcheck_table()) names.push_back(name);
  return names;
}

GradcheckReport run_gradcheck(const std::string& op, std::size_t trials,
                              double tolerance, std::uint64_t seed) {
  if (trials == 0) throw std::invalid_argument("trials must be positive");
  for (const auto& [name, fn] : gradcheck_table()) {
    if (name != op) continue;
    GradcheckReport report;
    report.op = op;
    report.trials = trials;
    report.tolerance = tolerance;
    RngStream seeds(seed);
    for (std::size_t t = 0; t < trials; ++t) {
      RngStream rng(seeds.next_u64());
      report.max_rel_error = std::max(report.max_rel_error, fn(rng));
    }
    report.pass = report.max_rel_error <= tolerance;
    return report;
  }
  throw std::invalid_argument("unknown gradcheck op '" + op + "'");
}

}  // namespace shiftlab
