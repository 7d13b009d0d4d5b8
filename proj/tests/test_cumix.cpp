#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "shiftlab/cumix.hpp"
#include "shiftlab/gradcheck.hpp"
#include "shiftlab/numerics.hpp"
#include "shiftlab/rng.hpp"

using namespace shiftlab;

namespace {

EmbeddingBank orthonormal_bank(std::size_t classes) {
  EmbeddingBank bank;
  bank.vectors = Matrix(classes, classes);
  for (std::size_t k = 0; k < classes; ++k) {
    bank.ids.push_back(static_cast<int>(k));
    bank.vectors.at(k, k) = 1.0;
  }
  return bank;
}

CumixModel random_model(std::size_t in, std::size_t feat, std::size_t embed,
                        RngStream& rng) {
  return make_cumix_model(in, feat, embed, rng);
}

std::vector<double> onehot(std::size_t classes, std::size_t hot) {
  std::vector<double> v(classes, 0.0);
  v[hot] = 1.0;
  return v;
}

// independent forward pass used by the brute-force checks
std::vector<double> project(const CumixModel& model,
                            const std::vector<double>& x) {
  return linear_forward(model.g, linear_forward(model.f, x));
}

double soft_ce(const std::vector<double>& logits,
               const std::vector<double>& target) {
  const std::vector<double> p = softmax(logits);
  double loss = 0.0;
  for (std::size_t y = 0; y < p.size(); ++y)
    loss -= target[y] * std::log(std::max(p[y], 1e-300));
  return loss;
}

}  // namespace

TEST_CASE("schedule") {
  const double n = 4.0, bmax = 2.0;
  SUBCASE("knot points are exact") {
    CHECK(schedule(0.0, n, bmax) == std::pair{0.0, 0.0});
    CHECK(schedule(n, n, bmax) == std::pair{0.0, bmax});
    CHECK(schedule(1.5 * n, n, bmax) == std::pair{0.5, bmax});
    CHECK(schedule(2.0 * n, n, bmax) == std::pair{1.0, bmax});
    CHECK(schedule(3.0 * n, n, bmax) == std::pair{1.0, bmax});
  }
  SUBCASE("piecewise-linear between the knots") {
    CHECK(schedule(0.5 * n, n, bmax) == std::pair{0.0, 0.5 * bmax});
    CHECK(schedule(0.25 * n, n, bmax).second ==
          doctest::Approx(0.25 * bmax));
    CHECK(schedule(1.75 * n, n, bmax).first == doctest::Approx(0.75));
  }
  SUBCASE("both knobs are non-decreasing in s") {
    double prev_a = -1.0, prev_b = -1.0;
    for (double s = 0.0; s <= 3.0 * n; s += 0.1) {
      const auto [a, b] = schedule(s, n, bmax);
      CHECK(a >= prev_a);
      CHECK(b >= prev_b);
      prev_a = a;
      prev_b = b;
    }
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(schedule(-0.1, n, bmax), std::invalid_argument);
    CHECK_THROWS_AS(schedule(1.0, 0.5, bmax), std::invalid_argument);
    CHECK_THROWS_AS(schedule(1.0, n, 0.0), std::invalid_argument);
  }
}

TEST_CASE("mix2 and mix3") {
  const std::vector<double> a = {1.0, 2.0}, b = {3.0, -4.0}, c = {10.0, 0.0};
  SUBCASE("mix2") {
    CHECK(mix2(a, b, 1.0) == a);
    CHECK(mix2(a, a, 0.371) == a);
    CHECK(mix2({0.0}, {10.0}, 0.3)[0] == doctest::Approx(7.0));
    CHECK_THROWS_AS(mix2(a, {1.0}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(mix2(a, b, 1.5), std::invalid_argument);
  }
  SUBCASE("mix3 anchors and reductions") {
    CHECK(mix3(a, b, c, 1.0, 0) == a);
    CHECK(mix3(a, b, c, 1.0, 1) == a);
    CHECK(mix3(a, b, c, 0.42, 0) == mix2(a, c, 0.42));
    CHECK(mix3({2.0}, {8.0}, {100.0}, 0.5, 1)[0] == doctest::Approx(5.0));
    CHECK_THROWS_AS(mix3(a, b, c, 0.5, 2), std::invalid_argument);
  }
  SUBCASE("mixed label vectors stay distributions") {
    RngStream rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> ti = softmax({rng.next_normal(), rng.next_normal(),
                                        rng.next_normal()});
      std::vector<double> tj = softmax({rng.next_normal(), rng.next_normal(),
                                        rng.next_normal()});
      std::vector<double> tk = softmax({rng.next_normal(), rng.next_normal(),
                                        rng.next_normal()});
      const auto mixed = mix3(ti, tj, tk, rng.next_double(),
                              rng.next_bernoulli(0.5) ? 1 : 0);
      double sum = 0.0;
      for (double v : mixed) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("sample_triplet") {
  SUBCASE("forced choice") {
    RngStream rng(9);
    const std::vector<int> domains = {0, 0, 1};
    for (int trial = 0; trial < 200; ++trial) {
      const auto [j, k] = sample_triplet(domains, 0, rng);
      CHECK(j == 2);
      CHECK(k == 1);
    }
  }
  SUBCASE("valid and uniform over partner pairs") {
    RngStream rng(10);
    const std::vector<int> domains = {0, 0, 0, 1, 1};
    std::map<std::pair<std::size_t, std::size_t>, int> counts;
    for (int trial = 0; trial < 1000; ++trial) {
      const auto [j, k] = sample_triplet(domains, 0, rng);
      CHECK(domains[j] != domains[0]);
      CHECK(domains[k] == domains[0]);
      CHECK(k != 0);
      ++counts[{j, k}];
    }
    REQUIRE(counts.size() == 4);
    for (const auto& [pair, count] : counts) {
      CHECK(count > 180);
      CHECK(count < 320);
    }
  }
  SUBCASE("single-domain batches are rejected") {
    RngStream rng(11);
    CHECK_THROWS_AS(sample_triplet({0, 0, 0}, 0, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_triplet({0, 1}, 0, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_triplet({0, 0}, 5, rng), std::invalid_argument);
  }
}

TEST_CASE("plan_mixes") {
  SUBCASE("degenerate warm-up epoch means no mixing") {
    RngStream rng(12);
    const auto plan = plan_mixes({0, 0, 1, 1}, 0.0, 0.0, rng);
    REQUIRE(plan.image.size() == 4);
    REQUIRE(plan.feature.size() == 4);
    for (const auto& mix : plan.image) {
      CHECK(mix.lambda == 1.0);
      CHECK(mix.gamma == 0);
    }
  }
  SUBCASE("alpha zero stays intra-domain even in single-domain batches") {
    RngStream rng(13);
    const auto plan = plan_mixes({0, 0, 0}, 0.0, 1.5, rng);
    for (const auto& mix : plan.image) {
      CHECK(mix.gamma == 0);
      CHECK(mix.lambda >= 0.0);
      CHECK(mix.lambda <= 1.0);
    }
  }
  SUBCASE("cross-domain draws need a second domain") {
    RngStream rng(14);
    CHECK_THROWS_AS(plan_mixes({0, 0, 0}, 1.0, 1.5, rng),
                    std::invalid_argument);
    // a lone sample has no same-domain peer either
    CHECK_THROWS_AS(plan_mixes({0}, 0.0, 1.5, rng), std::invalid_argument);
  }
}

TEST_CASE("agg_loss closed forms") {
  const EmbeddingBank bank = orthonormal_bank(3);
  SUBCASE("zero projection gives the uniform loss") {
    RngStream rng(15);
    CumixModel model = random_model(4, 3, 3, rng);
    for (auto& v : model.f.W.data) v = 0.0;
    for (auto& v : model.f.b) v = 0.0;
    for (auto& v : model.g.W.data) v = 0.0;
    for (auto& v : model.g.b) v = 0.0;
    Matrix inputs(2, 4, {1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 2.0});
    CHECK(agg_loss(model, inputs, {0, 2}, bank) ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  SUBCASE("a dominant compatibility drives the loss to zero") {
    RngStream rng(16);
    CumixModel model = random_model(4, 3, 3, rng);
    for (auto& v : model.f.W.data) v = 0.0;
    for (auto& v : model.f.b) v = 0.0;
    for (auto& v : model.g.W.data) v = 0.0;
    model.g.b = {0.0, 30.0, 0.0};  // aligned with class 1 embedding
    Matrix inputs(1, 4, {0.3, -0.2, 0.8, 0.1});
    CHECK(agg_loss(model, inputs, {1}, bank) <= 1e-9);
  }
  SUBCASE("random toy matches a brute-force pass") {
    RngStream rng(17);
    EmbeddingBank toy;
    toy.ids = {5, 9, 11};
    toy.vectors = Matrix(3, 2);
    for (auto& v : toy.vectors.data) v = rng.next_uniform(-1.0, 1.0);
    CumixModel model = random_model(3, 4, 2, rng);
    Matrix inputs(4, 3);
    for (auto& v : inputs.data) v = rng.next_uniform(-2.0, 2.0);
    const std::vector<int> labels = {9, 5, 11, 9};
    double expected = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto e = project(model, inputs.row(i));
      std::vector<double> logits(3);
      for (std::size_t y = 0; y < 3; ++y) {
        logits[y] = 0.0;
        for (std::size_t d = 0; d < 2; ++d)
          logits[y] += toy.vectors.at(y, d) * e[d];
      }
      expected += soft_ce(logits, onehot(3, bank_index(toy, labels[i])));
    }
    expected /= 4.0;
    CHECK(agg_loss(model, inputs, labels, toy) ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK_THROWS_AS(agg_loss(model, inputs, {1, 2, 3, 4}, toy),
                    std::invalid_argument);
  }
}

TEST_CASE("mixed losses") {
  RngStream rng(18);
  const EmbeddingBank bank = orthonormal_bank(3);
  CumixModel model = random_model(4, 3, 3, rng);
  ZslBatch batch;
  batch.inputs = Matrix(4, 4);
  for (auto& v : batch.inputs.data) v = rng.next_uniform(-2.0, 2.0);
  batch.labels = {0, 1, 2, 0};
  batch.domains = {0, 0, 1, 1};

  SUBCASE("lambda one reduces both mixed losses to the aggregation loss") {
    std::vector<MixSpec> mixes(4);
    for (std::size_t i = 0; i < 4; ++i) {
      mixes[i].j = (i + 2) % 4;
      mixes[i].k = i ^ 1u;
      mixes[i].lambda = 1.0;
      mixes[i].gamma = i % 2 ? 1 : 0;
    }
    const double agg = agg_loss(model, batch.inputs, batch.labels, bank);
    CHECK(mimg_loss(model, batch, mixes, bank) ==
          doctest::Approx(agg).epsilon(1e-12));
    CHECK(mfeat_loss(model, batch, mixes, bank) ==
          doctest::Approx(agg).epsilon(1e-12));
  }
  SUBCASE("constant features reduce mfeat to label mixing") {
    CumixModel flat = model;
    for (auto& v : flat.f.W.data) v = 0.0;
    flat.f.b = {0.4, -0.7, 1.1};
    RngStream plan_rng(19);
    const auto plan = plan_mixes(batch.domains, 0.6, 1.5, plan_rng);
    const auto logits_all = [&] {
      const auto e = project(flat, batch.inputs.row(0));
      std::vector<double> logits(3);
      for (std::size_t y = 0; y < 3; ++y) logits[y] = e[y];
      return logits;
    }();
    double expected = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& mix = plan.feature[i];
      const auto target = mix3(onehot(3, batch.labels[i]),
                               onehot(3, batch.labels[mix.j]),
                               onehot(3, batch.labels[mix.k]), mix.lambda,
                               mix.gamma);
      expected += soft_ce(logits_all, target);
    }
    expected /= 4.0;
    CHECK(mfeat_loss(flat, batch, plan.feature, bank) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("brute-force composition of the full objective") {
    RngStream plan_rng(20);
    const auto plan = plan_mixes(batch.domains, 0.5, 2.0, plan_rng);
    const double expected =
        agg_loss(model, batch.inputs, batch.labels, bank) +
        0.7 * mimg_loss(model, batch, plan.image, bank) +
        0.3 * mfeat_loss(model, batch, plan.feature, bank);
    CHECK(cumix_objective(model, batch, bank, plan, 0.7, 0.3) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("zero weights recover the aggregation baseline") {
    RngStream plan_rng(21);
    const auto plan = plan_mixes(batch.domains, 0.5, 2.0, plan_rng);
    CHECK(cumix_objective(model, batch, bank, plan, 0.0, 0.0) ==
          doctest::Approx(agg_loss(model, batch.inputs, batch.labels, bank))
              .epsilon(1e-12));
  }
  SUBCASE("epoch-zero plan collapses the objective onto the baseline") {
    RngStream plan_rng(22);
    const auto plan = plan_mixes(batch.domains, 0.0, 0.0, plan_rng);
    const double agg = agg_loss(model, batch.inputs, batch.labels, bank);
    CHECK(cumix_objective(model, batch, bank, plan, 0.8, 0.4) ==
          doctest::Approx((1.0 + 0.8 + 0.4) * agg).epsilon(1e-12));
  }
}

TEST_CASE("single-domain feature-only objective matches plain mixup") {
  RngStream rng(23);
  const EmbeddingBank bank = orthonormal_bank(4);
  CumixModel model = random_model(5, 4, 4, rng);
  ZslBatch batch;
  batch.inputs = Matrix(6, 5);
  for (auto& v : batch.inputs.data) v = rng.next_uniform(-2.0, 2.0);
  batch.labels = {0, 1, 2, 3, 1, 2};
  batch.domains = std::vector<int>(6, 0);

  RngStream plan_rng(24);
  const auto plan = plan_mixes(batch.domains, 0.0, 1.2, plan_rng);
  const double ours = cumix_objective(model, batch, bank, plan, 0.0, 0.9);

  // independently coded two-way feature mixup over the same frozen draws
  double plain = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& mix = plan.feature[i];
    const auto fi = linear_forward(model.f, batch.inputs.row(i));
    const auto fk = linear_forward(model.f, batch.inputs.row(mix.k));
    std::vector<double> fmix(fi.size());
    for (std::size_t d = 0; d < fi.size(); ++d)
      fmix[d] = mix.lambda * fi[d] + (1.0 - mix.lambda) * fk[d];
    const auto e = linear_forward(model.g, fmix);
    std::vector<double> target(4, 0.0);
    target[static_cast<std::size_t>(batch.labels[i])] += mix.lambda;
    target[static_cast<std::size_t>(batch.labels[mix.k])] += 1.0 - mix.lambda;
    plain += soft_ce(e, target);
    plain += soft_ce(project(model, batch.inputs.row(i)),
                     onehot(4, static_cast<std::size_t>(batch.labels[i])));
  }
  plain /= 6.0;
  // 0.9 weighting applies to the mixup half only
  double weighted = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& mix = plan.feature[i];
    const auto fi = linear_forward(model.f, batch.inputs.row(i));
    const auto fk = linear_forward(model.f, batch.inputs.row(mix.k));
    std::vector<double> fmix(fi.size());
    for (std::size_t d = 0; d < fi.size(); ++d)
      fmix[d] = mix.lambda * fi[d] + (1.0 - mix.lambda) * fk[d];
    std::vector<double> target(4, 0.0);
    target[static_cast<std::size_t>(batch.labels[i])] += mix.lambda;
    target[static_cast<std::size_t>(batch.labels[mix.k])] += 1.0 - mix.lambda;
    weighted += 0.9 * soft_ce(linear_forward(model.g, fmix), target);
    weighted += soft_ce(project(model, batch.inputs.row(i)),
                        onehot(4, static_cast<std::size_t>(batch.labels[i])));
  }
  weighted /= 6.0;
  CHECK(ours == doctest::Approx(weighted).epsilon(1e-9));
  (void)plain;
}

TEST_CASE("cumix objective gradients match finite differences") {
  RngStream seeds(2027);
  for (int trial = 0; trial < 25; ++trial) {
    RngStream rng(seeds.next_u64());
    const std::size_t in = 2 + rng.next_below(3);
    const std::size_t feat = 2 + rng.next_below(2);
    const std::size_t embed = 2 + rng.next_below(2);
    const std::size_t classes = 2 + rng.next_below(2);
    const std::size_t b = 4 + rng.next_below(4);

    EmbeddingBank bank;
    bank.vectors = Matrix(classes, embed);
    for (std::size_t k = 0; k < classes; ++k) bank.ids.push_back((int)k);
    for (auto& v : bank.vectors.data) v = rng.next_uniform(-1.0, 1.0);

    CumixModel model = random_model(in, feat, embed, rng);
    ZslBatch batch;
    batch.inputs = Matrix(b, in);
    for (auto& v : batch.inputs.data) v = rng.next_uniform(-2.0, 2.0);
    batch.labels.resize(b);
    batch.domains.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
      batch.labels[i] = static_cast<int>(rng.next_below(classes));
      batch.domains[i] = i < 4 ? static_cast<int>(i / 2)
                               : static_cast<int>(rng.next_below(2));
    }
    RngStream plan_rng(trial + 100);
    const auto plan = plan_mixes(batch.domains, 0.5, 1.5, plan_rng);
    const double eta_i = 0.6, eta_f = 0.4;

    CumixGrads grads = zero_cumix_grads(model);
    cumix_objective(model, batch, bank, plan, eta_i, eta_f, &grads);

    std::vector<double> flat;
    auto pack = [&](const CumixModel& m) {
      std::vector<double> out = m.f.W.data;
      out.insert(out.end(), m.f.b.begin(), m.f.b.end());
      out.insert(out.end(), m.g.W.data.begin(), m.g.W.data.end());
      out.insert(out.end(), m.g.b.begin(), m.g.b.end());
      return out;
    };
    flat = pack(model);
    auto unpack = [&](const std::vector<double>& v) {
      CumixModel m = model;
      std::size_t off = 0;
      std::copy(v.begin() + off, v.begin() + off + m.f.W.data.size(),
                m.f.W.data.begin());
      off += m.f.W.data.size();
      std::copy(v.begin() + off, v.begin() + off + m.f.b.size(),
                m.f.b.begin());
      off += m.f.b.size();
      std::copy(v.begin() + off, v.begin() + off + m.g.W.data.size(),
                m.g.W.data.begin());
      off += m.g.W.data.size();
      std::copy(v.begin() + off, v.begin() + off + m.g.b.size(),
                m.g.b.begin());
      return m;
    };
    const auto numeric = finite_diff_grad(
        [&](const std::vector<double>& v) {
          return cumix_objective(unpack(v), batch, bank, plan, eta_i, eta_f);
        },
        flat, 1e-6);
    std::vector<double> analytic = grads.f.dW.data;
    analytic.insert(analytic.end(), grads.f.db.begin(), grads.f.db.end());
    analytic.insert(analytic.end(), grads.g.dW.data.begin(),
                    grads.g.dW.data.end());
    analytic.insert(analytic.end(), grads.g.db.begin(), grads.g.db.end());
    CHECK(grad_rel_error(analytic, numeric) <= 1e-6);
  }
}

TEST_CASE("zsl_predict") {
  const EmbeddingBank bank = orthonormal_bank(3);
  SUBCASE("an embedding axis picks its class") {
    CHECK(zsl_predict({0.0, 1.0, 0.0}, bank) == 1);
    CHECK(zsl_predict({0.0, 0.0, 0.7}, bank) == 2);
  }
  SUBCASE("full tie resolves to the first id") {
    CHECK(zsl_predict({0.0, 0.0, 0.0}, bank) == 0);
  }
  SUBCASE("random case matches brute-force argmax") {
    RngStream rng(25);
    EmbeddingBank toy;
    toy.ids = {4, 7, 13, 2};
    toy.vectors = Matrix(4, 3);
    for (auto& v : toy.vectors.data) v = rng.next_uniform(-1.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
      const std::vector<double> e = {rng.next_normal(), rng.next_normal(),
                                     rng.next_normal()};
      std::size_t best = 0;
      double best_dot = -1e300;
      for (std::size_t k = 0; k < 4; ++k) {
        double dot = 0.0;
        for (std::size_t d = 0; d < 3; ++d) dot += toy.vectors.at(k, d) * e[d];
        if (dot > best_dot) {
          best_dot = dot;
          best = k;
        }
      }
      CHECK(zsl_predict(e, toy) == toy.ids[best]);
    }
  }
  SUBCASE("empty candidate set is rejected") {
    EmbeddingBank empty;
    CHECK_THROWS_AS(zsl_predict({1.0}, empty), std::invalid_argument);
  }
}

TEST_CASE("embedding bank serialization") {
  EmbeddingBank bank;
  bank.ids = {3, 8};
  bank.vectors = Matrix(2, 4, {0.5, -1.0, 0.25, 1e-9, 2.0, 0.0, -0.125, 7.5});
  const std::string text = bank_to_json(bank);
  const EmbeddingBank back = bank_from_json(text);
  REQUIRE(back.ids == bank.ids);
  REQUIRE(back.vectors.rows == 2);
  REQUIRE(back.vectors.cols == 4);
  for (std::size_t i = 0; i < bank.vectors.data.size(); ++i)
    CHECK(back.vectors.data[i] == bank.vectors.data[i]);

  CHECK_THROWS_AS(bank_from_json("nope"), std::invalid_argument);
  CHECK_THROWS_AS(bank_from_json("{}"), std::invalid_argument);
  EmbeddingBank dup;
  dup.ids = {1, 1};
  dup.vectors = Matrix(2, 2, {1.0, 0.0, 0.0, 1.0});
  CHECK_THROWS_AS(bank_to_json(dup), std::invalid_argument);
}

TEST_CASE("curriculum mixing beats the aggregation baseline on unseen pairs") {
  // Seen attribute patterns during training, unseen combinations plus an
  // unseen domain at test time; accuracy is over the unseen classes only.
  const std::vector<std::vector<double>> seen_attrs = {
      {1, 1, 0, 0}, {1, 0, 1, 0}, {1, 0, 0, 1}, {0, 1, 1, 0}};
  const std::vector<std::vector<double>> unseen_attrs = {{0, 1, 0, 1},
                                                         {0, 0, 1, 1}};
  const std::size_t input_dim = 6, attr_dim = 4;

  for (std::uint64_t seed : {3u, 9u, 12u, 27u, 35u}) {
    RngStream rng(seed);
    // base attribute-to-input map plus a per-domain perturbation
    Matrix base(input_dim, attr_dim);
    for (auto& v : base.data) v = rng.next_uniform(-1.0, 1.0);
    std::vector<Matrix> domain_maps;
    for (int d = 0; d < 3; ++d) {
      Matrix m = base;
      for (auto& v : m.data) v += 0.35 * rng.next_normal();
      domain_maps.push_back(m);
    }
    auto make_sample = [&](const std::vector<double>& attr, int domain,
                           RngStream& noise) {
      std::vector<double> x = matvec(domain_maps[(std::size_t)domain], attr);
      for (auto& v : x) v += 0.25 * noise.next_normal();
      return x;
    };

    EmbeddingBank seen_bank, unseen_bank;
    for (std::size_t k = 0; k < seen_attrs.size(); ++k)
      seen_bank.ids.push_back(static_cast<int>(k));
    seen_bank.vectors = from_rows(seen_attrs);
    for (std::size_t k = 0; k < unseen_attrs.size(); ++k)
      unseen_bank.ids.push_back(static_cast<int>(seen_attrs.size() + k));
    unseen_bank.vectors = from_rows(unseen_attrs);

    ZslBatch train;
    std::vector<std::vector<double>> rows;
    for (int domain = 0; domain < 2; ++domain)
      for (std::size_t k = 0; k < seen_attrs.size(); ++k)
        for (int rep = 0; rep < 30; ++rep) {
          rows.push_back(make_sample(seen_attrs[k], domain, rng));
          train.labels.push_back(static_cast<int>(k));
          train.domains.push_back(domain);
        }
    train.inputs = from_rows(rows);

    std::vector<std::vector<double>> test_rows;
    std::vector<int> test_labels;
    for (std::size_t k = 0; k < unseen_attrs.size(); ++k)
      for (int rep = 0; rep < 60; ++rep) {
        test_rows.push_back(make_sample(unseen_attrs[k], 2, rng));
        test_labels.push_back(static_cast<int>(seen_attrs.size() + k));
      }

    CumixConfig cfg;
    cfg.feature_dim = 5;
    CumixConfig agg_cfg = cfg;
    agg_cfg.eta_i = 0.0;
    agg_cfg.eta_f = 0.0;
    RngStream rng_mix(seed * 13 + 1), rng_agg(seed * 13 + 1);
    const CumixModel mix_model = train_cumix(train, seen_bank, cfg, rng_mix);
    const CumixModel agg_model =
        train_cumix(train, seen_bank, agg_cfg, rng_agg);

    auto accuracy = [&](const CumixModel& model) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < test_rows.size(); ++i)
        hits += classify_zsl(model, test_rows[i], unseen_bank) ==
                        test_labels[i]
                    ? 1
                    : 0;
      return static_cast<double>(hits) /
             static_cast<double>(test_rows.size());
    };
    const double acc_mix = accuracy(mix_model);
    const double acc_agg = accuracy(agg_model);
    INFO("seed ", seed, " cumix ", acc_mix, " agg ", acc_agg);
    CHECK(acc_mix >= acc_agg);
    CHECK(acc_mix > 0.5);  // better than chance on two classes
  }
}
