#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "shiftlab/adagraph.hpp"
#include "shiftlab/matrix.hpp"
#include "shiftlab/numerics.hpp"
#include "shiftlab/rng.hpp"

using namespace shiftlab;

namespace {

GBNLayer make_layer(std::vector<double> mu, std::vector<double> var,
                    std::vector<double> gamma, std::vector<double> beta) {
  GBNLayer l;
  l.mu = std::move(mu);
  l.var = std::move(var);
  l.gamma = std::move(gamma);
  l.beta = std::move(beta);
  return l;
}

GBNNode make_node(std::vector<double> metadata, GBNLayer layer) {
  GBNNode n;
  n.metadata = std::move(metadata);
  n.layers.push_back(std::move(layer));
  return n;
}

DomainGraph three_node_graph() {
  DomainGraph g;
  g.sigma_d = 0.1;
  g.nodes.push_back(make_node({0.0, 0.0},
                              make_layer({0.0}, {1.0}, {1.0}, {0.0})));
  g.nodes.push_back(make_node({0.2, 0.0},
                              make_layer({2.0}, {2.0}, {0.5}, {1.0})));
  g.nodes.push_back(make_node({0.0, 0.4},
                              make_layer({-1.0}, {0.5}, {1.5}, {-1.0})));
  return g;
}

Matrix random_batch(RngStream& rng, std::size_t rows, std::size_t cols,
                    double shift = 0.0, double sigma = 1.0) {
  Matrix x(rows, cols);
  for (auto& v : x.data) v = shift + sigma * rng.next_normal();
  return x;
}

}  // namespace

TEST_CASE("edge_weight") {
  CHECK(edge_weight({0.3, 0.4}, {0.3, 0.4}, 0.1) == doctest::Approx(1.0));
  // squared distance 0.2 with sigma_d = 0.1 gives exp(-1)
  const double d = std::sqrt(0.2);
  CHECK(edge_weight({0.0}, {d}, 0.1) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(edge_weight({0.1, 0.9}, {0.7, 0.2}, 0.1) ==
        doctest::Approx(edge_weight({0.7, 0.2}, {0.1, 0.9}, 0.1)));
  CHECK_THROWS_AS(edge_weight({0.1}, {0.1, 0.2}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(edge_weight({0.1}, {0.2}, 0.0), std::invalid_argument);
}

TEST_CASE("regress_params_metadata") {
  SUBCASE("dominant node recovers its own parameters") {
    DomainGraph g;
    g.sigma_d = 0.1;
    g.nodes.push_back(make_node({0.0, 0.0},
                                make_layer({1.0}, {2.0}, {0.7}, {0.3})));
    // remote nodes: squared distance 2.0 -> weight exp(-10)
    g.nodes.push_back(make_node({1.0, 1.0},
                                make_layer({5.0}, {9.0}, {2.0}, {-2.0})));
    auto layers = regress_params_metadata(g, {0.0, 0.0});
    CHECK(std::fabs(layers[0].mu[0] - 1.0) / 1.0 <= 1e-3);
    CHECK(std::fabs(layers[0].var[0] - 2.0) / 2.0 <= 1e-3);
    CHECK(std::fabs(layers[0].gamma[0] - 0.7) / 0.7 <= 1e-3);
  }
  SUBCASE("equidistant nodes average") {
    DomainGraph g;
    g.sigma_d = 0.1;
    g.nodes.push_back(make_node({0.0}, make_layer({1.0}, {1.0}, {2.0}, {0.0})));
    g.nodes.push_back(make_node({0.4}, make_layer({3.0}, {2.0}, {4.0}, {1.0})));
    auto layers = regress_params_metadata(g, {0.2});
    CHECK(layers[0].mu[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(layers[0].var[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(layers[0].gamma[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(layers[0].beta[0] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("three nodes match a brute-force weighted average") {
    auto g = three_node_graph();
    const std::vector<double> target = {0.1, 0.1};
    auto layers = regress_params_metadata(g, target);
    double total = 0.0;
    std::vector<double> w(3);
    for (std::size_t k = 0; k < 3; ++k) {
      w[k] = edge_weight(target, g.nodes[k].metadata, g.sigma_d);
      total += w[k];
    }
    double mu = 0.0, gamma = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      mu += w[k] / total * g.nodes[k].layers[0].mu[0];
      gamma += w[k] / total * g.nodes[k].layers[0].gamma[0];
    }
    CHECK(layers[0].mu[0] == doctest::Approx(mu).epsilon(1e-12));
    CHECK(layers[0].gamma[0] == doctest::Approx(gamma).epsilon(1e-12));
  }
  SUBCASE("empty graph rejected") {
    DomainGraph g;
    CHECK_THROWS_AS(regress_params_metadata(g, {0.0}),
                    std::invalid_argument);
  }
}

TEST_CASE("regressed parameters stay in the convex hull") {
  RngStream rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    DomainGraph g;
    g.sigma_d = 0.1;
    for (int k = 0; k < 4; ++k)
      g.nodes.push_back(make_node(
          {rng.next_double(), rng.next_double()},
          make_layer({rng.next_uniform(-3.0, 3.0)},
                     {rng.next_uniform(0.1, 4.0)},
                     {rng.next_uniform(0.2, 2.0)},
                     {rng.next_uniform(-1.0, 1.0)})));
    auto layers =
        regress_params_metadata(g, {rng.next_double(), rng.next_double()});
    auto hull = [&](auto pick, double value) {
      double lo = 1e300, hi = -1e300;
      for (const auto& n : g.nodes) {
        lo = std::min(lo, pick(n.layers[0]));
        hi = std::max(hi, pick(n.layers[0]));
      }
      CHECK(value >= lo - 1e-12);
      CHECK(value <= hi + 1e-12);
    };
    hull([](const GBNLayer& l) { return l.mu[0]; }, layers[0].mu[0]);
    hull([](const GBNLayer& l) { return l.var[0]; }, layers[0].var[0]);
    hull([](const GBNLayer& l) { return l.gamma[0]; }, layers[0].gamma[0]);
    hull([](const GBNLayer& l) { return l.beta[0]; }, layers[0].beta[0]);
    CHECK(layers[0].var[0] >= 0.0);
  }
}

TEST_CASE("regress_params_image") {
  auto g = three_node_graph();
  SUBCASE("one-hot selects a node") {
    auto layers = regress_params_image(g, {0.0, 1.0, 0.0});
    CHECK(layers[0].mu[0] == 2.0);
    CHECK(layers[0].gamma[0] == 0.5);
  }
  SUBCASE("uniform over identical nodes") {
    DomainGraph gg;
    gg.nodes.push_back(make_node({0.0}, make_layer({1.0}, {1.0}, {1.0}, {0.0})));
    gg.nodes.push_back(make_node({1.0}, make_layer({1.0}, {1.0}, {1.0}, {0.0})));
    auto layers = regress_params_image(gg, {0.5, 0.5});
    CHECK(layers[0].mu[0] == doctest::Approx(1.0));
  }
  SUBCASE("soft mixture matches brute force") {
    DomainGraph gg;
    gg.nodes.push_back(make_node({0.0}, make_layer({1.0}, {2.0}, {3.0}, {4.0})));
    gg.nodes.push_back(make_node({1.0}, make_layer({-1.0}, {4.0}, {1.0}, {0.0})));
    auto layers = regress_params_image(gg, {0.3, 0.7});
    CHECK(layers[0].mu[0] == doctest::Approx(0.3 - 0.7).epsilon(1e-12));
    CHECK(layers[0].var[0] == doctest::Approx(0.6 + 2.8).epsilon(1e-12));
  }
  SUBCASE("wrong node count rejected") {
    CHECK_THROWS_AS(regress_params_image(g, {0.5, 0.5}),
                    std::invalid_argument);
  }
}

TEST_CASE("graph_scalebias") {
  SUBCASE("single node returns its own parameters") {
    DomainGraph g;
    g.nodes.push_back(make_node({0.5}, make_layer({0.0}, {1.0}, {1.7}, {0.4})));
    const auto [gamma, beta] = graph_scalebias(g, 0, 0);
    CHECK(gamma[0] == doctest::Approx(1.7));
    CHECK(beta[0] == doctest::Approx(0.4));
  }
  SUBCASE("identical affine parameters are unchanged") {
    DomainGraph g;
    g.sigma_d = 0.1;
    g.nodes.push_back(make_node({0.0}, make_layer({0.0}, {1.0}, {1.3}, {0.2})));
    g.nodes.push_back(make_node({0.3}, make_layer({5.0}, {2.0}, {1.3}, {0.2})));
    const auto [gamma, beta] = graph_scalebias(g, 0, 0);
    CHECK(gamma[0] == doctest::Approx(1.3).epsilon(1e-12));
    CHECK(beta[0] == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("three-node weighted mean with the self edge included") {
    auto g = three_node_graph();
    const auto [gamma, beta] = graph_scalebias(g, 0, 0);
    double total = 0.0, gsum = 0.0, bsum = 0.0;
    for (const auto& node : g.nodes) {
      const double w =
          edge_weight(g.nodes[0].metadata, node.metadata, g.sigma_d);
      total += w;
      gsum += w * node.layers[0].gamma[0];
      bsum += w * node.layers[0].beta[0];
    }
    CHECK(gamma[0] == doctest::Approx(gsum / total).epsilon(1e-12));
    CHECK(beta[0] == doctest::Approx(bsum / total).epsilon(1e-12));
  }
}

TEST_CASE("gbn_forward") {
  RngStream rng(19);
  SUBCASE("single-node graph equals da_normalize") {
    DomainGraph g;
    g.nodes.push_back(make_node(
        {0.5}, make_layer({0.3, -0.2}, {1.5, 0.7}, {1.2, 0.8}, {0.1, -0.1})));
    Matrix x = random_batch(rng, 6, 2);
    auto y = gbn_forward(x, g, 0, 0);

    BNState s = make_bn_state(2);
    s.mean = g.nodes[0].layers[0].mu;
    s.var = g.nodes[0].layers[0].var;
    s.gamma = g.nodes[0].layers[0].gamma;
    s.beta = g.nodes[0].layers[0].beta;
    auto ref = da_normalize(x, s);
    CHECK(max_abs_diff(y, ref) == 0.0);  // bit-equivalent
  }
  SUBCASE("negligible edges give node-local normalization") {
    DomainGraph g;
    g.sigma_d = 0.01;
    g.nodes.push_back(make_node({0.0, 0.0},
                                make_layer({0.0}, {1.0}, {2.0}, {0.5})));
    g.nodes.push_back(make_node({1.0, 1.0},
                                make_layer({9.0}, {9.0}, {9.0}, {9.0})));
    Matrix x = random_batch(rng, 4, 1);
    auto y = gbn_forward(x, g, 0, 0);
    for (std::size_t i = 0; i < 4; ++i) {
      const double want =
          2.0 * (x.at(i, 0) - 0.0) / std::sqrt(1.0 + kBnEps) + 0.5;
      CHECK(y.at(i, 0) == doctest::Approx(want).epsilon(1e-6));
    }
  }
  SUBCASE("three-node brute-force composition") {
    auto g = three_node_graph();
    Matrix x = random_batch(rng, 5, 1);
    auto y = gbn_forward(x, g, 1, 0);
    const auto [gamma, beta] = graph_scalebias(g, 1, 0);
    for (std::size_t i = 0; i < 5; ++i) {
      const double want =
          gamma[0] * (x.at(i, 0) - 2.0) / std::sqrt(2.0 + kBnEps) + beta[0];
      CHECK(y.at(i, 0) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("gbn_forward_train folds batch statistics into the node") {
  RngStream rng(29);
  auto g = three_node_graph();
  Matrix x = random_batch(rng, 32, 1, 4.0, 0.5);

  const double mu0 = g.nodes[0].layers[0].mu[0];
  const double var0 = g.nodes[0].layers[0].var[0];
  auto y = gbn_forward_train(x, g, 0, 0, 0.1);

  double bm = 0.0;
  for (std::size_t i = 0; i < 32; ++i) bm += x.at(i, 0) / 32.0;
  double bv = 0.0;
  for (std::size_t i = 0; i < 32; ++i)
    bv += (x.at(i, 0) - bm) * (x.at(i, 0) - bm) / 32.0;

  CHECK(g.nodes[0].layers[0].mu[0] ==
        doctest::Approx(0.9 * mu0 + 0.1 * bm).epsilon(1e-12));
  CHECK(g.nodes[0].layers[0].var[0] ==
        doctest::Approx(0.9 * var0 + 0.1 * bv).epsilon(1e-12));

  // output was normalized with the batch statistics, not the stored ones
  const auto [gamma, beta] = graph_scalebias(g, 0, 0);
  CHECK(y.at(0, 0) ==
        doctest::Approx(gamma[0] * (x.at(0, 0) - bm) / std::sqrt(bv + kBnEps) +
                        beta[0])
            .epsilon(1e-9));
}

TEST_CASE("training pipeline specializes auxiliary nodes") {
  RngStream rng(4242);
  const std::size_t dim = 3, classes = 2;

  // source: two classes split along feature 0
  const std::size_t n = 120;
  Matrix sx(n, dim);
  std::vector<std::size_t> sy(n);
  for (std::size_t i = 0; i < n; ++i) {
    sy[i] = i % 2;
    for (std::size_t f = 0; f < dim; ++f)
      sx.at(i, f) = (f == 0 ? (sy[i] == 0 ? -2.0 : 2.0) : 0.0) +
                    0.5 * rng.next_normal();
  }

  auto model = make_graph_model(dim, classes, {0.0, 0.0}, 0.1, rng);
  AdaGraphConfig cfg;
  cfg.steps = 150;
  train_source(model, sx, sy, cfg, rng);

  // source training should reach a confident, accurate model
  std::size_t correct = 0;
  double mean_entropy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto y = gbn_forward(sx, model.graph, 0, 0);
    const auto p = softmax(linear_forward(model.head, y.row(i)));
    if (argmax_index(p) == sy[i]) ++correct;
    mean_entropy += entropy(p) / static_cast<double>(n);
  }
  CHECK(static_cast<double>(correct) / n >= 0.95);
  CHECK(mean_entropy < 0.4);

  // auxiliary identical in distribution to the source
  AuxiliaryDomain aux;
  aux.metadata = {0.2, 0.0};
  aux.x = Matrix(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < dim; ++f)
      aux.x.at(i, f) = (f == 0 ? (i % 2 == 0 ? -2.0 : 2.0) : 0.0) +
                       0.5 * rng.next_normal();

  const auto head_before = model.head.W.data;
  cfg.steps = 120;
  train_with_auxiliaries(model, sx, sy, {aux}, cfg, rng);
  CHECK(model.graph.nodes.size() == 2);
  CHECK(model.head.W.data == head_before);  // frozen head

  // regressed parameters near the aux metadata resemble the source node
  auto regressed = regress_params_metadata(model.graph, {0.1, 0.0});
  const auto& src = model.graph.nodes[0].layers[0];
  for (std::size_t f = 0; f < dim; ++f) {
    CHECK(std::fabs(regressed[0].mu[f] - src.mu[f]) < 0.6);
    CHECK(std::fabs(regressed[0].var[f] - src.var[f]) < 0.8);
  }

  CHECK_THROWS_AS(
      train_with_auxiliaries(model, sx, sy,
                             {AuxiliaryDomain{aux.x, {}}}, cfg, rng),
      std::invalid_argument);
}

TEST_CASE("refine moves statistics toward a shifted target") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RngStream rng(seed);
    const std::size_t dim = 2;
    LinearModel head = make_linear(2, dim, rng);

    GBNNode node = make_node({0.5}, make_layer({0.0, 0.0}, {1.0, 1.0},
                                               {1.0, 1.0}, {0.0, 0.0}));
    const double target_mu = 3.0;
    Matrix stream = random_batch(rng, 160, dim, target_mu, 0.5);

    auto before = node;
    auto after = refine(node, head, stream, 16, 1.0, 0.05);

    auto l2 = [&](const GBNNode& nd) {
      double s = 0.0;
      for (double m : nd.layers[0].mu)
        s += (m - target_mu) * (m - target_mu);
      return std::sqrt(s);
    };
    CHECK(l2(after) < l2(before));
  }
}

TEST_CASE("refine edge behavior") {
  RngStream rng(55);
  LinearModel head = make_linear(2, 1, rng);
  GBNNode node = make_node({0.0}, make_layer({0.0}, {1.0}, {1.0}, {0.0}));

  SUBCASE("memory larger than the stream fires no update") {
    Matrix stream = random_batch(rng, 10, 1, 5.0);
    auto after = refine(node, head, stream, 16, 1.0, 0.05);
    CHECK(after.layers[0].mu[0] == 0.0);
    CHECK(after.layers[0].gamma[0] == 1.0);
  }
  SUBCASE("stationary stream keeps parameters stable") {
    Matrix stream = random_batch(rng, 320, 1, 0.0, 1.0);
    auto after = refine(node, head, stream, 16, 1.0, 0.05);
    CHECK(std::fabs(after.layers[0].mu[0]) < 0.4);
    CHECK(std::fabs(after.layers[0].var[0] - 1.0) < 0.5);
  }
  SUBCASE("memory below two rejected") {
    Matrix stream = random_batch(rng, 8, 1);
    CHECK_THROWS_AS(refine(node, head, stream, 1, 1.0, 0.05),
                    std::invalid_argument);
  }
}

TEST_CASE("graph JSON round trip") {
  auto g = three_node_graph();
  const std::string text = graph_to_json(g);
  auto back = graph_from_json(text);

  CHECK(back.sigma_d == g.sigma_d);
  REQUIRE(back.nodes.size() == g.nodes.size());
  for (std::size_t k = 0; k < g.nodes.size(); ++k) {
    CHECK(back.nodes[k].metadata == g.nodes[k].metadata);
    REQUIRE(back.nodes[k].layers.size() == g.nodes[k].layers.size());
    CHECK(back.nodes[k].layers[0].mu == g.nodes[k].layers[0].mu);
    CHECK(back.nodes[k].layers[0].var == g.nodes[k].layers[0].var);
    CHECK(back.nodes[k].layers[0].gamma == g.nodes[k].layers[0].gamma);
    CHECK(back.nodes[k].layers[0].beta == g.nodes[k].layers[0].beta);
  }

  CHECK_THROWS(graph_from_json("{\"nodes\": []}"));
  CHECK_THROWS_AS(graph_from_json("{\"sigma_d\": -1, \"nodes\": []}"),
                  std::invalid_argument);
}
