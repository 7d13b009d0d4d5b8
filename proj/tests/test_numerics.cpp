#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "shiftlab/gradcheck.hpp"
#include "shiftlab/numerics.hpp"
#include "shiftlab/optim.hpp"
#include "shiftlab/rng.hpp"

using namespace shiftlab;

TEST_CASE("softmax basics") {
  auto p = softmax({0.0, 0.0});
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

  // large equal logits must not overflow thanks to max subtraction
  auto q = softmax({1000.0, 1000.0});
  CHECK(q[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax against extended-precision evaluation") {
  const std::vector<double> logits = {1.0, 2.0, 3.0};
  auto p = softmax(logits);
  long double sum = 0.0L;
  std::vector<long double> e(3);
  for (int i = 0; i < 3; ++i) {
    e[i] = expl(static_cast<long double>(logits[i]));
    sum += e[i];
  }
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    CHECK(std::fabs(p[i] - static_cast<double>(e[i] / sum)) < 1e-15);
    CHECK(p[i] > 0.0);
    total += p[i];
  }
  CHECK(std::fabs(total - 1.0) < 1e-12);
}

TEST_CASE("softmax shift invariance") {
  RngStream rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(5), zs(5);
    const double c = rng.next_uniform(-50.0, 50.0);
    for (int i = 0; i < 5; ++i) {
      z[i] = rng.next_uniform(-3.0, 3.0);
      zs[i] = z[i] + c;
    }
    auto a = softmax(z);
    auto b = softmax(zs);
    for (int i = 0; i < 5; ++i) CHECK(std::fabs(a[i] - b[i]) <= 1e-12);
  }
}

TEST_CASE("softmax rejects non-finite input") {
  CHECK_THROWS_AS(softmax({1.0, std::nan("")}), std::invalid_argument);
  CHECK_THROWS_AS(softmax({}), std::invalid_argument);
}

TEST_CASE("entropy basics") {
  CHECK(entropy({1.0, 0.0, 0.0}) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(entropy({0.25, 0.25, 0.25, 0.25}) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // brute evaluation of -sum p log p
  const double expected = -(0.3 * std::log(0.3) + 0.7 * std::log(0.7));
  CHECK(entropy({0.3, 0.7}) == doctest::Approx(expected).epsilon(1e-15));
  CHECK_THROWS_AS(entropy({-0.1, 1.1}), std::invalid_argument);
}

TEST_CASE("entropy is maximized by the uniform distribution") {
  RngStream rng(22);
  for (int n = 2; n <= 6; ++n) {
    const double hu = entropy(std::vector<double>(n, 1.0 / n));
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<double> p(n);
      double s = 0.0;
      for (auto& v : p) {
        v = rng.next_double() + 1e-3;
        s += v;
      }
      for (auto& v : p) v /= s;
      CHECK(entropy(p) <= hu + 1e-12);
    }
  }
}

TEST_CASE("cross_entropy basics") {
  CHECK(cross_entropy({0.0, 1.0}, 1) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cross_entropy({0.25, 0.25, 0.25, 0.25}, 2) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(cross_entropy({0.2, 0.8}, 0) ==
        doctest::Approx(-std::log(0.2)).epsilon(1e-15));
  CHECK_THROWS_AS(cross_entropy({0.5, 0.5}, 2), std::invalid_argument);
  // floor keeps a zero-probability label finite
  CHECK(cross_entropy({0.0, 1.0}, 0) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("sgd_step basics") {
  std::vector<double> p = {1.0, 2.0};
  OptimState st;
  st.learning_rate = 1.0;
  sgd_step(p, {0.5, -0.5}, st);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(2.5));

  std::vector<double> q = {3.0, 4.0};
  OptimState st2;
  sgd_step(q, {0.0, 0.0}, st2);
  CHECK(q[0] == 3.0);
  CHECK(q[1] == 4.0);

  std::vector<double> r = {1.0};
  OptimState st3;
  st3.learning_rate = 0.0;
  sgd_step(r, {123.0}, st3);
  CHECK(r[0] == 1.0);  // lr = 0 is the identity

  CHECK_THROWS_AS(sgd_step(r, {1.0, 2.0}, st3), std::invalid_argument);
}

TEST_CASE("sgd_step two-step momentum recurrence") {
  // hand-unrolled oracle of v <- m v + g + wd p; p <- p - lr v
  const double lr = 0.1, mom = 0.9, wd = 0.01;
  const double g1 = 0.3, g2 = -0.2;
  double p_ref = 2.0, v_ref = 0.0;
  v_ref = mom * v_ref + g1 + wd * p_ref;
  p_ref -= lr * v_ref;
  v_ref = mom * v_ref + g2 + wd * p_ref;
  p_ref -= lr * v_ref;

  std::vector<double> p = {2.0};
  OptimState st;
  st.learning_rate = lr;
  st.momentum = mom;
  st.weight_decay = wd;
  sgd_step(p, {g1}, st);
  sgd_step(p, {g2}, st);
  CHECK(p[0] == doctest::Approx(p_ref).epsilon(1e-15));
}

TEST_CASE("finite_diff_grad on simple functions") {
  auto sumsq = [](const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
  };
  auto g = finite_diff_grad(sumsq, {1.0, 2.0}, 1e-5);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-6));

  auto constant = [](const std::vector<double>&) { return 7.0; };
  auto gz = finite_diff_grad(constant, {1.0, -1.0, 0.5}, 1e-5);
  for (double v : gz) CHECK(v == 0.0);
}

TEST_CASE("grad_rel_error scales by the gradient magnitude") {
  CHECK(grad_rel_error({1.0, 2.0}, {1.0, 2.0}) == 0.0);
  CHECK(grad_rel_error({10.0, 0.0}, {10.0, 1e-6}) ==
        doctest::Approx(1e-7).epsilon(1e-9));
}

TEST_CASE("RngStream reproducibility") {
  RngStream a(42), b(42);
  for (int i = 0; i < 10000; ++i) CHECK(a.next_u64() == b.next_u64());

  // distinct seeds and child streams diverge
  RngStream c(43);
  CHECK(RngStream(42).next_u64() != c.next_u64());
  RngStream parent(7);
  CHECK(parent.child(1).next_u64() != parent.child(2).next_u64());
}

TEST_CASE("RngStream derived draws stay in range") {
  RngStream rng(5);
  for (int i = 0; i < 2000; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const auto k = rng.next_below(7);
    CHECK(k < 7);
    const double beta = rng.next_beta(2.0);
    CHECK(beta >= 0.0);
    CHECK(beta <= 1.0);
  }
  CHECK_THROWS_AS(rng.next_below(0), std::invalid_argument);
  CHECK_THROWS_AS(rng.next_beta(0.0), std::invalid_argument);
}

TEST_CASE("RngStream bernoulli frequency") {
  RngStream rng(9);
  int hits = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    if (rng.next_bernoulli(0.25)) ++hits;
  const double frac = static_cast<double>(hits) / n;
  CHECK(frac > 0.23);
  CHECK(frac < 0.27);
}

TEST_CASE("normal draws have sane moments") {
  RngStream rng(123);
  const int n = 20000;
  double mean = 0.0, var = 0.0;
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = rng.next_normal();
    mean += xs[i];
  }
  mean /= n;
  for (int i = 0; i < n; ++i) var += (xs[i] - mean) * (xs[i] - mean);
  var /= n;
  CHECK(std::fabs(mean) < 0.03);
  CHECK(std::fabs(var - 1.0) < 0.05);
}
