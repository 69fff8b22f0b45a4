#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "flforge/matrix.hpp"
#include "flforge/rng.hpp"
#include "flforge/tape.hpp"

using namespace flforge;

TEST_CASE("gradient of p^2 at p=3 is 6") {
  Tape t;
  Value p = t.leaf(3.0);
  Value y = p * p;
  const Value xs[1] = {p};
  auto g = t.gradient(y, xs);
  CHECK(g[0].val() == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("gradient of a constant objective is zero") {
  Tape t;
  Value p = t.leaf(2.0);
  Value y = t.constant(5.0);
  const Value xs[1] = {p};
  auto g = t.gradient(y, xs);
  CHECK(g[0].val() == 0.0);
}

TEST_CASE("unreachable parameters get gradient zero") {
  Tape t;
  Value p = t.leaf(1.0);
  Value q = t.leaf(2.0);
  Value y = p * p;
  const Value xs[2] = {p, q};
  auto g = t.gradient(y, xs);
  CHECK(g[0].val() == doctest::Approx(2.0));
  CHECK(g[1].val() == 0.0);
}

namespace {

// Two-hidden-layer SiLU net on the tape, random weights.
Value small_silu_net(Tape& t, std::vector<Value>& leaves, Rng& rng, int in = 3, int hidden = 8) {
  std::vector<Value> cur;
  for (int i = 0; i < in; ++i) {
    leaves.push_back(t.leaf(uniform(rng, -1.0, 1.0)));
    cur.push_back(leaves.back());
  }
  int fan = in;
  for (int layer = 0; layer < 3; ++layer) {
    const int width = layer == 2 ? 1 : hidden;
    std::vector<Value> next;
    for (int j = 0; j < width; ++j) {
      leaves.push_back(t.leaf(uniform(rng, -0.7, 0.7)));  // bias
      Value acc = leaves.back();
      for (int k = 0; k < fan; ++k) {
        leaves.push_back(t.leaf(uniform(rng, -0.7, 0.7)));
        acc = muladd(leaves.back(), cur[static_cast<std::size_t>(k)], acc);
      }
      next.push_back(layer == 2 ? acc : silu(acc));
    }
    cur = std::move(next);
    fan = width;
  }
  return cur[0];
}

}  // namespace

TEST_CASE("random SiLU net gradient matches central differences") {
  Rng rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    Tape t;
    std::vector<Value> leaves;
    Value y = small_silu_net(t, leaves, rng);
    const double err = check_gradient(t, y, leaves, 1e-5);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("check_gradient is tiny for a linear objective") {
  Tape t;
  Value a = t.leaf(0.3);
  Value b = t.leaf(-1.2);
  Value y = a * 2.0 + b * 7.0 - 1.0;
  const Value xs[2] = {a, b};
  CHECK(check_gradient(t, y, xs, 1e-3) <= 1e-10);
  CHECK(check_gradient(t, y, xs, 1e-7) <= 1e-8);
}

TEST_CASE("flat region of max has exactly zero gradient on both routes") {
  Tape t;
  Value v = t.leaf(0.25);
  const double eps = 1.0;
  // eps first: the tie and the flat region route to the constant.
  Value y = max(t.constant(eps), abs(v));
  const Value xs[1] = {v};
  auto g = t.gradient(y, xs);
  CHECK(g[0].val() == 0.0);
  CHECK(check_gradient(t, y, xs, 1e-6) == 0.0);
}

TEST_CASE("hard min/max ties follow the first argument") {
  Tape t;
  Value a = t.leaf(2.0);
  Value b = t.leaf(2.0);
  const Value xs[2] = {a, b};
  auto gmax = t.gradient(max(a, b), xs);
  CHECK(gmax[0].val() == 1.0);
  CHECK(gmax[1].val() == 0.0);
  Tape t2;
  Value c = t2.leaf(2.0);
  Value d = t2.leaf(2.0);
  const Value xs2[2] = {c, d};
  auto gmin = t2.gradient(min(c, d), xs2);
  CHECK(gmin[0].val() == 1.0);
  CHECK(gmin[1].val() == 0.0);
}

TEST_CASE("abs derivative at zero follows the sgn(0)=+1 convention") {
  Tape t;
  Value a = t.leaf(0.0);
  const Value xs[1] = {a};
  auto g = t.gradient(abs(a), xs);
  CHECK(g[0].val() == 1.0);
}

TEST_CASE("nested gradients: second derivative of x^3") {
  Tape t;
  Value x = t.leaf(2.0);
  Value y = x * x * x;
  const Value xs[1] = {x};
  auto g1 = t.gradient(y, xs);                  // 3 x^2 = 12
  auto g2 = t.gradient(g1[0], xs);              // 6 x = 12
  CHECK(g1[0].val() == doctest::Approx(12.0));
  CHECK(g2[0].val() == doctest::Approx(12.0));
}

TEST_CASE("non-finite intermediate is reported with its node index") {
  Tape t;
  Value a = t.leaf(1.0);
  Value y = a / t.constant(0.0);
  const Value xs[1] = {a};
  CHECK_THROWS_AS((void)t.gradient(y, xs), NonFiniteError);
}

TEST_CASE("replay is bit-reproducible and honors new leaf values") {
  Rng rng(21);
  Tape t;
  std::vector<Value> leaves;
  Value y = small_silu_net(t, leaves, rng);
  const double recorded = y.val();

  std::vector<double> leaf_vals = t.leaf_snapshot();
  std::vector<double> ws = t.make_workspace();
  t.replay(leaf_vals, ws);
  CHECK(ws[static_cast<std::size_t>(y.idx)] == recorded);

  leaf_vals[0] += 0.125;
  t.replay(leaf_vals, ws);
  const double moved = ws[static_cast<std::size_t>(y.idx)];
  CHECK(moved != recorded);
  leaf_vals[0] -= 0.125;
  t.replay(leaf_vals, ws);
  CHECK(ws[static_cast<std::size_t>(y.idx)] == recorded);
}

TEST_CASE("lane replay matches scalar replay bitwise") {
  Rng rng(5);
  Tape t;
  std::vector<Value> leaves;
  Value y = small_silu_net(t, leaves, rng);
  const int L = Tape::kLanes;

  std::vector<double> base = t.leaf_snapshot();
  std::vector<double> lane_leaves(base.size() * static_cast<std::size_t>(L));
  std::vector<std::vector<double>> scalar_results(static_cast<std::size_t>(L));
  std::vector<double> ws1 = t.make_workspace(1);
  for (int l = 0; l < L; ++l) {
    std::vector<double> perturbed = base;
    for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += 0.01 * l + 0.001 * static_cast<double>(i % 7);
    for (std::size_t i = 0; i < perturbed.size(); ++i) lane_leaves[i * static_cast<std::size_t>(L) + static_cast<std::size_t>(l)] = perturbed[i];
    t.replay(perturbed, ws1);
    scalar_results[static_cast<std::size_t>(l)] = ws1;
  }
  std::vector<double> wsL = t.make_workspace(L);
  t.replay_lanes8(lane_leaves, wsL);
  for (int l = 0; l < L; ++l)
    for (std::int32_t i = 0; i < t.node_count(); ++i)
      CHECK(wsL[static_cast<std::size_t>(i) * L + static_cast<std::size_t>(l)] ==
            scalar_results[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)]);
}

// ---- determinant and solve ---------------------------------------------------

TEST_CASE("det examples") {
  Matd I3 = Matd::identity(3);
  CHECK(det(I3) == 1.0);

  Matd m(2, 2, {1, 2, 3, 4});
  CHECK(det(m) == doctest::Approx(-2.0));

  Matd dup(4, 4);
  Rng rng(3);
  for (int j = 0; j < 4; ++j) {
    dup.at(0, j) = uniform(rng, -1, 1);
    dup.at(1, j) = uniform(rng, -1, 1);
    dup.at(2, j) = dup.at(0, j);  // duplicated row
    dup.at(3, j) = uniform(rng, -1, 1);
  }
  CHECK(std::fabs(det(dup)) <= 1e-15);

  CHECK_THROWS_AS((void)det(Matd(2, 3)), DimensionError);
}

TEST_CASE("det is differentiable on a tape") {
  Tape t;
  Mat<Value> m(2, 2);
  Value a = t.leaf(1.0), b = t.leaf(2.0), c = t.leaf(3.0), d = t.leaf(4.0);
  m.at(0, 0) = a;
  m.at(0, 1) = b;
  m.at(1, 0) = c;
  m.at(1, 1) = d;
  Value dt = det(m);
  CHECK(dt.val() == doctest::Approx(-2.0));
  const Value xs[4] = {a, b, c, d};
  auto g = t.gradient(dt, xs);
  CHECK(g[0].val() == doctest::Approx(4.0));   // d det / da = d
  CHECK(g[1].val() == doctest::Approx(-3.0));  // -c
  CHECK(g[2].val() == doctest::Approx(-2.0));  // -b
  CHECK(g[3].val() == doctest::Approx(1.0));   // a
}

TEST_CASE("solve_linear examples and residual") {
  Matd I2 = Matd::identity(2);
  auto x = solve_linear(I2, std::vector<double>{1.0, 2.0});
  CHECK(x[0] == 1.0);
  CHECK(x[1] == 2.0);

  Matd d2(2, 2, {2, 0, 0, 4});
  auto y = solve_linear(d2, std::vector<double>{2.0, 4.0});
  CHECK(y[0] == doctest::Approx(1.0));
  CHECK(y[1] == doctest::Approx(1.0));

  Rng rng(11);
  Matd A(4, 4);
  for (auto& v : A.m) v = uniform(rng, -1, 1);
  for (int i = 0; i < 4; ++i) A.at(i, i) += 4.0;  // well conditioned
  std::vector<double> rhs{1.0, -2.0, 0.5, 3.0};
  auto sol = solve_linear(A, rhs);
  double rn = 0.0, bn = 0.0;
  for (int i = 0; i < 4; ++i) {
    double acc = 0.0;
    for (int j = 0; j < 4; ++j) acc += A.at(i, j) * sol[static_cast<std::size_t>(j)];
    rn += (acc - rhs[static_cast<std::size_t>(i)]) * (acc - rhs[static_cast<std::size_t>(i)]);
    bn += rhs[static_cast<std::size_t>(i)] * rhs[static_cast<std::size_t>(i)];
  }
  CHECK(std::sqrt(rn) <= 1e-12 * std::sqrt(bn));

  Matd sing(2, 2, {1, 2, 2, 4});
  CHECK_THROWS_AS((void)solve_linear(sing, std::vector<double>{1.0, 1.0}), SingularMatrixError);
}

TEST_CASE("inverse reconstruction deviates from identity by <= 1e-10") {
  Rng rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 2 + static_cast<int>(rng() % 3);
    Matd A(n, n);
    for (auto& v : A.m) v = uniform(rng, -1, 1);
    for (int i = 0; i < n; ++i) A.at(i, i) += 3.0;  // keeps condition number modest
    const Matd Ainv = invert(A);
    const Matd P = matmul(A, Ainv);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) CHECK(std::fabs(P.at(i, j) - (i == j ? 1.0 : 0.0)) <= 1e-10);
  }
}

TEST_CASE("solve_cramer matches solve_linear and differentiates") {
  Rng rng(17);
  Matd A(3, 3);
  for (auto& v : A.m) v = uniform(rng, -1, 1);
  for (int i = 0; i < 3; ++i) A.at(i, i) += 2.5;
  std::vector<double> rhs{0.2, -1.0, 0.7};
  auto a = solve_linear(A, rhs);
  auto b = solve_cramer<double>(A, rhs);
  for (int i = 0; i < 3; ++i) CHECK(a[static_cast<std::size_t>(i)] == doctest::Approx(b[static_cast<std::size_t>(i)]).epsilon(1e-12));
}
