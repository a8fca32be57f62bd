#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "../src/core/rng.hpp"
#include "../src/core/tensor.hpp"
#include "grad_check.hpp"

using tict::Shape;
using T = tict::TensorT<double>;
using Tape = tict::TapeT<double>;

namespace {

T randn(Shape shape, tict::Rng& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<size_t>(tict::shape_numel(shape)));
  for (auto& x : v) x = rng.normal() * scale;
  return T::from_vector(std::move(shape), std::move(v));
}

// Random values bounded away from zero, for kink-free relu checks.
T rand_nonzero(Shape shape, tict::Rng& rng) {
  std::vector<double> v(static_cast<size_t>(tict::shape_numel(shape)));
  for (auto& x : v) x = (0.2 + 0.8 * rng.uniform()) * (rng.coin() ? 1.0 : -1.0);
  return T::from_vector(std::move(shape), std::move(v));
}

// Weighted sum against a fixed random tensor so the scalar head actually
// depends on every output element (a plain sum is blind to e.g. softmax).
T wsum(const T& t, const T& w) { return tict::sum_all(tict::mul(t, w)); }

template <class F>
std::optional<tict::ErrCode> code_of(F&& f) {
  try {
    std::forward<F>(f)();
  } catch (const tict::TictError& e) {
    return e.code();
  }
  return std::nullopt;
}

constexpr double kTolProp = 1e-4;  // primitive-vs-finite-difference budget

}  // namespace

// ---------------------------------------------------------------------------
// Forward values
// ---------------------------------------------------------------------------

TEST_CASE("matmul identity and hand arithmetic") {
  auto I = T::from_vector({2, 2}, {1, 0, 0, 1});
  auto B = T::from_vector({2, 2}, {3, 4, 5, 6});
  auto C = tict::matmul(I, B);
  for (int i = 0; i < 4; ++i) CHECK(C.data()[i] == doctest::Approx(B.data()[i]));

  auto a = T::from_vector({1, 2}, {1, 2});
  auto b = T::from_vector({2, 1}, {3, 4});
  CHECK(tict::matmul(a, b).item() == doctest::Approx(11.0));

  auto g = T::from_vector({2, 2}, {1, 2, 3, 4});
  auto h = T::from_vector({2, 2}, {5, 6, 7, 8});
  auto gh = tict::matmul(g, h);
  double expect[] = {19, 22, 43, 50};
  for (int i = 0; i < 4; ++i) CHECK(gh.data()[i] == doctest::Approx(expect[i]));
}

TEST_CASE("matmul batches match per-slice products") {
  tict::Rng rng(11);
  auto a = randn({3, 2, 4}, rng);
  auto b = randn({4, 5}, rng);
  auto c = tict::matmul(a, b);
  REQUIRE(c.shape() == Shape{3, 2, 5});
  for (int t = 0; t < 3; ++t) {
    auto at = tict::reshape(tict::slice_axis(a, 0, t, 1), {2, 4});
    auto ct = tict::matmul(at, b);
    for (int i = 0; i < 10; ++i) CHECK(c.data()[t * 10 + i] == doctest::Approx(ct.data()[i]));
  }

  auto b3 = randn({3, 4, 5}, rng);
  auto c3 = tict::matmul(a, b3);
  for (int t = 0; t < 3; ++t) {
    auto at = tict::reshape(tict::slice_axis(a, 0, t, 1), {2, 4});
    auto bt = tict::reshape(tict::slice_axis(b3, 0, t, 1), {4, 5});
    auto ct = tict::matmul(at, bt);
    for (int i = 0; i < 10; ++i) CHECK(c3.data()[t * 10 + i] == doctest::Approx(ct.data()[i]));
  }
}

TEST_CASE("softmax symmetry, stability, analytic case") {
  auto u = tict::softmax(T::from_vector({3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i) CHECK(u.data()[i] == doctest::Approx(1.0 / 3));

  auto big = tict::softmax(T::from_vector({2}, {1000, 1000}));
  CHECK(big.data()[0] == doctest::Approx(0.5));
  CHECK(big.data()[1] == doctest::Approx(0.5));
  CHECK(std::isfinite(big.data()[0]));

  auto odds = tict::softmax(T::from_vector({2}, {std::log(1.0), std::log(3.0)}));
  CHECK(odds.data()[0] == doctest::Approx(0.25));
  CHECK(odds.data()[1] == doctest::Approx(0.75));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  tict::Rng rng(5);
  auto x = randn({4, 7}, rng, 3.0);
  auto y = tict::softmax(x, -1);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int j = 0; j < 7; ++j) s += y.data()[r * 7 + j];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }

  auto shifted = x;  // aliasing is fine, we build a fresh shifted copy below
  std::vector<double> sv(x.values());
  for (auto& v : sv) v += 123.456;
  auto y2 = tict::softmax(T::from_vector({4, 7}, std::move(sv)), -1);
  for (int i = 0; i < 28; ++i) CHECK(std::abs(y.data()[i] - y2.data()[i]) < 1e-6);

  auto ax0 = tict::softmax(x, 0);
  for (int j = 0; j < 7; ++j) {
    double s = 0;
    for (int r = 0; r < 4; ++r) s += ax0.data()[r * 7 + j];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("relu, add broadcast, mul, concat, slice values") {
  auto r = tict::relu(T::from_vector({2}, {-1, 2}));
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 2.0);

  auto a = T::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  auto bias = T::from_vector({3}, {10, 20, 30});
  auto s = tict::add(a, bias);
  double want[] = {11, 22, 33, 14, 25, 36};
  for (int i = 0; i < 6; ++i) CHECK(s.data()[i] == doctest::Approx(want[i]));

  auto m = tict::mul(T::from_vector({2}, {2, 3}), T::from_vector({2}, {4, 5}));
  CHECK(m.data()[0] == 8.0);
  CHECK(m.data()[1] == 15.0);

  auto c = tict::concat(T::from_vector({2}, {1, 2}), T::from_vector({1}, {3}), 0);
  REQUIRE(c.shape() == Shape{3});
  CHECK(c.data()[0] == 1.0);
  CHECK(c.data()[1] == 2.0);
  CHECK(c.data()[2] == 3.0);

  auto back = tict::slice_axis(c, 0, 0, 2);
  CHECK(back.data()[0] == 1.0);
  CHECK(back.data()[1] == 2.0);

  auto mid = tict::slice_axis(a, 1, 1, 2);
  REQUIRE(mid.shape() == Shape{2, 2});
  CHECK(mid.data()[0] == 2.0);
  CHECK(mid.data()[3] == 6.0);
}

TEST_CASE("permute transposes and round-trips") {
  auto a = T::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  auto at = tict::permute(a, {1, 0});
  REQUIRE(at.shape() == Shape{3, 2});
  CHECK(at.data()[0] == 1.0);
  CHECK(at.data()[1] == 4.0);
  CHECK(at.data()[2] == 2.0);

  tict::Rng rng(3);
  auto x = randn({2, 3, 4, 5}, rng);
  auto y = tict::permute(tict::permute(x, {0, 2, 1, 3}), {0, 2, 1, 3});
  for (int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("layernorm constant input and row statistics") {
  auto g1 = T::filled({3}, 1.0);
  auto b0 = T::zeros({3});
  auto y = tict::layernorm(T::from_vector({3}, {1, 1, 1}), g1, b0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(y.data()[i]) < 1e-3);

  tict::Rng rng(9);
  auto g = T::filled({8}, 1.0);
  auto b = T::zeros({8});
  auto x = randn({4, 8}, rng, 2.0);
  auto z = tict::layernorm(x, g, b);
  for (int r = 0; r < 4; ++r) {
    double mean = 0, var = 0;
    for (int j = 0; j < 8; ++j) mean += z.data()[r * 8 + j];
    mean /= 8;
    for (int j = 0; j < 8; ++j) {
      double c = z.data()[r * 8 + j] - mean;
      var += c * c;
    }
    var /= 8;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }

  auto gain = T::from_vector({2}, {2, 2});
  auto bias = T::from_vector({2}, {0.5, 0.5});
  auto w = tict::layernorm(T::from_vector({2}, {1, 3}), gain, bias);
  CHECK(w.data()[0] == doctest::Approx(-1.5).epsilon(1e-4));
  CHECK(w.data()[1] == doctest::Approx(2.5).epsilon(1e-4));
}

TEST_CASE("conv1d identity, box filter, even width") {
  auto x = T::from_vector({1, 1, 3}, {1, 2, 3});
  auto k1 = T::from_vector({1, 1, 1}, {1});
  auto y = tict::conv1d_same(x, k1);
  for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));

  auto pulse = T::from_vector({1, 1, 3}, {0, 1, 0});
  auto box = T::from_vector({1, 1, 3}, {1, 1, 1});
  auto yb = tict::conv1d_same(pulse, box);
  for (int i = 0; i < 3; ++i) CHECK(yb.data()[i] == doctest::Approx(1.0));

  auto ramp = T::from_vector({1, 1, 4}, {1, 2, 3, 4});
  auto yr = tict::conv1d_same(ramp, box);
  double want[] = {3, 6, 9, 7};
  for (int i = 0; i < 4; ++i) CHECK(yr.data()[i] == doctest::Approx(want[i]));

  // Even width pads only on the right: out[t] = k0*x[t] + k1*x[t+1].
  auto k2 = T::from_vector({1, 1, 2}, {10, 1});
  auto ye = tict::conv1d_same(T::from_vector({1, 1, 3}, {1, 2, 3}), k2);
  CHECK(ye.data()[0] == doctest::Approx(12.0));
  CHECK(ye.data()[1] == doctest::Approx(23.0));
  CHECK(ye.data()[2] == doctest::Approx(30.0));
}

TEST_CASE("cross entropy values and analytic gradient") {
  auto uniform = tict::cross_entropy(T::from_vector({2}, {0, 0}), 0);
  CHECK(uniform.item() == doctest::Approx(std::log(2.0)));

  auto confident = tict::cross_entropy(T::from_vector({2}, {20, -20}), 0);
  CHECK(confident.item() < 1e-6);
  CHECK(confident.item() >= 0.0);

  // gradient must equal softmax(logits) - onehot(target) exactly
  auto logits = T::from_vector({4}, {0.3, -1.2, 2.0, 0.1});
  logits.set_requires_grad(true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    auto loss = tict::cross_entropy(logits, 2);
    tape.backward(loss);
  }
  auto sm = tict::softmax(logits);
  for (int i = 0; i < 4; ++i) {
    double want = sm.data()[i] - (i == 2 ? 1.0 : 0.0);
    CHECK(std::abs(logits.grad()[static_cast<size_t>(i)] - want) < 1e-6);
  }
}

TEST_CASE("row cross entropy averages per-row losses") {
  auto logits = T::from_vector({2, 3}, {1, 2, 3, 0, 0, 0});
  auto rows = tict::cross_entropy_rows(logits, {2, 1});
  auto r0 = tict::cross_entropy(T::from_vector({3}, {1, 2, 3}), 2);
  auto r1 = tict::cross_entropy(T::from_vector({3}, {0, 0, 0}), 1);
  CHECK(rows.item() == doctest::Approx(0.5 * (r0.item() + r1.item())));
}

TEST_CASE("nll on probabilities") {
  auto probs = T::from_vector({1, 2}, {0.25, 0.75});
  auto loss = tict::nll_probs(probs, {1});
  CHECK(loss.item() == doctest::Approx(-std::log(0.75 + 1e-9)));
}

TEST_CASE("binary cross entropy from raw scores is stable") {
  auto even = tict::bce_logits(T::from_vector({1}, {0.0}), {1.0});
  CHECK(even.item() == doctest::Approx(std::log(2.0)));

  auto sure = tict::bce_logits(T::from_vector({2}, {100.0, -100.0}), {1.0, 0.0});
  CHECK(sure.item() < 1e-6);
  CHECK(std::isfinite(sure.item()));

  auto wrong = tict::bce_logits(T::from_vector({1}, {-100.0}), {1.0});
  CHECK(wrong.item() == doctest::Approx(100.0));
}

// ---------------------------------------------------------------------------
// Backward semantics
// ---------------------------------------------------------------------------

TEST_CASE("backward of sum gives ones; of sum of squares gives 2x") {
  auto x = T::from_vector({2, 2}, {1, -2, 3, 0.5});
  x.set_requires_grad(true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    auto loss = tict::sum_all(x);
    tape.backward(loss);
  }
  REQUIRE(x.has_grad());
  REQUIRE(x.grad().size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(1.0));

  auto v = T::from_vector({2}, {1, 2});
  v.set_requires_grad(true);
  Tape tape2;
  {
    Tape::Scope scope(tape2);
    auto loss = tict::sum_all(tict::mul(v, v));
    tape2.backward(loss);
  }
  CHECK(v.grad()[0] == doctest::Approx(2.0));
  CHECK(v.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("shared subexpression accumulates each path exactly once") {
  // loss = sum(y + y) with y = x*x: dloss/dx = 4x
  auto x = T::from_vector({2}, {1, 2});
  x.set_requires_grad(true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    auto y = tict::mul(x, x);
    auto loss = tict::sum_all(tict::add(y, y));
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));

  // two distinct paths: loss = sum(x*x + x): dloss/dx = 2x + 1
  auto w = T::from_vector({2}, {3, -1});
  w.set_requires_grad(true);
  Tape tape2;
  {
    Tape::Scope scope(tape2);
    auto loss = tict::sum_all(tict::add(tict::mul(w, w), w));
    tape2.backward(loss);
  }
  CHECK(w.grad()[0] == doctest::Approx(7.0));
  CHECK(w.grad()[1] == doctest::Approx(-1.0));
}

TEST_CASE("repeated backward accumulates additively") {
  auto x = T::from_vector({2}, {1, 2});
  x.set_requires_grad(true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    auto y = tict::mul(x, x);
    auto loss = tict::sum_all(y);
    tape.backward(loss);
    tape.backward(loss);
    CHECK(y.has_grad());  // intermediate keeps a populated grad
    CHECK(y.grad()[0] == doctest::Approx(2.0));
  }
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
}

TEST_CASE("entries unreachable from the loss are skipped") {
  auto x = T::from_vector({3}, {1, 2, 3});
  x.set_requires_grad(true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    auto side = tict::relu(x);  // recorded but never used by the loss
    (void)side;
    auto loss = tict::sum_all(x);
    tape.backward(loss);
    CHECK_FALSE(side.has_grad());
  }
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(1.0));
}

TEST_CASE("ops outside a tape scope record nothing") {
  auto x = T::from_vector({2}, {1, 2});
  x.set_requires_grad(true);
  Tape tape;
  auto y = tict::mul(x, x);  // no active scope
  CHECK(tape.size() == 0);
  {
    Tape::Scope scope(tape);
    auto z = tict::mul(x, x);
    (void)z;
  }
  CHECK(tape.size() == 1);
  (void)y;
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

TEST_CASE("shape and contract errors carry codes and name the shapes") {
  auto a = T::zeros({2, 3});
  auto b = T::zeros({2, 3});
  CHECK(code_of([&] { tict::matmul(a, b); }) == tict::ErrCode::kDimension);
  try {
    tict::matmul(a, b);
  } catch (const tict::TictError& e) {
    std::string msg = e.what();
    CHECK(msg.find("(2,3)") != std::string::npos);
  }

  CHECK(code_of([&] { tict::mul(a, T::zeros({3, 2})); }) == tict::ErrCode::kDimension);
  CHECK(code_of([&] { tict::add(a, T::zeros({2})); }) == tict::ErrCode::kDimension);
  CHECK(code_of([&] { tict::concat(a, T::zeros({2, 4}), 0); }) == tict::ErrCode::kDimension);
  CHECK(code_of([&] { tict::slice_axis(a, 1, 2, 2); }) == tict::ErrCode::kIndex);
  CHECK(code_of([&] { tict::reshape(a, {7}); }) == tict::ErrCode::kDimension);
  CHECK(code_of([&] { tict::cross_entropy(T::zeros({3}), 3); }) == tict::ErrCode::kIndex);
  CHECK(code_of([&] { T::from_vector({2, 2}, {1, 2, 3}); }) == tict::ErrCode::kDimension);
  CHECK(code_of([&] { T::zeros({2, 0}); }) == tict::ErrCode::kDimension);
  CHECK(code_of([&] {
          tict::conv1d_same(T::zeros({1, 2, 4}), T::zeros({1, 3, 3}));
        }) == tict::ErrCode::kDimension);

  Tape tape;
  CHECK(code_of([&] { tape.backward(T::zeros({2})); }) == tict::ErrCode::kContract);
}

// ---------------------------------------------------------------------------
// Gradients vs central finite differences (the oracle)
// ---------------------------------------------------------------------------

TEST_CASE("matmul gradients match finite differences") {
  tict::Rng rng(101);
  std::vector<std::pair<Shape, Shape>> cases = {
      {{2, 3}, {3, 4}}, {{5, 2}, {2, 2}}, {{3, 2, 4}, {4, 3}}, {{2, 2, 3}, {2, 3, 2}}};
  for (auto& [sa, sb] : cases) {
    auto A = randn(sa, rng);
    auto B = randn(sb, rng);
    auto res = gradcheck::compare({&A, &B}, [&] { return tict::sum_all(tict::matmul(A, B)); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
}

TEST_CASE("softmax gradients match finite differences") {
  tict::Rng rng(102);
  struct Case {
    Shape s;
    int axis;
  };
  std::vector<Case> cases = {{{5}, 0}, {{3, 6}, -1}, {{2, 4, 3}, 1}};
  for (auto& c : cases) {
    auto x = randn(c.s, rng);
    auto w = randn(c.s, rng);
    auto res = gradcheck::compare({&x}, [&] { return wsum(tict::softmax(x, c.axis), w); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
}

TEST_CASE("relu gradients match finite differences") {
  tict::Rng rng(103);
  for (Shape s : {Shape{7}, Shape{3, 4}, Shape{2, 3, 2}}) {
    auto x = rand_nonzero(s, rng);
    auto w = randn(s, rng);
    auto res = gradcheck::compare({&x}, [&] { return wsum(tict::relu(x), w); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
}

TEST_CASE("add and mul gradients match finite differences") {
  tict::Rng rng(104);
  std::vector<std::pair<Shape, Shape>> adds = {{{2, 3}, {2, 3}}, {{2, 3}, {3}}, {{2, 3, 4}, {3, 4}}};
  for (auto& [sa, sb] : adds) {
    auto a = randn(sa, rng);
    auto b = randn(sb, rng);
    auto w = randn(sa, rng);
    auto res = gradcheck::compare({&a, &b}, [&] { return wsum(tict::add(a, b), w); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
  for (Shape s : {Shape{5}, Shape{2, 4}, Shape{2, 2, 3}}) {
    auto a = randn(s, rng);
    auto b = randn(s, rng);
    auto w = randn(s, rng);
    auto res = gradcheck::compare({&a, &b}, [&] { return wsum(tict::mul(a, b), w); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
}

TEST_CASE("scale, sums and means match finite differences") {
  tict::Rng rng(105);
  for (Shape s : {Shape{6}, Shape{2, 5}, Shape{3, 2, 2}}) {
    auto x = randn(s, rng);
    auto res = gradcheck::compare({&x}, [&] { return tict::scale(tict::sum_all(x), 0.7); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());

    auto x2 = randn(s, rng);
    auto res2 = gradcheck::compare({&x2}, [&] { return tict::mean_all(x2); });
    CHECK_MESSAGE(res2.max_rel_err < kTolProp, res2.describe());
  }
  struct Case {
    Shape s;
    int axis;
  };
  for (auto& c : std::vector<Case>{{{5}, 0}, {{3, 4}, 0}, {{2, 3, 4}, 2}}) {
    auto x = randn(c.s, rng);
    auto res = gradcheck::compare({&x}, [&] {
      auto m = tict::mean_axis(x, c.axis);
      auto w = T::filled(m.shape(), 0.0);
      tict::Rng wr(77);
      for (auto& v : w.values()) v = wr.normal();
      return wsum(m, w);
    });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
}

TEST_CASE("concat and slice gradients match finite differences") {
  tict::Rng rng(106);
  struct Case {
    Shape sa, sb;
    int axis;
  };
  for (auto& c : std::vector<Case>{{{3}, {2}, 0}, {{2, 3}, {2, 2}, 1}, {{2, 2, 3}, {1, 2, 3}, 0}}) {
    auto a = randn(c.sa, rng);
    auto b = randn(c.sb, rng);
    Shape so = c.sa;
    so[static_cast<size_t>(c.axis < 0 ? c.axis + static_cast<int>(c.sa.size()) : c.axis)] +=
        c.sb[static_cast<size_t>(c.axis < 0 ? c.axis + static_cast<int>(c.sb.size()) : c.axis)];
    auto w = randn(so, rng);
    auto res = gradcheck::compare({&a, &b}, [&] { return wsum(tict::concat(a, b, c.axis), w); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
  struct SCase {
    Shape s;
    int axis, start, count;
  };
  for (auto& c : std::vector<SCase>{{{6}, 0, 1, 3}, {{3, 5}, 1, 2, 2}, {{2, 3, 4}, 2, 0, 3}}) {
    auto x = randn(c.s, rng);
    Shape so = c.s;
    so[static_cast<size_t>(c.axis)] = c.count;
    auto w = randn(so, rng);
    auto res =
        gradcheck::compare({&x}, [&] { return wsum(tict::slice_axis(x, c.axis, c.start, c.count), w); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
}

TEST_CASE("reshape and permute gradients match finite differences") {
  tict::Rng rng(107);
  struct RCase {
    Shape from, to;
  };
  for (auto& c : std::vector<RCase>{{{6}, {2, 3}}, {{2, 3}, {6}}, {{2, 3, 2}, {3, 4}}}) {
    auto x = randn(c.from, rng);
    auto w = randn(c.to, rng);
    auto res = gradcheck::compare({&x}, [&] { return wsum(tict::reshape(x, c.to), w); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
  struct PCase {
    Shape s;
    std::vector<int> perm;
  };
  for (auto& c : std::vector<PCase>{{{3, 4}, {1, 0}}, {{2, 3, 4}, {2, 0, 1}}, {{2, 3, 2, 4}, {0, 2, 1, 3}}}) {
    auto x = randn(c.s, rng);
    Shape so(c.s.size());
    for (size_t i = 0; i < c.s.size(); ++i) so[i] = c.s[static_cast<size_t>(c.perm[i])];
    auto w = randn(so, rng);
    auto res = gradcheck::compare({&x}, [&] { return wsum(tict::permute(x, c.perm), w); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
}

TEST_CASE("layernorm gradients match finite differences") {
  tict::Rng rng(108);
  for (Shape s : {Shape{4}, Shape{3, 5}, Shape{2, 3, 8}}) {
    int d = s.back();
    auto x = randn(s, rng);
    auto g = randn({d}, rng, 0.5);
    auto b = randn({d}, rng, 0.5);
    auto w = randn(s, rng);
    auto res = gradcheck::compare({&x, &g, &b}, [&] { return wsum(tict::layernorm(x, g, b), w); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
}

TEST_CASE("conv1d gradients match finite differences") {
  tict::Rng rng(109);
  struct Case {
    Shape sx, sk;
  };
  std::vector<Case> cases = {
      {{1, 1, 5}, {1, 1, 3}}, {{2, 2, 6}, {3, 2, 5}}, {{1, 2, 4}, {2, 2, 2}}, {{2, 1, 4}, {2, 1, 1}}};
  for (auto& c : cases) {
    auto x = randn(c.sx, rng);
    auto k = randn(c.sk, rng);
    Shape so = {c.sx[0], c.sk[0], c.sx[2]};
    auto w = randn(so, rng);
    auto res = gradcheck::compare({&x, &k}, [&] { return wsum(tict::conv1d_same(x, k), w); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
}

TEST_CASE("loss heads match finite differences") {
  tict::Rng rng(110);
  for (int C : {2, 5, 9}) {
    auto x = randn({C}, rng);
    int target = static_cast<int>(rng.below(static_cast<uint64_t>(C)));
    auto res = gradcheck::compare({&x}, [&] { return tict::cross_entropy(x, target); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
  struct RCase {
    int m, C;
  };
  for (auto& c : std::vector<RCase>{{2, 3}, {4, 4}, {3, 7}}) {
    auto x = randn({c.m, c.C}, rng);
    std::vector<int> targets(static_cast<size_t>(c.m));
    for (auto& t : targets) t = static_cast<int>(rng.below(static_cast<uint64_t>(c.C)));
    auto res = gradcheck::compare({&x}, [&] { return tict::cross_entropy_rows(x, targets); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
  for (auto& c : std::vector<RCase>{{1, 2}, {3, 4}, {2, 6}}) {
    Shape s{c.m, c.C};
    std::vector<double> pv(static_cast<size_t>(c.m * c.C));
    for (auto& p : pv) p = 0.1 + 0.9 * rng.uniform();
    auto probs = T::from_vector(s, std::move(pv));
    std::vector<int> targets(static_cast<size_t>(c.m));
    for (auto& t : targets) t = static_cast<int>(rng.below(static_cast<uint64_t>(c.C)));
    auto res = gradcheck::compare({&probs}, [&] { return tict::nll_probs(probs, targets); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
  for (Shape s : {Shape{4}, Shape{2, 3}, Shape{2, 2, 2}}) {
    auto z = randn(s, rng);
    std::vector<double> y(static_cast<size_t>(tict::shape_numel(s)));
    for (auto& v : y) v = rng.coin() ? 1.0 : 0.0;
    auto res = gradcheck::compare({&z}, [&] { return tict::bce_logits(z, y); });
    CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
  }
}

TEST_CASE("composite attention-shaped graph matches finite differences") {
  // softmax(QK^T/sqrt(d)) V with a weighted scalar head: exercises matmul,
  // permute, scale and softmax composed the way the model uses them.
  tict::Rng rng(111);
  int n = 3, m = 4, d = 5;
  auto Q = randn({n, d}, rng);
  auto K = randn({m, d}, rng);
  auto V = randn({m, d}, rng);
  auto w = randn({n, d}, rng);
  auto res = gradcheck::compare({&Q, &K, &V}, [&] {
    auto scores = tict::scale(tict::matmul(Q, tict::permute(K, {1, 0})), 1.0 / std::sqrt(double(d)));
    auto attn = tict::softmax(scores, -1);
    return wsum(tict::matmul(attn, V), w);
  });
  CHECK_MESSAGE(res.max_rel_err < kTolProp, res.describe());
}
