#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "hisa/errors.hpp"
#include "hisa/rng.hpp"
#include "hisa/tensor.hpp"

using namespace hisa;
using hisa_test::check_gradients;
using hisa_test::GradCheckResult;

namespace {

Parameter random_param(const std::string& name, Shape shape, Rng& rng, double lo = -1.0,
                       double hi = 1.0) {
  Parameter p(name, std::move(shape));
  for (auto& v : p.value) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return p;
}

// Weights the output with fixed random coefficients so every entry of the
// op's output contributes a distinct amount to the scalar loss.
Tensor weighted_sum(Tape& tape, const Tensor& t, Rng& weight_rng) {
  std::vector<Scalar> w(t.value().size());
  for (auto& v : w) v = static_cast<Scalar>(weight_rng.uniform(-1.0, 1.0));
  return sum(mul(t, tape.constant(t.shape(), std::move(w))));
}

constexpr int kSeeds = 25;

}  // namespace

TEST_CASE("matmul against hand-worked products") {
  Tape tape;
  Tensor eye = tape.constant({2, 2}, {1, 0, 0, 1});
  Tensor v = tape.constant({2, 1}, {3, 4});
  Tensor out = matmul(eye, v);
  CHECK(out.shape() == Shape{2, 1});
  CHECK(out.value()[0] == doctest::Approx(3.0));
  CHECK(out.value()[1] == doctest::Approx(4.0));

  Tensor row = tape.constant({1, 2}, {1, 2});
  Tensor col = tape.constant({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == doctest::Approx(11.0));
}

TEST_CASE("matmul matches a triple-loop reference on random matrices") {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Scalar> a(4 * 5), b(5 * 3);
    for (auto& v : a) v = static_cast<Scalar>(rng.uniform(-2.0, 2.0));
    for (auto& v : b) v = static_cast<Scalar>(rng.uniform(-2.0, 2.0));
    std::vector<double> expect(4 * 3, 0.0);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 3; ++j) {
        for (int k = 0; k < 5; ++k) expect[i * 3 + j] += a[i * 5 + k] * b[k * 3 + j];
      }
    }
    Tape tape;
    Tensor out = matmul(tape.constant({4, 5}, a), tape.constant({5, 3}, b));
    for (int i = 0; i < 12; ++i) {
      CHECK(out.value()[i] == doctest::Approx(expect[i]).epsilon(0).scale(0).epsilon(1e-6));
    }
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Tape tape;
  Tensor a = tape.constant({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = tape.constant({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("softmax handles uniform, extreme, and ordinary inputs") {
  Tape tape;
  Tensor u = softmax(tape.constant({3}, {0, 0, 0}), 0);
  for (int i = 0; i < 3; ++i) CHECK(u.value()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Tensor big = softmax(tape.constant({2}, {1000, 1000}), 0);
  CHECK(big.all_finite());
  CHECK(big.value()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(big.value()[1] == doctest::Approx(0.5).epsilon(1e-12));

  Tensor s = softmax(tape.constant({3}, {1, 2, 3}), 0);
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) {
    CHECK(s.value()[i] == doctest::Approx(std::exp(1.0 + i) / denom).epsilon(1e-9));
  }
  double total = 0;
  for (int i = 0; i < 3; ++i) total += s.value()[i];
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("backward of sum of squares produces 2w") {
  Parameter w("w", {2});
  w.value = {1, 2};
  Tape tape;
  Tensor wl = tape.leaf(w);
  tape.backward(sum(mul(wl, wl)));
  CHECK(w.grad[0] == doctest::Approx(2.0));
  CHECK(w.grad[1] == doctest::Approx(4.0));
}

TEST_CASE("backward through a constant-only graph is a no-op") {
  Tape tape;
  Tensor loss = sum(mul(tape.constant({2}, {1, 2}), tape.constant({2}, {3, 4})));
  CHECK_NOTHROW(tape.backward(loss));
  CHECK(loss.item() == doctest::Approx(11.0));
}

TEST_CASE("repeated backward calls accumulate parameter gradients") {
  Parameter w("w", {2});
  w.value = {1, 2};

  SUBCASE("same tape twice") {
    Tape tape;
    Tensor loss = sum(mul(tape.leaf(w), tape.leaf(w)));
    tape.backward(loss);
    tape.backward(loss);
    CHECK(w.grad[0] == doctest::Approx(4.0));
    CHECK(w.grad[1] == doctest::Approx(8.0));
  }

  SUBCASE("fresh tape per step") {
    for (int i = 0; i < 2; ++i) {
      Tape tape;
      Tensor wl = tape.leaf(w);
      tape.backward(sum(mul(wl, wl)));
    }
    CHECK(w.grad[0] == doctest::Approx(4.0));
    CHECK(w.grad[1] == doctest::Approx(8.0));
  }
}

TEST_CASE("the same parameter used through two leaves sums both contributions") {
  Parameter w("w", {1});
  w.value = {3};
  Tape tape;
  Tensor a = tape.leaf(w);
  Tensor b = tape.leaf(w);
  tape.backward(sum(mul(a, b)));  // d/dw (w*w) = 2w
  CHECK(w.grad[0] == doctest::Approx(6.0));
}

TEST_CASE("backward requires a scalar loss on the same tape") {
  Parameter w("w", {2});
  w.value = {1, 2};
  Tape tape;
  Tensor wl = tape.leaf(w);
  CHECK_THROWS_AS(tape.backward(wl), ShapeError);
  Tape other;
  Tensor foreign = other.scalar_constant(1.0);
  CHECK_THROWS_AS(tape.backward(foreign), ValueError);
}

TEST_CASE("masked softmax zeroes masked entries exactly and keeps rows normalized") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const int rows = 3, cols = 5;
    std::vector<Scalar> scores(rows * cols);
    for (auto& v : scores) v = static_cast<Scalar>(rng.uniform(-4.0, 4.0));
    BoolMask mask(rows, cols);
    for (int r = 0; r < rows; ++r) {
      mask.set(r, 0, true);
      for (int c = 1; c < cols; ++c) mask.set(r, c, rng.uniform() < 0.5);
    }
    Tape tape;
    Tensor out = masked_softmax(tape.constant({rows, cols}, scores), mask);
    for (int r = 0; r < rows; ++r) {
      double total = 0;
      for (int c = 0; c < cols; ++c) {
        const double v = out.value()[r * cols + c];
        if (mask.at(r, c)) {
          CHECK(v > 0.0);
          total += v;
        } else {
          CHECK(v == 0.0);  // exact, not approximate
        }
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("masked softmax refuses a fully hidden row") {
  Tape tape;
  BoolMask mask(2, 2);
  mask.set(0, 0, true);
  Tensor scores = tape.constant({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(masked_softmax(scores, mask), ValueError);
}

TEST_CASE("masked softmax output is invariant to scores under masked entries") {
  BoolMask mask(1, 4);
  mask.set(0, 0, true);
  mask.set(0, 2, true);
  Tape tape;
  Tensor a = masked_softmax(tape.constant({1, 4}, {0.3, 99.0, -0.7, -50.0}), mask);
  Tensor b = masked_softmax(tape.constant({1, 4}, {0.3, -3.0, -0.7, 1234.0}), mask);
  for (int i = 0; i < 4; ++i) CHECK(a.value()[i] == b.value()[i]);
}

TEST_CASE("log softmax agrees with log of softmax") {
  Rng rng(11);
  std::vector<Scalar> x(3 * 4);
  for (auto& v : x) v = static_cast<Scalar>(rng.uniform(-5.0, 5.0));
  Tape tape;
  Tensor logits = tape.constant({3, 4}, x);
  Tensor a = log_softmax(logits, 1);
  Tensor b = log(softmax(logits, 1));
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    CHECK(a.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-12));
  }
}

TEST_CASE("layer norm rows have zero mean and unit variance before scale and shift") {
  Rng rng(13);
  std::vector<Scalar> x(4 * 6);
  for (auto& v : x) v = static_cast<Scalar>(rng.uniform(-3.0, 3.0));
  Tape tape;
  Tensor gamma = tape.constant({6}, std::vector<Scalar>(6, 1.0));
  Tensor beta = tape.constant({6}, std::vector<Scalar>(6, 0.0));
  Tensor out = layer_norm(tape.constant({4, 6}, x), gamma, beta);
  for (int r = 0; r < 4; ++r) {
    double m = 0, v2 = 0;
    for (int c = 0; c < 6; ++c) m += out.value()[r * 6 + c];
    m /= 6;
    for (int c = 0; c < 6; ++c) {
      const double d = out.value()[r * 6 + c] - m;
      v2 += d * d;
    }
    v2 /= 6;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v2 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("embedding rows copies table rows and rejects out-of-range ids") {
  Tape tape;
  Tensor table = tape.constant({3, 2}, {10, 11, 20, 21, 30, 31});
  Tensor out = embedding_rows(table, {2, 0, 2});
  CHECK(out.shape() == Shape{3, 2});
  CHECK(out.value() == std::vector<Scalar>{30, 31, 10, 11, 30, 31});
  CHECK_THROWS_AS(embedding_rows(table, {3}), ValueError);
  CHECK_THROWS_AS(embedding_rows(table, {-1}), ValueError);
}

TEST_CASE("gather per row picks one entry per row") {
  Tape tape;
  Tensor x = tape.constant({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor out = gather_per_row(x, {2, 0});
  CHECK(out.value() == std::vector<Scalar>{3, 4});
  CHECK_THROWS_AS(gather_per_row(x, {0}), ShapeError);
  CHECK_THROWS_AS(gather_per_row(x, {0, 3}), ValueError);
}

TEST_CASE("relative entropy of identical distributions is zero") {
  Tape tape;
  std::vector<Scalar> p = {0.2, 0.3, 0.5};
  Tensor q = tape.constant({3}, {0.2, 0.3, 0.5});
  CHECK(std::abs(kl_divergence(p, q).item()) < 1e-15);
}

TEST_CASE("relative entropy tolerates zero reference entries and floors the estimate") {
  Tape tape;
  std::vector<Scalar> p = {0.0, 1.0};
  Tensor q = tape.constant({2}, {0.5, 0.5});
  // 0 * log 0 contributes nothing; the remaining term is log(1/0.5).
  CHECK(kl_divergence(p, q).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor q0 = tape.constant({2}, {1.0, 0.0});
  CHECK(std::isfinite(kl_divergence(p, q0).item()));
}

TEST_CASE("log rejects non-positive inputs") {
  Tape tape;
  CHECK_THROWS_AS(log(tape.constant({1}, {0.0})), ValueError);
  CHECK_THROWS_AS(log(tape.constant({1}, {-1.0})), ValueError);
}

TEST_CASE("shape mismatches in elementwise and structural ops throw") {
  Tape tape;
  Tensor a = tape.constant({2, 2}, {1, 2, 3, 4});
  Tensor b = tape.constant({2}, {1, 2});
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, b), ShapeError);
  CHECK_THROWS_AS(reshape(a, {3, 2}), ShapeError);
  CHECK_THROWS_AS(slice_rows(a, 1, 2), ShapeError);
  CHECK_THROWS_AS(slice_cols(a, 0, 3), ShapeError);
  CHECK_THROWS_AS(concat({a, b}, 0), ShapeError);
}

TEST_CASE("dropout with zero rate is the identity and keeps expectation otherwise") {
  Rng data_rng(3);
  std::vector<Scalar> x(1000);
  for (auto& v : x) v = 1.0;
  Tape tape;
  Tensor t = tape.constant({1000}, x);
  Rng drop_rng(99);
  Tensor kept = dropout(t, 0.0, drop_rng);
  CHECK(kept.id() == t.id());

  Tensor dropped = dropout(t, 0.4, drop_rng);
  double meanv = 0;
  for (double v : dropped.value()) meanv += v;
  meanv /= 1000;
  CHECK(meanv == doctest::Approx(1.0).epsilon(0.1));
  (void)data_rng;
}

// ---------------------------------------------------------------------------
// Finite-difference property: every differentiable op, many random seeds.
// ---------------------------------------------------------------------------

namespace {

void require_pass(const GradCheckResult& res) {
  INFO(res.summary());
  CHECK(res.ok);
}

}  // namespace

TEST_CASE("gradients: elementwise binary ops") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(1000 + seed);
    Parameter a = random_param("a", {3, 4}, rng);
    Parameter b = random_param("b", {3, 4}, rng);
    const int which = seed % 3;
    require_pass(check_gradients({&a, &b}, [&](Tape& tape) {
      Rng wrng(500 + seed);
      Tensor x = tape.leaf(a);
      Tensor y = tape.leaf(b);
      Tensor out = which == 0 ? add(x, y) : which == 1 ? sub(x, y) : mul(x, y);
      return weighted_sum(tape, out, wrng);
    }));
  }
}

TEST_CASE("gradients: affine and row-vector bias") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(2000 + seed);
    Parameter x = random_param("x", {3, 4}, rng);
    Parameter b = random_param("b", {4}, rng);
    require_pass(check_gradients({&x, &b}, [&](Tape& tape) {
      Rng wrng(600 + seed);
      Tensor out = add_row_vector(affine(tape.leaf(x), 0.7, -0.3), tape.leaf(b));
      return weighted_sum(tape, out, wrng);
    }));
  }
}

TEST_CASE("gradients: sigmoid, relu, log") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(3000 + seed);
    Parameter x = random_param("x", {3, 4}, rng, 0.5, 2.0);  // positive, away from relu kink
    const int which = seed % 3;
    require_pass(check_gradients({&x}, [&](Tape& tape) {
      Rng wrng(700 + seed);
      Tensor t = tape.leaf(x);
      Tensor out = which == 0 ? sigmoid(t) : which == 1 ? relu(t) : log(t);
      return weighted_sum(tape, out, wrng);
    }));
  }
}

TEST_CASE("gradients: reductions") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(4000 + seed);
    Parameter x = random_param("x", {3, 4}, rng);
    const int which = seed % 4;
    require_pass(check_gradients({&x}, [&](Tape& tape) {
      Rng wrng(800 + seed);
      Tensor t = tape.leaf(x);
      switch (which) {
        case 0: return sum(t);
        case 1: return mean(t);
        case 2: return weighted_sum(tape, sum_axis(t, 0), wrng);
        default: return weighted_sum(tape, sum_axis(t, 1), wrng);
      }
    }));
  }
}

TEST_CASE("gradients: matmul") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(5000 + seed);
    Parameter a = random_param("a", {3, 4}, rng);
    Parameter b = random_param("b", {4, 2}, rng);
    require_pass(check_gradients({&a, &b}, [&](Tape& tape) {
      Rng wrng(900 + seed);
      return weighted_sum(tape, matmul(tape.leaf(a), tape.leaf(b)), wrng);
    }));
  }
}

TEST_CASE("gradients: structural ops") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(6000 + seed);
    Parameter a = random_param("a", {3, 4}, rng);
    Parameter b = random_param("b", {2, 4}, rng);
    const int which = seed % 5;
    require_pass(check_gradients({&a, &b}, [&](Tape& tape) {
      Rng wrng(1100 + seed);
      Tensor x = tape.leaf(a);
      Tensor y = tape.leaf(b);
      Tensor out;
      switch (which) {
        case 0: out = transpose(x); break;
        case 1: out = concat({x, y}, 0); break;
        case 2: out = concat({x, slice_cols(x, 0, 2)}, 1); break;
        case 3: out = slice_rows(concat({x, y}, 0), 1, 3); break;
        default: out = slice_cols(x, 1, 2); break;
      }
      return weighted_sum(tape, out, wrng);
    }));
  }
}

TEST_CASE("gradients: softmax family") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(7000 + seed);
    Parameter x = random_param("x", {3, 5}, rng, -3.0, 3.0);
    BoolMask mask(3, 5);
    for (int r = 0; r < 3; ++r) {
      mask.set(r, 0, true);
      for (int c = 1; c < 5; ++c) mask.set(r, c, rng.uniform() < 0.6);
    }
    const int which = seed % 5;
    require_pass(check_gradients({&x}, [&](Tape& tape) {
      Rng wrng(1200 + seed);
      Tensor t = tape.leaf(x);
      Tensor out;
      switch (which) {
        case 0: out = softmax(t, 0); break;
        case 1: out = softmax(t, 1); break;
        case 2: out = log_softmax(t, 0); break;
        case 3: out = log_softmax(t, 1); break;
        default: out = masked_softmax(t, mask); break;
      }
      return weighted_sum(tape, out, wrng);
    }));
  }
}

TEST_CASE("gradients: layer norm") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(8000 + seed);
    Parameter x = random_param("x", {3, 6}, rng, -2.0, 2.0);
    Parameter gamma = random_param("gamma", {6}, rng, 0.5, 1.5);
    Parameter beta = random_param("beta", {6}, rng, -0.5, 0.5);
    require_pass(check_gradients({&x, &gamma, &beta}, [&](Tape& tape) {
      Rng wrng(1300 + seed);
      Tensor out = layer_norm(tape.leaf(x), tape.leaf(gamma), tape.leaf(beta));
      return weighted_sum(tape, out, wrng);
    }));
  }
}

TEST_CASE("gradients: embedding lookup with repeated ids") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(9000 + seed);
    Parameter table = random_param("table", {5, 3}, rng);
    std::vector<int> ids;
    for (int i = 0; i < 7; ++i) ids.push_back(static_cast<int>(rng.uniform_int(5)));
    require_pass(check_gradients({&table}, [&](Tape& tape) {
      Rng wrng(1400 + seed);
      return weighted_sum(tape, embedding_rows(tape.leaf(table), ids), wrng);
    }));
  }
}

TEST_CASE("gradients: per-row gather") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(10000 + seed);
    Parameter x = random_param("x", {4, 5}, rng);
    std::vector<int> cols;
    for (int i = 0; i < 4; ++i) cols.push_back(static_cast<int>(rng.uniform_int(5)));
    require_pass(check_gradients({&x}, [&](Tape& tape) {
      Rng wrng(1500 + seed);
      return weighted_sum(tape, gather_per_row(tape.leaf(x), cols), wrng);
    }));
  }
}

TEST_CASE("gradients: relative entropy against a fixed reference") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(11000 + seed);
    Parameter logits = random_param("logits", {5}, rng, -2.0, 2.0);
    std::vector<Scalar> p(5);
    double total = 0;
    for (auto& v : p) {
      v = static_cast<Scalar>(rng.uniform(0.05, 1.0));
      total += v;
    }
    for (auto& v : p) v = static_cast<Scalar>(v / total);
    require_pass(check_gradients({&logits}, [&](Tape& tape) {
      return kl_divergence(p, softmax(tape.leaf(logits), 0));
    }));
  }
}

TEST_CASE("gradients: dropout with a replayed mask") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(12000 + seed);
    Parameter x = random_param("x", {3, 4}, rng);
    require_pass(check_gradients({&x}, [&](Tape& tape) {
      Rng wrng(1600 + seed);
      Rng drop_rng(7777 + seed);  // identical mask on every re-evaluation
      return weighted_sum(tape, dropout(tape.leaf(x), 0.3, drop_rng), wrng);
    }));
  }
}
