#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "lumvit/grad_check.hpp"
#include "lumvit/ops.hpp"
#include "lumvit/tensor.hpp"

using namespace lumvit;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                             double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t = Tensor<double>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// Independent triple-loop reference for matmul.
std::vector<double> matmul_ref(const std::vector<double>& a, const std::vector<double>& b,
                               int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
      c[static_cast<std::size_t>(i) * n + j] = s;
    }
  return c;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
  std::mt19937_64 rng(1);
  Tensor<double> eye = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<double> m = random_tensor({3, 3}, rng, false);
  Tensor<double> out = ops::matmul(eye, m);
  for (int i = 0; i < 9; ++i) CHECK(out.data()[i] == doctest::Approx(m.data()[i]).epsilon(1e-15));

  Tensor<double> a = Tensor<double>::from({1, 1}, {2});
  Tensor<double> b = Tensor<double>::from({1, 1}, {3});
  CHECK(ops::matmul(a, b).item() == doctest::Approx(6.0));
}

TEST_CASE("matmul matches triple-loop reference within 1e-12") {
  std::mt19937_64 rng(7);
  Tensor<double> a = random_tensor({7, 5}, rng, false);
  Tensor<double> b = random_tensor({5, 4}, rng, false);
  Tensor<double> c = ops::matmul(a, b);
  auto ref = matmul_ref(a.values(), b.values(), 7, 5, 4);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(std::abs(c.data()[i] - ref[i]) <= 1e-12);
}

TEST_CASE("matmul shape mismatch raises dimension error") {
  Tensor<double> a = Tensor<double>::zeros({2, 3});
  Tensor<double> b = Tensor<double>::zeros({4, 2});
  CHECK_THROWS_AS(ops::matmul(a, b), DimensionError);
}

TEST_CASE("elementwise basics") {
  Tensor<double> x = Tensor<double>::from({3}, {-1, 0, 2});
  Tensor<double> r = ops::relu(x);
  CHECK(r.data()[0] == 0);
  CHECK(r.data()[1] == 0);
  CHECK(r.data()[2] == 2);

  Tensor<double> zero = Tensor<double>::scalar(0.0);
  Tensor<double> same = ops::add(x, zero);
  for (int i = 0; i < 3; ++i) CHECK(same.data()[i] == x.data()[i]);

  Tensor<double> a = Tensor<double>::zeros({2, 2});
  Tensor<double> b = Tensor<double>::zeros({3});
  CHECK_THROWS_AS(ops::add(a, b), DimensionError);
}

TEST_CASE("gelu gradient matches central finite difference at x=0.5") {
  Tensor<double> x = Tensor<double>::from({1}, {0.5}, true);
  auto fn = [&]() { return ops::sum_all(ops::gelu(x)); };
  auto report = grad_check(fn, {{"x", x}}, 1e-6, 1e-6);
  CHECK(report.pass());
}

TEST_CASE("softmax basics and stability") {
  Tensor<double> x = Tensor<double>::from({2}, {0, 0});
  Tensor<double> y = ops::softmax(x, -1);
  CHECK(y.data()[0] == doctest::Approx(0.5));
  CHECK(y.data()[1] == doctest::Approx(0.5));

  Tensor<double> big = Tensor<double>::from({2}, {1000, 0});
  Tensor<double> yb = ops::softmax(big, -1);
  CHECK(std::isfinite(yb.data()[0]));
  CHECK(yb.data()[0] == doctest::Approx(1.0));
  CHECK(yb.data()[1] == doctest::Approx(0.0));

  // Rows sum to one.
  std::mt19937_64 rng(3);
  Tensor<double> r = random_tensor({4, 6}, rng, false, -5, 5);
  Tensor<double> yr = ops::softmax(r, -1);
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 6; ++j) s += yr.data()[i * 6 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax Jacobian matches finite differences on a random 5-vector") {
  std::mt19937_64 rng(11);
  Tensor<double> x = random_tensor({5}, rng, true, -2, 2);
  // Check full Jacobian via directional sums against distinct weightings.
  for (int probe = 0; probe < 5; ++probe) {
    Tensor<double> w = Tensor<double>::zeros({5});
    w.data()[probe] = 1.0;
    auto fn = [&]() { return ops::sum_all(ops::mul(ops::softmax(x, -1), w)); };
    auto report = grad_check(fn, {{"x", x}}, 1e-6, 1e-6);
    CHECK(report.pass());
  }
}

TEST_CASE("layernorm forced values") {
  Tensor<double> gain = Tensor<double>::full({2}, 1.0);
  Tensor<double> bias = Tensor<double>::zeros({2});

  Tensor<double> constant = Tensor<double>::from({1, 2}, {3, 3});
  Tensor<double> yc = ops::layernorm(constant, gain, bias, 1e-12);
  CHECK(std::abs(yc.data()[0]) < 1e-5);
  CHECK(std::abs(yc.data()[1]) < 1e-5);

  // Population variance convention: row [1,3] -> [-1,1].
  Tensor<double> row = Tensor<double>::from({1, 2}, {1, 3});
  Tensor<double> yr = ops::layernorm(row, gain, bias, 1e-12);
  CHECK(yr.data()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(yr.data()[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layernorm gradient vs finite differences") {
  std::mt19937_64 rng(13);
  Tensor<double> x = random_tensor({3, 4}, rng, true);
  Tensor<double> gain = random_tensor({4}, rng, true, 0.5, 1.5);
  Tensor<double> bias = random_tensor({4}, rng, true);
  Tensor<double> w = random_tensor({3, 4}, rng, false);
  auto fn = [&]() { return ops::sum_all(ops::mul(ops::layernorm(x, gain, bias, 1e-6), w)); };
  auto report = grad_check(fn, {{"x", x}, {"gain", gain}, {"bias", bias}}, 1e-6, 1e-5);
  CHECK(report.pass());
}

TEST_CASE("cross entropy forced values") {
  Tensor<double> logits = Tensor<double>::from({1, 2}, {10, -10});
  Tensor<double> onehot = Tensor<double>::from({1, 2}, {1, 0});
  CHECK(ops::cross_entropy(logits, onehot).item() < 1e-4);

  const int K = 7;
  Tensor<double> uniform_logits = Tensor<double>::zeros({2, K});
  Tensor<double> targets = Tensor<double>::full({2, K}, 1.0 / K);
  CHECK(ops::cross_entropy(uniform_logits, targets).item() ==
        doctest::Approx(std::log(double(K))).epsilon(1e-12));

  Tensor<double> bad = Tensor<double>::full({2, K}, 0.5);
  CHECK_THROWS_AS(ops::cross_entropy(uniform_logits, bad), ValidationError);
}

TEST_CASE("cross entropy gradient vs finite differences") {
  std::mt19937_64 rng(17);
  Tensor<double> logits = random_tensor({3, 5}, rng, true, -2, 2);
  std::vector<double> t(15);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int b = 0; b < 3; ++b) {
    double s = 0;
    for (int k = 0; k < 5; ++k) {
      t[b * 5 + k] = u(rng);
      s += t[b * 5 + k];
    }
    for (int k = 0; k < 5; ++k) t[b * 5 + k] /= s;
  }
  Tensor<double> targets = Tensor<double>::from({3, 5}, t);
  auto fn = [&]() { return ops::cross_entropy(logits, targets); };
  auto report = grad_check(fn, {{"logits", logits}}, 1e-6, 1e-5);
  CHECK(report.pass());
}

TEST_CASE("backward basics") {
  Tensor<double> x = Tensor<double>::from({4}, {1, 2, 3, 4}, true);
  {
    TapeScope<double> scope;
    backward(ops::sum_all(x));
  }
  for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(1.0));

  Tensor<double> y = Tensor<double>::from({1}, {3}, true);
  {
    TapeScope<double> scope;
    backward(ops::mul(y, y));
  }
  CHECK(y.grad()[0] == doctest::Approx(6.0));

  Tensor<double> z = Tensor<double>::from({2}, {1, 2}, true);
  {
    TapeScope<double> scope;
    Tensor<double> v = ops::mul(z, z);
    CHECK_THROWS_AS(backward(v), ValidationError);
  }
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(19);
  Tensor<double> x = random_tensor({6}, rng, true);
  Tensor<double> wf = random_tensor({6}, rng, false);
  Tensor<double> wg = random_tensor({6}, rng, false);
  const double a = 1.7, b = -0.4;

  auto grad_of = [&](auto loss_fn) {
    x.zero_grad();
    TapeScope<double> scope;
    backward(loss_fn());
    return x.grad();
  };
  auto f = [&]() { return ops::sum_all(ops::mul(ops::mul(x, x), wf)); };
  auto g = [&]() { return ops::sum_all(ops::mul(ops::gelu(x), wg)); };
  auto combined = [&]() { return ops::add(ops::scale(f(), a), ops::scale(g(), b)); };

  auto gf = grad_of(f);
  auto gg = grad_of(g);
  auto gc = grad_of(combined);
  for (int i = 0; i < 6; ++i) CHECK(std::abs(gc[i] - (a * gf[i] + b * gg[i])) <= 1e-10);
}

TEST_CASE("forward results are deterministic") {
  std::mt19937_64 rng(23);
  Tensor<double> a = random_tensor({40, 30}, rng, false);
  Tensor<double> b = random_tensor({30, 20}, rng, false);
  Tensor<double> c1 = ops::matmul(a, b);
  Tensor<double> c2 = ops::matmul(a, b);
  CHECK(std::memcmp(c1.data(), c2.data(), sizeof(double) * 40 * 20) == 0);
}

TEST_CASE("grad_check: quadratic form passes at 1e-7") {
  std::mt19937_64 rng(29);
  Tensor<double> x = random_tensor({4}, rng, true);
  Tensor<double> q = random_tensor({4, 4}, rng, false);
  auto fn = [&]() {
    Tensor<double> xr = ops::reshape(x, {1, 4});
    return ops::sum_all(ops::mul(ops::matmul(xr, q), xr));
  };
  auto report = grad_check(fn, {{"x", x}}, 1e-6, 1e-7);
  CHECK(report.pass());
}

TEST_CASE("grad_check: step without a surrogate reports the expected failure") {
  // step(.) is flat almost everywhere, so the analytic gradient of its
  // detached value is exactly zero while the central difference straddling
  // the jump is not. The oracle must flag the disagreement.
  Tensor<double> w = Tensor<double>::from({1}, {1e-7}, true);
  auto fn = [&]() {
    Tensor<double> hard = ops::detach(ops::step_ste(w));
    return ops::add(ops::sum_all(hard), ops::scale(ops::sum_all(w), 0.0));
  };
  auto report = grad_check(fn, {{"w", w}}, 1e-5, 1e-5);
  CHECK_FALSE(report.pass());
  CHECK(report.params[0].analytic_at_worst == 0.0);
  CHECK(std::abs(report.params[0].numeric_at_worst) > 1.0);
}

TEST_CASE("grad_check: softmax-of-matmul chain passes at 1e-6") {
  std::mt19937_64 rng(31);
  Tensor<double> x = random_tensor({2, 3}, rng, true);
  Tensor<double> w = random_tensor({3, 4}, rng, true);
  Tensor<double> probe = random_tensor({2, 4}, rng, false);
  auto fn = [&]() {
    return ops::sum_all(ops::mul(ops::softmax(ops::matmul(x, w), -1), probe));
  };
  auto report = grad_check(fn, {{"x", x}, {"w", w}}, 1e-6, 1e-6);
  CHECK(report.pass());
}

TEST_CASE("grad_check rejects nondeterministic functions") {
  Tensor<double> x = Tensor<double>::from({1}, {1.0}, true);
  int calls = 0;
  auto fn = [&]() {
    ++calls;
    return ops::scale(ops::sum_all(x), 1.0 + 0.1 * calls);
  };
  CHECK_THROWS_AS(grad_check(fn, {{"x", x}}, 1e-6, 1e-6), ValidationError);
}

TEST_CASE("shape and broadcast ops backpropagate correctly") {
  std::mt19937_64 rng(37);
  Tensor<double> x = random_tensor({2, 3, 4}, rng, true);
  Tensor<double> tok = random_tensor({4}, rng, true);
  Tensor<double> bias = random_tensor({4}, rng, true);
  Tensor<double> gain = random_tensor({4}, rng, true, 0.5, 1.5);
  Tensor<double> probe = random_tensor({2, 4, 4}, rng, false);

  auto fn = [&]() {
    Tensor<double> withtok = ops::prepend_token(x, tok);            // [2,4,4]
    Tensor<double> flat = ops::reshape(withtok, {2, 16});
    Tensor<double> biased = ops::reshape(ops::mul_bias(ops::add_bias(
        ops::reshape(flat, {8, 4}), bias), gain), {2, 4, 4});
    Tensor<double> perm = ops::permute(biased, {0, 2, 1});
    Tensor<double> back = ops::permute(perm, {0, 2, 1});
    Tensor<double> sel = ops::select_axis1(back, 1);                // [2,4]
    Tensor<double> rows = ops::slice_rows(back, 0, 2);
    Tensor<double> cols = ops::slice_cols(rows, 1, 2);
    return ops::add(ops::sum_all(ops::mul(back, probe)),
                    ops::add(ops::sum_all(sel), ops::sum_all(cols)));
  };
  auto report = grad_check(fn, {{"x", x}, {"tok", tok}, {"bias", bias}, {"gain", gain}},
                           1e-6, 1e-6);
  CHECK(report.pass());
}

TEST_CASE("bmm and sum_last backpropagate correctly") {
  std::mt19937_64 rng(41);
  Tensor<double> a = random_tensor({3, 2, 4}, rng, true);
  Tensor<double> b = random_tensor({3, 4, 2}, rng, true);
  Tensor<double> probe = random_tensor({3, 2}, rng, false);
  auto fn = [&]() {
    return ops::sum_all(ops::mul(ops::sum_last(ops::bmm(a, b)), probe));
  };
  auto report = grad_check(fn, {{"a", a}, {"b", b}}, 1e-6, 1e-6);
  CHECK(report.pass());
}

TEST_CASE("log_clamped handles exact zeros") {
  Tensor<double> x = Tensor<double>::from({2}, {0.0, 1.0}, true);
  Tensor<double> y = ops::log_clamped(x);
  CHECK(y.data()[0] == doctest::Approx(std::log(1e-20)));
  CHECK(y.data()[1] == doctest::Approx(0.0));
  {
    TapeScope<double> scope;
    backward(ops::sum_all(ops::log_clamped(x)));
  }
  CHECK(x.grad()[0] == 0.0);  // below the floor: flat
  CHECK(x.grad()[1] == doctest::Approx(1.0));
}

TEST_CASE("straight_through passes hard values forward and soft gradients back") {
  Tensor<double> soft = Tensor<double>::from({3}, {0.2, 0.7, 0.5}, true);
  Tensor<double> hard = Tensor<double>::from({3}, {0, 1, 1});
  Tensor<double> w = Tensor<double>::from({3}, {2, 3, 5});
  {
    TapeScope<double> scope;
    Tensor<double> st = ops::straight_through(soft, hard);
    CHECK(st.data()[0] == 0.0);
    CHECK(st.data()[1] == 1.0);
    backward(ops::sum_all(ops::mul(st, w)));
  }
  CHECK(soft.grad()[0] == doctest::Approx(2.0));
  CHECK(soft.grad()[1] == doctest::Approx(3.0));
  CHECK(soft.grad()[2] == doctest::Approx(5.0));
}

TEST_CASE("step_ste clips the pass-through gradient at |w| = 1") {
  Tensor<double> w = Tensor<double>::from({3}, {0.5, 2.0, -0.3}, true);
  {
    TapeScope<double> scope;
    backward(ops::sum_all(ops::step_ste(w)));
  }
  CHECK(w.grad()[0] == doctest::Approx(1.0));
  CHECK(w.grad()[1] == 0.0);  // outside the clip window
  CHECK(w.grad()[2] == doctest::Approx(1.0));
}
