#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "doctest.h"
#include "pdnrl/autodiff.hpp"
#include "pdnrl/error.hpp"

using namespace pdnrl;
using namespace pdnrl::ad;
using testsupport::gradient_check;
using testsupport::random_mat;

namespace {

Mat row(std::initializer_list<double> v) {
  Mat m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

}  // namespace

TEST_CASE("forward primitives") {
  Tape t;
  auto p = softmax_rows(t.constant(row({0, 0, 0, 0})));
  for (int i = 0; i < 4; ++i) CHECK(p.value()(0, i) == 0.25);

  auto q = softmax_rows(t.constant(row({3.7, kNegInf})));
  CHECK(q.value()(0, 0) == 1.0);
  CHECK(q.value()(0, 1) == 0.0);
  CHECK(!std::signbit(q.value()(0, 1)));

  std::mt19937_64 rng(1);
  Mat a = random_mat(rng, 3, 5);
  auto prod = matmul(t.constant(Mat::Identity(3, 3)), t.constant(a));
  CHECK(prod.value() == a);

  CHECK_THROWS_AS(matmul(t.constant(a), t.constant(a)), Error);
  CHECK_THROWS_AS(add(t.constant(a), t.constant(Mat::Zero(2, 5))), Error);
  try {
    sub(t.constant(a), t.constant(Mat::Zero(3, 4)));
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Shape);
  }

  // Broadcast add of a row.
  auto b = add(t.constant(a), t.constant(row({1, 2, 3, 4, 5})));
  CHECK(b.value()(2, 4) == a(2, 4) + 5.0);

  auto m = mean_rows(t.constant(a));
  CHECK(m.value()(0, 1) == doctest::Approx((a(0, 1) + a(1, 1) + a(2, 1)) / 3.0));
}

TEST_CASE("masked softmax gives exact zeros") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t;
    Mat x = random_mat(rng, 1, 9, 30.0);
    Mat mask = Mat::Zero(1, 9);
    for (int i = 0; i < 9; ++i) mask(0, i) = (rng() % 3 == 0) ? 1.0 : 0.0;
    mask(0, trial % 9) = 0.0;
    auto p = softmax_rows(masked_fill(t.constant(x), mask, kNegInf));
    double total = 0.0;
    for (int i = 0; i < 9; ++i) {
      if (mask(0, i) != 0.0) CHECK(p.value()(0, i) == 0.0);
      total += p.value()(0, i);
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
  Tape t;
  auto all = masked_fill(t.constant(row({1, 2})), row({1, 1}), kNegInf);
  try {
    softmax_rows(all);
    FAIL("expected exhausted actions");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ExhaustedActions);
  }
}

TEST_CASE("simple gradients") {
  Parameter w("w", row({0.5, -1.0, 2.0}));
  const Mat x = row({3.0, 4.0, -5.0});
  {
    Tape t;
    auto loss = sum(mul(t.param(w), t.constant(x)));
    t.backward(loss);
  }
  CHECK(w.grad == x);

  // Repeated backward without reset accumulates.
  {
    Tape t;
    auto loss = sum(mul(t.param(w), t.constant(x)));
    t.backward(loss);
    t.backward(loss);
  }
  CHECK(w.grad == 3.0 * x);

  Tape t;
  auto u = t.leaf(Mat::Zero(1, 1));
  t.backward(tanh(u));
  CHECK(u.grad()(0, 0) == 1.0);
  t.backward(tanh(u));
  CHECK(u.grad()(0, 0) == 2.0);
}

TEST_CASE("backward contract") {
  Tape t;
  auto v = t.leaf(Mat::Ones(2, 2));
  try {
    t.backward(relu(v));
    FAIL("expected contract error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Contract);
  }
  auto c = t.constant(Mat::Ones(1, 1));
  CHECK_THROWS_AS(t.backward(c), Error);
  Tape other;
  CHECK_THROWS_AS(add(c, other.constant(Mat::Ones(1, 1))), Error);
}

TEST_CASE("untracked values never get gradients") {
  Tape t;
  auto c = t.constant(Mat::Ones(2, 3));
  auto x = t.leaf(Mat::Ones(3, 2));
  t.backward(sum(matmul(c, x)));
  CHECK(c.grad().size() == 0);
  CHECK(x.grad() == Mat::Constant(3, 2, 2.0));
}

TEST_CASE("gather routes gradient to gathered rows only") {
  std::mt19937_64 rng(3);
  Parameter a("a", random_mat(rng, 5, 3));
  Tape t;
  auto g = gather_rows(t.param(a), {1, 3, 1});
  t.backward(sum(g));
  for (Eigen::Index c = 0; c < 3; ++c) {
    CHECK(a.grad(0, c) == 0.0);
    CHECK(a.grad(1, c) == 2.0);
    CHECK(a.grad(2, c) == 0.0);
    CHECK(a.grad(3, c) == 1.0);
    CHECK(a.grad(4, c) == 0.0);
  }
}

TEST_CASE("primitive gradients match finite differences") {
  std::mt19937_64 rng(11);
  Parameter a("a", random_mat(rng, 4, 3));
  Parameter b("b", random_mat(rng, 3, 5));
  Parameter c("c", random_mat(rng, 4, 3));
  Parameter r("r", random_mat(rng, 1, 3));
  Parameter pos("pos", (random_mat(rng, 4, 3).array().abs() + 0.5).matrix());
  const Mat weights = random_mat(rng, 4, 5);
  const Mat wide = random_mat(rng, 4, 3);
  Mat mask = Mat::Zero(4, 5);
  mask(0, 1) = mask(2, 4) = mask(3, 0) = 1.0;

  auto weighted = [&](Tape& t, const Var& v) { return sum(mul(v, t.constant(wide.topLeftCorner(v.rows(), v.cols())))); };
  const std::vector<std::pair<const char*, std::function<Var(Tape&)>>> cases = {
      {"matmul", [&](Tape& t) { return sum(mul(matmul(t.param(a), t.param(b)), t.constant(weights))); }},
      {"matmul_nt", [&](Tape& t) { return sum(mul(matmul_nt(t.param(a), t.param(c)), t.constant(weights.leftCols(4)))); }},
      {"add broadcast", [&](Tape& t) { return weighted(t, add(t.param(a), t.param(r))); }},
      {"sub", [&](Tape& t) { return weighted(t, sub(t.param(a), t.param(c))); }},
      {"mul", [&](Tape& t) { return weighted(t, mul(t.param(a), t.param(c))); }},
      {"scale", [&](Tape& t) { return weighted(t, scale(t.param(a), -2.5)); }},
      {"relu", [&](Tape& t) { return weighted(t, relu(t.param(a))); }},
      {"tanh", [&](Tape& t) { return weighted(t, tanh(t.param(a))); }},
      {"log", [&](Tape& t) { return weighted(t, log(t.param(pos))); }},
      {"softmax", [&](Tape& t) {
         auto logits = matmul(t.param(a), t.param(b));
         return sum(mul(softmax_rows(masked_fill(logits, mask, kNegInf)), t.constant(weights)));
       }},
      {"mean", [&](Tape& t) { return mean(mul(t.param(a), t.param(c))); }},
      {"mean_rows", [&](Tape& t) { return weighted(t, mean_rows(mul(t.param(a), t.param(c)))); }},
      {"concat", [&](Tape& t) {
         auto cc = concat_cols({t.param(a), t.param(c)});
         auto cr = concat_rows({t.param(r), slice_cols(cc, 2, 3)});
         return sum(mul(tanh(cr), t.constant(Mat::Constant(5, 3, 0.7))));
       }},
      {"slice_rows", [&](Tape& t) { return weighted(t, slice_rows(tanh(t.param(a)), 1, 2)); }},
      {"gather", [&](Tape& t) { return weighted(t, gather_rows(tanh(t.param(a)), {3, 0, 3, 2})); }},
      {"transpose", [&](Tape& t) { return sum(mul(transpose(t.param(b)), t.constant(weights.topRows(3).transpose()))); }},
      {"element", [&](Tape& t) { return mul(element(matmul(t.param(a), t.param(b)), 2, 3), element(t.param(a), 0, 0)); }},
  };
  std::vector<Parameter*> all{&a, &b, &c, &r, &pos};
  for (const auto& [name, fn] : cases) {
    auto rep = gradient_check(all, fn);
    INFO(name << " worst at " << rep.where);
    CHECK(rep.worst <= 1e-4);
  }
}

TEST_CASE("random three-layer composite matches finite differences") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::Index batch = 2 + static_cast<Eigen::Index>(rng() % 4);
    const Eigen::Index in = 2 + static_cast<Eigen::Index>(rng() % 4);
    const Eigen::Index hidden = 3 + static_cast<Eigen::Index>(rng() % 5);
    const Eigen::Index out = 2 + static_cast<Eigen::Index>(rng() % 4);
    Parameter w1("w1", random_mat(rng, in, hidden)), b1("b1", random_mat(rng, 1, hidden));
    Parameter w2("w2", random_mat(rng, hidden, hidden)), b2("b2", random_mat(rng, 1, hidden));
    Parameter w3("w3", random_mat(rng, hidden, out));
    const Mat x = random_mat(rng, batch, in);
    const auto target = static_cast<Eigen::Index>(rng() % static_cast<unsigned>(out));
    auto net = [&](Tape& t) {
      auto h1 = relu(add(matmul(t.constant(x), t.param(w1)), t.param(b1)));
      auto h2 = tanh(add(matmul(h1, t.param(w2)), t.param(b2)));
      auto p = softmax_rows(matmul(h2, t.param(w3)));
      return scale(mean(log(slice_cols(p, target, 1))), -1.0);
    };
    auto rep = gradient_check({&w1, &b1, &w2, &b2, &w3}, net);
    INFO("trial " << trial << " worst at " << rep.where);
    CHECK(rep.worst <= 1e-4);
  }
}
