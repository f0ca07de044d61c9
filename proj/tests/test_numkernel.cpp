#include <cmath>
#include <limits>

#include "doctest.h"
#include "rrra/error.hpp"
#include "rrra/numkernel/adamw.hpp"
#include "rrra/numkernel/gradcheck.hpp"
#include "support/gradient_cases.hpp"

using namespace rrra;
using num::Var;

namespace {

num::Vector<double> vec(std::initializer_list<double> v) {
  num::Vector<double> out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("matvec examples") {
  num::Tape<double> t;
  num::Parameter<double> w("W", 2, 2);
  w.value << 1, 0, 0, 1;
  auto r = t.value(num::matvec(t, w, t.constant(vec({3, 4}))));
  CHECK(r(0) == 3);
  CHECK(r(1) == 4);
  w.value << 1, 2, 3, 4;
  r = t.value(num::matvec(t, w, t.constant(vec({1, 1}))));
  CHECK(r(0) == 3);
  CHECK(r(1) == 7);
}

TEST_CASE("matvec dimension mismatch names both shapes") {
  num::Tape<double> t;
  num::Parameter<double> w("W", 2, 3);
  try {
    num::matvec(t, w, t.constant(vec({1, 2})));
    FAIL("expected DimensionMismatch");
  } catch (const DimensionMismatch& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
  }
}

TEST_CASE("elementwise examples") {
  num::Tape<double> t;
  const auto s = t.value(num::sigmoid(t, t.constant(vec({0, 0}))));
  CHECK(s(0) == 0.5);
  CHECK(s(1) == 0.5);
  const auto m = t.value(num::mul(t, t.constant(vec({1, 2})), t.constant(vec({3, 4}))));
  CHECK(m(0) == 3);
  CHECK(m(1) == 8);
  CHECK(num::sigmoid_value(0.0f) == 0.5f);
  CHECK_THROWS_AS(num::add(t, t.constant(vec({1, 2})), t.constant(vec({1}))), DimensionMismatch);
}

TEST_CASE("dot examples") {
  num::Tape<double> t;
  CHECK(t.scalar_value(num::dot(t, t.constant(vec({1, 0})), t.constant(vec({0, 1})))) == 0);
  CHECK(t.scalar_value(num::dot(t, t.constant(vec({1, 1, 1})), t.constant(vec({1, 1, 1})))) == 3);
  CHECK_THROWS_AS(num::dot(t, t.constant(vec({1, 2})), t.constant(vec({1}))), DimensionMismatch);
}

TEST_CASE("dot gradient is the other operand") {
  num::Tape<double> t;
  num::Parameter<double> x("x", 3, 1), y("y", 3, 1);
  x.value << 1, -2, 3;
  y.value << 0.5, 4, -1;
  t.backward(num::dot(t, num::leaf(t, x), num::leaf(t, y)));
  CHECK(x.grad.col(0) == y.value.col(0));
  CHECK(y.grad.col(0) == x.value.col(0));
}

TEST_CASE("finite-difference agreement over 100 seeds for every op") {
  for (const auto& c : testing::gradient_cases()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) worst = std::max(worst, c.run(seed).max_rel_err);
    INFO(c.name << " max relative error " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("backward of a sum equals the sum of backwards, bit for bit") {
  Rng rng(7);
  num::Parameter<double> w("W", 5, 4);
  testing::fill(w, rng);
  const auto x1 = testing::random_column("x1", 4, rng).value.col(0).eval();
  const auto x2 = testing::random_column("x2", 4, rng).value.col(0).eval();
  auto loss = [&](num::Tape<double>& t, const num::Vector<double>& x) {
    return num::squared_norm(t, num::tanh(t, num::matvec(t, w, t.constant(x))));
  };
  w.zero_grad();
  {
    num::Tape<double> t;
    t.backward(num::add(t, loss(t, x1), loss(t, x2)));
  }
  const auto joint = w.grad;
  w.zero_grad();
  {
    num::Tape<double> t;
    t.backward(loss(t, x1));
  }
  {
    num::Tape<double> t;
    t.backward(loss(t, x2));
  }
  CHECK(joint == w.grad);
}

TEST_CASE("no NaN or Inf on finite inputs up to magnitude 1e3") {
  Rng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    num::Tape<float> t;
    num::Vector<float> a(6), b(6);
    for (int i = 0; i < 6; ++i) {
      a(i) = static_cast<float>(rng.uniform(-1e3, 1e3));
      b(i) = static_cast<float>(rng.uniform(-1e3, 1e3));
    }
    const Var va = t.constant(a), vb = t.constant(b);
    const Var outs[] = {num::tanh(t, va), num::sigmoid(t, va), num::relu(t, va), num::mul(t, va, vb),
                        num::add(t, va, vb), num::sub(t, va, vb), num::scale(t, va, 0.5f)};
    for (Var o : outs) CHECK(num::all_finite(t.value(o)));
    const Var s = num::stack<float>(t, std::vector<Var>{num::dot(t, va, vb)});
    const std::vector<int> y{1};
    const Var l = supervision::contrastive_bce_on_tape(t, s, y);
    CHECK(std::isfinite(t.scalar_value(l)));
  }
}

TEST_CASE("adamw: zero gradient and zero weight decay leave parameters unchanged") {
  num::Parameter<float> p("p", 3, 2);
  p.value << 1, -2, 3, 0.5f, 0, 7;
  const auto before = p.value;
  num::AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  std::vector<num::Parameter<float>*> ps{&p};
  auto st = num::make_adamw_state<float>(cfg, ps);
  for (int i = 0; i < 5; ++i) num::adamw_step<float>(st, ps);
  CHECK(p.value == before);
  CHECK(st.step == 5);
}

TEST_CASE("adamw: three-step scalar trace matches an independent scalar implementation") {
  // p0 = 0.5, grads (0.1, -0.2, 0.3), lr 0.01, betas (0.9, 0.999), eps 1e-8, wd 0.1.
  const double expected[] = {0.4895000009999999, 0.4926715360378489, 0.48874645385773646};
  num::Parameter<double> p("p", 1, 1);
  p.value(0, 0) = 0.5;
  num::AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;
  std::vector<num::Parameter<double>*> ps{&p};
  auto st = num::make_adamw_state<double>(cfg, ps);
  const double grads[] = {0.1, -0.2, 0.3};
  for (int i = 0; i < 3; ++i) {
    p.grad(0, 0) = grads[i];
    num::adamw_step<double>(st, ps);
    CHECK(p.value(0, 0) == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("adamw: warmup ramps linearly from 0 to lr") {
  num::Parameter<float> p("p", 1, 1);
  num::AdamWConfig cfg;
  cfg.lr = 0.2;
  cfg.warmup_steps = 10;
  std::vector<num::Parameter<float>*> ps{&p};
  auto st = num::make_adamw_state<float>(cfg, ps);
  CHECK(st.effective_lr() == 0.0);
  st.step = 5;
  CHECK(st.effective_lr() == doctest::Approx(0.1));
  st.step = 10;
  CHECK(st.effective_lr() == 0.2);
  st.step = 50;
  CHECK(st.effective_lr() == 0.2);
}

TEST_CASE("adamw: moment shapes follow parameters, mismatches rejected") {
  num::Parameter<float> a("a", 2, 3), b("b", 4, 1);
  std::vector<num::Parameter<float>*> ps{&a, &b};
  auto st = num::make_adamw_state<float>(num::AdamWConfig{}, ps);
  CHECK(st.first_moment[0].rows() == 2);
  CHECK(st.second_moment[1].rows() == 4);
  std::vector<num::Parameter<float>*> one{&a};
  CHECK_THROWS_AS(num::adamw_step<float>(st, one), DimensionMismatch);
}

TEST_CASE("tensor invariants") {
  num::Tensor t({2, 3}, std::vector<float>(6, 1.0f));
  CHECK(t.size() == 6);
  CHECK(t.all_finite());
  CHECK_THROWS(num::Tensor({2, 3}, std::vector<float>(5, 1.0f)));
  t.data[2] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
}
