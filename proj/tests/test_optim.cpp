#include <cmath>

#include "doctest.h"
#include "ubalab/optim.hpp"
#include "ubalab/tape.hpp"

using namespace uba;

TEST_CASE("sgd step matches the momentum recurrence by hand") {
  // v <- m*v + (g + wd*p); p <- p - lr*v, two steps, scalar parameter.
  Tensor p({1}, {1.0f});
  p.grad = {0.5f};
  SgdOptimizer opt(0.1, 0.9, 0.01);

  // step 1: g_eff = 0.5 + 0.01*1.0 = 0.51; v = 0.51; p = 1 - 0.051 = 0.949
  opt.step({&p});
  CHECK(p.data[0] == doctest::Approx(0.949).epsilon(1e-6));
  CHECK(opt.velocity(0)[0] == doctest::Approx(0.51).epsilon(1e-6));

  // step 2: g_eff = 0.2 + 0.01*0.949 = 0.20949; v = 0.9*0.51 + 0.20949 = 0.66849
  // p = 0.949 - 0.066849 = 0.882151
  p.grad = {0.2f};
  opt.step({&p});
  CHECK(p.data[0] == doctest::Approx(0.882151).epsilon(1e-6));
  CHECK(opt.velocity(0)[0] == doctest::Approx(0.66849).epsilon(1e-6));
}

TEST_CASE("zero momentum and zero decay reduce to vanilla sgd") {
  Tensor p({2}, {1.0f, -2.0f});
  p.grad = {1.0f, -1.0f};
  SgdOptimizer opt(0.5, 0.0, 0.0);
  opt.step({&p});
  CHECK(p.data[0] == doctest::Approx(0.5));
  CHECK(p.data[1] == doctest::Approx(-1.5));
}

TEST_CASE("sgd with momentum descends a quadratic faster than plain sgd") {
  // f(p) = 0.5*||p||^2, grad = p. Both start at the same point.
  auto run = [](double momentum) {
    Tensor p({4}, {2.0f, -3.0f, 1.5f, -0.5f});
    SgdOptimizer opt(0.05, momentum, 0.0);
    for (int i = 0; i < 40; ++i) {
      p.grad.assign(p.data.begin(), p.data.end());
      opt.step({&p});
    }
    double s = 0;
    for (float v : p.data) s += v * v;
    return s;
  };
  CHECK(run(0.9) < run(0.0));
}

TEST_CASE("optimizer drives a least-squares problem to the solution") {
  // minimize ||x*w - y||^2 over w, a convex problem with known optimum.
  Tensor x({4, 2}, {1, 0, 0, 1, 1, 1, 2, -1});
  Tensor ytrue({4, 1}, {3, -2, 1, 8});  // w* = [3, -2]
  Tensor w = Tensor::zeros({2, 1});
  SgdOptimizer opt(0.05, 0.9, 0.0);
  double loss = 0;
  for (int i = 0; i < 300; ++i) {
    Tape tape;
    auto wid = tape.leaf(w, true);
    auto pred = tape.matmul(tape.leaf(x), wid);
    auto l = tape.mse(pred, tape.leaf(ytrue));
    tape.backward(l);
    tape.write_grad(wid, w);
    opt.step({&w});
    loss = tape.scalar(l);
  }
  CHECK(loss < 1e-6);
  CHECK(w.data[0] == doctest::Approx(3.0).epsilon(1e-2));
  CHECK(w.data[1] == doctest::Approx(-2.0).epsilon(1e-2));
}

TEST_CASE("optimizer validates its inputs") {
  CHECK_THROWS_AS(SgdOptimizer(0.0), std::invalid_argument);
  CHECK_THROWS_AS(SgdOptimizer(0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(SgdOptimizer(0.1, 0.9, -1.0), std::invalid_argument);
  Tensor p({2}, {1.0f, 2.0f});
  SgdOptimizer opt(0.1);
  CHECK_THROWS_AS(opt.step({&p}), ShapeError);  // no gradient
}

TEST_CASE("velocity buffers match parameter shapes") {
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({5});
  a.ensure_grad();
  b.ensure_grad();
  SgdOptimizer opt(0.1);
  opt.step({&a, &b});
  CHECK(opt.velocity(0).size() == 12);
  CHECK(opt.velocity(1).size() == 5);
}
