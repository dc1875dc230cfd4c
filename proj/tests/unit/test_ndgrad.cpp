#include <catch_amalgamated.hpp>

#include <cmath>

#include "ccica/error.hpp"
#include "ccica/ndgrad/adam.hpp"
#include "ccica/ndgrad/graph.hpp"
#include "ccica/rng.hpp"
#include "oracles.hpp"
#include "random_graph.hpp"

using namespace ccica;
using namespace ccica::ndgrad;
using Catch::Approx;

TEST_CASE("forward ops on hand-checked inputs", "[ndgrad]") {
  Graph g;
  Var a = g.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  Var i2 = g.constant(Tensor::identity(2));
  CHECK(matmul(a, i2).value() == Tensor::from_rows({{1, 2}, {3, 4}}));

  Var x = g.constant(Tensor::scalar(-1.0));
  CHECK(leaky_relu(x, 0.2).value().item() == Approx(-0.2));

  Var v = g.constant(Tensor({3}, {1, 2, 3}));
  CHECK(sum(mul(v, v)).value().item() == 14.0);
}

TEST_CASE("softmax rows sum to one", "[ndgrad]") {
  Graph g;
  Var s = softmax(g.constant(Tensor::from_rows({{1, 2, 3}, {-5, 0, 5}})));
  const Tensor& t = s.value();
  for (std::size_t r = 0; r < 2; ++r) CHECK(t(r, 0) + t(r, 1) + t(r, 2) == Approx(1.0));
}

TEST_CASE("shape mismatch is a ShapeError", "[ndgrad]") {
  Graph g;
  Var a = g.constant(Tensor::matrix(2, 3));
  Var b = g.constant(Tensor::matrix(2, 3));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(add(a, g.constant(Tensor::matrix(3, 2))), ShapeError);
}

TEST_CASE("non-finite results raise NumericalError", "[ndgrad]") {
  Graph g;
  CHECK_THROWS_AS(log(g.constant(Tensor::scalar(0.0))), NumericalError);
  CHECK_THROWS_AS(exp(g.constant(Tensor::scalar(1000.0))), NumericalError);
}

TEST_CASE("scalar derivatives", "[ndgrad]") {
  {
    Graph g;
    Var x = g.leaf(Tensor::scalar(3.0));
    Var y = square(x);
    g.backward(y);
    CHECK(g.grad(x).item() == 6.0);
  }
  {
    Graph g;
    Var x = g.leaf(Tensor::scalar(-5.0));
    g.backward(leaky_relu(x, 0.2));
    CHECK(g.grad(x).item() == Approx(0.2));
  }
}

TEST_CASE("backward on a non-scalar loss is rejected", "[ndgrad]") {
  Graph g;
  Var x = g.leaf(Tensor::matrix(2, 2, 1.0));
  CHECK_THROWS_AS(g.backward(square(x)), ShapeError);
}

TEST_CASE("unused leaf gets exactly zero gradient", "[ndgrad]") {
  Graph g;
  Var x = g.leaf(Tensor::matrix(2, 2, 1.5));
  Var unused = g.leaf(Tensor::matrix(2, 2, 3.0));
  g.backward(sum(square(x)));
  for (double v : g.grad(unused).data()) CHECK(v == 0.0);
}

TEST_CASE("repeated backward passes agree", "[ndgrad]") {
  Rng rng(7);
  const auto prog = oracle::random_program(rng, OpTag::softmax);
  const auto a = oracle::evaluate(prog, prog.inputs, true);
  const auto b = oracle::evaluate(prog, prog.inputs, true);
  REQUIRE(a.grads.size() == b.grads.size());
  for (std::size_t i = 0; i < a.grads.size(); ++i) CHECK(a.grads[i] == b.grads[i]);

  Graph g;
  Var x = g.leaf(Tensor({3}, {0.5, -1.0, 2.0}));
  Var loss = sum(mul(softplus(x), x));
  g.backward(loss);
  const Tensor first = g.grad(x);
  g.backward(loss);
  CHECK(g.grad(x) == first);
}

TEST_CASE("every op matches finite differences", "[ndgrad][fd]") {
  Rng rng(11);
  for (OpTag op : oracle::all_ops()) {
    DYNAMIC_SECTION("op " << op_name(op)) {
      for (int trial = 0; trial < 5; ++trial) {
        auto prog = oracle::random_program(rng, op);
        // Central differences are undefined across a kink.
        while (oracle::evaluate(prog, prog.inputs, false).kink_distance < 1e-3) prog = oracle::random_program(rng, op);
        const auto res = oracle::check_program(prog);
        INFO("worst relative error " << res.worst_rel);
        CHECK(res.failures == 0);
      }
    }
  }
}

TEST_CASE("three-layer MLP gradients match finite differences", "[ndgrad][fd]") {
  Rng rng(3);
  std::vector<Parameter> params;
  const std::size_t dims[] = {3, 5, 4, 2};
  for (int l = 0; l < 3; ++l) {
    Tensor w = Tensor::matrix(dims[l], dims[l + 1]);
    for (auto& v : w.data()) v = rng.normal(0.0, 0.7);
    Tensor b = Tensor::matrix(1, dims[l + 1]);
    for (auto& v : b.data()) v = rng.normal(0.0, 0.3);
    params.emplace_back("w" + std::to_string(l), w);
    params.emplace_back("b" + std::to_string(l), b);
  }
  Tensor x = Tensor::matrix(6, 3);
  for (auto& v : x.data()) v = rng.normal();

  auto loss_of = [&](Graph& g) {
    Var h = g.constant(x);
    for (int l = 0; l < 3; ++l) {
      h = add(matmul(h, g.param(params[2 * l])), g.param(params[2 * l + 1]));
      if (l < 2) h = leaky_relu(h, 0.2);
    }
    return mean(square(h));
  };
  {
    Graph g;
    Var loss = loss_of(g);
    g.backward(loss);
    for (auto& p : params) p.zero_grad();
    g.accumulate_param_grads();
  }
  for (auto& p : params) {
    for (std::size_t e = 0; e < p.value.size(); ++e) {
      const double keep = p.value[e];
      p.value[e] = keep + 1e-5;
      Graph gu;
      const double up = loss_of(gu).value().item();
      p.value[e] = keep - 1e-5;
      Graph gd;
      const double down = loss_of(gd).value().item();
      p.value[e] = keep;
      CHECK(oracle::grad_close(p.grad[e], (up - down) / 2e-5));
    }
  }
}

TEST_CASE("Adam closed-form first step and convergence", "[ndgrad][adam]") {
  SECTION("zero gradient leaves parameters unchanged") {
    Parameter p("p", Tensor({3}, {1.0, -2.0, 0.5}));
    Adam adam;
    std::vector<Parameter*> ps{&p};
    adam.step(ps);
    CHECK(p.value == Tensor({3}, {1.0, -2.0, 0.5}));
  }
  SECTION("unit gradient moves by lr") {
    Parameter p("p", Tensor::scalar(1.0));
    p.grad = Tensor::scalar(1.0);
    Adam adam;
    std::vector<Parameter*> ps{&p};
    adam.step(ps);
    CHECK(p.value.item() == Approx(1.0 - 0.002 / (1.0 + 1e-8)).epsilon(1e-12));
    CHECK(adam.moments().at("p").t == 1);
  }
  SECTION("minimizes x^2") {
    Parameter p("x", Tensor::scalar(1.0));
    Adam adam;
    std::vector<Parameter*> ps{&p};
    for (int i = 0; i < 100; ++i) {
      p.grad = Tensor::scalar(2.0 * p.value.item());
      adam.step(ps);
    }
    CHECK(std::abs(p.value.item()) < 1.0);
    CHECK(adam.moments().at("x").t == 100);
    CHECK(adam.moments().at("x").m.shape() == p.value.shape());
  }
}
