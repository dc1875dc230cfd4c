#include <catch_amalgamated.hpp>

#include <cmath>

#include "ccica/elbo.hpp"
#include "ccica/error.hpp"
#include "oracles.hpp"

using namespace ccica;
using namespace ccica::elbo;
using Catch::Approx;

namespace {

nets::ModelConfig small_config() {
  nets::ModelConfig cfg;
  cfg.hidden = 8;
  cfg.hidden_blocks = 2;
  return cfg;
}

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

}  // namespace

TEST_CASE("reconstruction loss", "[elbo]") {
  Graph g;
  Var x = g.constant(Tensor::from_rows({{0.5, -1.0}, {2.0, 3.0}}));
  CHECK(recon_loss(x, x).value().item() == 0.0);

  Var a = g.constant(Tensor::from_rows({{0.0, 0.0}}));
  Var b = g.leaf(Tensor::from_rows({{1.0, 1.0}}));
  CHECK(recon_loss(a, b).value().item() == 1.0);

  Graph h;
  Var xt = h.constant(Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}}));
  Var xh = h.leaf(Tensor::from_rows({{1.5, 2.0}, {2.0, 5.0}}));
  h.backward(recon_loss(xt, xh));
  const Tensor expect = Tensor::from_rows({{0.25, 0.0}, {-0.5, 0.5}});
  for (std::size_t i = 0; i < 4; ++i) CHECK(h.grad(xh)[i] == Approx(expect[i]));

  CHECK_THROWS_AS(recon_loss(a, x), ShapeError);
}

TEST_CASE("Gaussian KL closed forms", "[elbo]") {
  Graph g;
  auto kl = [&](double m, double lv) {
    return kl_gaussian(g.constant(Tensor::from_rows({{m}})), g.constant(Tensor::from_rows({{lv}}))).value().item();
  };
  CHECK(kl(0.0, 0.0) == 0.0);
  CHECK(kl(1.0, 0.0) == Approx(0.5));
  CHECK(kl(0.0, std::log(4.0)) == Approx(0.5 * (4.0 - 1.0 - std::log(4.0))));
  CHECK(kl(0.0, std::log(4.0)) == Approx(0.806852).margin(1e-6));

  Rng rng(2);
  for (int i = 0; i < 1000; ++i) CHECK(kl(rng.normal(0.0, 2.0), rng.normal(0.0, 2.0)) > 0.0);
}

TEST_CASE("identity-flow changing KL is an unbiased estimate of the Gaussian KL", "[elbo]") {
  nets::FlowBank bank(small_config());
  bank.ensure(0);
  Rng rng(5);
  const std::size_t n = 100000;
  for (int trial = 0; trial < 4; ++trial) {
    Tensor mean = Tensor::matrix(n, 2), logvar = Tensor::matrix(n, 2);
    const double m0 = trial == 0 ? 0.0 : rng.uniform(-1.0, 1.0);
    const double m1 = trial == 0 ? 0.0 : rng.uniform(-1.0, 1.0);
    const double l0 = trial == 0 ? 0.0 : rng.uniform(-1.0, 0.5);
    const double l1 = trial == 0 ? 0.0 : rng.uniform(-1.0, 0.5);
    for (std::size_t r = 0; r < n; ++r) {
      mean(r, 0) = m0;
      mean(r, 1) = m1;
      logvar(r, 0) = l0;
      logvar(r, 1) = l1;
    }
    Graph g;
    Var mv = g.constant(mean), lv = g.constant(logvar);
    Tensor eps = random_matrix(rng, n, 2);
    Var z = nets::reparameterize_with(g, mv, lv, eps);
    const double mc = kl_changing(g, mv, lv, z, eps, bank, 0).value().item();
    const double exact = kl_gaussian(mv, lv).value().item();
    INFO("trial " << trial << " mc " << mc << " exact " << exact);
    CHECK(std::abs(mc - exact) < 0.02);
  }
}

TEST_CASE("changing KL reaches the flow parameters", "[elbo]") {
  nets::FlowBank bank(small_config());
  bank.ensure(0);
  Rng rng(8);
  for (auto& v : bank.params(0).heights.value.data()) v = rng.normal();
  Graph g;
  Tensor eps = random_matrix(rng, 64, 2);
  Var mv = g.leaf(random_matrix(rng, 64, 2));
  Var lv = g.leaf(Tensor::matrix(64, 2, -0.5));
  Var z = nets::reparameterize_with(g, mv, lv, eps);
  Var kl = kl_changing(g, mv, lv, z, eps, bank, 0);
  for (auto* p : bank.parameters()) p->zero_grad();
  g.backward(kl);
  g.accumulate_param_grads();
  double norm = 0.0;
  for (auto* p : bank.parameters())
    for (double v : p->grad.data()) norm += v * v;
  CHECK(norm > 0.0);
}

TEST_CASE("total loss is the weighted sum of its terms", "[elbo]") {
  nets::Model model(small_config());
  Rng rng(1);
  model.init(rng);
  model.flows().ensure(0);
  const Tensor x = random_matrix(rng, 32, 4);
  CHECK(Weights{}.alpha == 0.1);
  CHECK(Weights{}.beta == 0.1);
  for (Weights w : {Weights{}, Weights{0.5, 2.0}, Weights{0.0, 1.0}}) {
    Graph g;
    const auto out = total_loss(g, x, 0, model, w, rng);
    CHECK(out.values.total == (out.values.recon + w.alpha * out.values.kl_c) + w.beta * out.values.kl_s);
    CHECK(out.values.total == Approx(out.values.recon + w.alpha * out.values.kl_c + w.beta * out.values.kl_s));
  }
  Graph g;
  CHECK_THROWS_AS(total_loss(g, x, 7, model, {}, rng), ConfigError);
}

TEST_CASE("total loss gradient over every parameter group", "[elbo][fd]") {
  nets::Model model(small_config());
  Rng rng(14);
  model.init(rng);
  model.flows().ensure(0);
  for (auto& v : model.flows().params(0).widths.value.data()) v = rng.normal();
  const Tensor x = random_matrix(rng, 6, 4);
  auto eval = [&](Graph& g) {
    Rng noise(99);  // identical reparameterization noise on every probe
    return total_loss(g, x, 0, model, {}, noise);
  };
  {
    Graph g;
    auto out = eval(g);
    model.zero_grad();
    g.backward(out.total);
    g.accumulate_param_grads();
  }
  for (ndgrad::Parameter* p : model.parameters()) {
    for (std::size_t e = 0; e < p->value.size(); e += 4) {
      const double keep = p->value[e];
      p->value[e] = keep + 1e-5;
      Graph gu;
      const double up = eval(gu).values.total;
      p->value[e] = keep - 1e-5;
      Graph gd;
      const double down = eval(gd).values.total;
      p->value[e] = keep;
      INFO(p->name << "[" << e << "]");
      CHECK(oracle::grad_close(p->grad[e], (up - down) / 2e-5));
    }
  }
}

TEST_CASE("mixed batches route each row through its own flow", "[elbo]") {
  nets::Model model(small_config());
  Rng rng(2);
  model.init(rng);
  for (int u : {0, 1, 2}) {
    model.flows().ensure(u);
    for (auto& v : model.flows().params(u).heights.value.data()) v = rng.normal();
  }
  const Tensor x = random_matrix(rng, 30, 4);
  std::vector<int> labels(30);
  for (std::size_t r = 0; r < 30; ++r) labels[r] = static_cast<int>(rng.below(3));

  Rng a(5), b(5);
  Graph g;
  const auto mixed = total_loss_mixed(g, x, labels, model, {}, a);
  double expect = 0.0;
  for (int u : {0, 1, 2}) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < 30; ++r)
      if (labels[r] == u) rows.push_back(r);
    if (rows.empty()) continue;
    Tensor sub = Tensor::matrix(rows.size(), 4);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < 4; ++c) sub(i, c) = x(rows[i], c);
    Graph h;
    expect += total_loss(h, sub, u, model, {}, b).values.total * static_cast<double>(rows.size()) / 30.0;
  }
  CHECK(mixed.values.total == Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(total_loss_mixed(g, x, {0, 1}, model, {}, a), ShapeError);
}
