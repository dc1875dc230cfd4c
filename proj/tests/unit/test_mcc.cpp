#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "ccica/assignment.hpp"
#include "ccica/error.hpp"
#include "ccica/mcc.hpp"
#include "ccica/rng.hpp"
#include "oracles.hpp"

using namespace ccica;
using namespace ccica::mcc;
using Catch::Approx;

namespace {

Tensor gaussian(Rng& rng, std::size_t n, std::size_t d) {
  Tensor t = Tensor::matrix(n, d);
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

template <typename F>
Tensor map(const Tensor& t, F f) {
  Tensor out = t;
  for (auto& v : out.data()) v = f(v);
  return out;
}

std::vector<double> column(const Tensor& t, std::size_t c) {
  std::vector<double> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out[r] = t(r, c);
  return out;
}

}  // namespace

TEST_CASE("Pearson correlation", "[mcc]") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  std::vector<double> neg(a.rbegin(), a.rend());
  CHECK(pearson(a, a) == Approx(1.0));
  CHECK(pearson(a, neg) == Approx(-1.0));
  CHECK(pearson_abs(a, neg) == Approx(1.0));
  CHECK_THROWS_AS(pearson(a, std::vector<double>(5, 2.0)), NumericalError);

  Rng rng(1);
  std::vector<double> x(100000), y(100000);
  for (auto& v : x) v = rng.normal();
  for (auto& v : y) v = rng.normal();
  CHECK(pearson_abs(x, y) < 0.02);
}

TEST_CASE("assignment on structured tables", "[mcc][assignment]") {
  Tensor id = Tensor::identity(4);
  for (auto& v : id.data()) v += 0.1;
  CHECK(assign_max(id) == std::vector<std::size_t>{0, 1, 2, 3});

  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor p = Tensor::matrix(4, 4, 0.05);
  for (std::size_t i = 0; i < 4; ++i) p(i, perm[i]) = 0.9;
  CHECK(assign_max(p) == perm);
  CHECK(assign(p) == perm);
}

TEST_CASE("assignment matches brute force", "[mcc][assignment]") {
  Rng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    Tensor s = Tensor::matrix(n, n);
    for (auto& v : s.data()) v = rng.uniform();
    const auto got = assign_max(s);
    const auto ref = oracle::brute_force_assignment(s);
    std::vector<std::size_t> sorted = got;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(n);
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(sorted == iota);
    CHECK(oracle::assignment_value(s, got) == Approx(oracle::assignment_value(s, ref)).epsilon(1e-12));

    Tensor cost = s;
    for (auto& v : cost.data()) v = -v;
    CHECK(oracle::assignment_value(s, assign_min(cost)) == Approx(oracle::assignment_value(s, ref)).epsilon(1e-12));
  }
}

TEST_CASE("regressor gradient matches finite differences", "[mcc][regressor][fd]") {
  Rng rng(5);
  ScalarMlp net;
  net.hidden = 7;
  net.theta.resize(3 * 7 + 1);
  for (auto& v : net.theta) v = rng.normal();
  std::vector<double> x(40), y(40);
  for (auto& v : x) v = rng.normal();
  for (auto& v : y) v = rng.normal();
  std::vector<std::size_t> idx{0, 3, 5, 8, 13, 21, 34};
  std::vector<double> grad, scratch;
  net.loss_and_gradient(x, y, idx, grad);
  const auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& th) {
        ScalarMlp probe = net;
        probe.theta = th;
        return probe.loss_and_gradient(x, y, idx, scratch);
      },
      net.theta);
  for (std::size_t i = 0; i < grad.size(); ++i) CHECK(oracle::grad_close(grad[i], fd[i]));
}

TEST_CASE("nonlinearity removal", "[mcc][regressor]") {
  Rng rng(3);
  std::vector<double> z(10000), cubed(10000), noise(10000);
  for (auto& v : z) v = rng.normal();
  for (std::size_t i = 0; i < z.size(); ++i) cubed[i] = z[i] * z[i] * z[i];
  for (auto& v : noise) v = rng.normal();

  const auto fit = remove_nonlinearity(cubed, z, 7);
  CHECK(fit.raw == Approx(3.0 / std::sqrt(15.0)).margin(0.03));
  CHECK(fit.corr >= 0.98);
  CHECK_FALSE(fit.diverged);
  CHECK(fit.train_size == 5000);
  CHECK(fit.test_size == 5000);

  CHECK(remove_nonlinearity(noise, z, 7).corr < 0.1);
  CHECK(remove_nonlinearity(z, z, 7).corr >= 0.999);
  CHECK_THROWS_AS(remove_nonlinearity(std::vector<double>(10, 1.0), std::vector<double>(10, 1.0), 1), ConfigError);
}

TEST_CASE("MCC end to end", "[mcc]") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    const Tensor z = gaussian(rng, 10000, 2);
    CHECK(mcc::mcc(z, z, seed).mcc >= 0.999);

    Tensor warped = Tensor::matrix(10000, 2);
    for (std::size_t r = 0; r < 10000; ++r) {
      warped(r, 0) = std::pow(z(r, 1), 3);
      warped(r, 1) = std::pow(z(r, 0), 3);
    }
    const auto rep = mcc::mcc(warped, z, seed);
    CHECK(rep.mcc >= 0.98);
    CHECK(rep.assignment == std::vector<std::size_t>{1, 0});

    CHECK(mcc::mcc(gaussian(rng, 10000, 2), z, seed).mcc < 0.15);
  }
}

TEST_CASE("MCC invariances", "[mcc]") {
  Rng rng(9);
  const Tensor z = gaussian(rng, 10000, 3);
  // A partially informative estimate, so the score is away from 1.
  Tensor est = Tensor::matrix(10000, 3);
  for (std::size_t r = 0; r < 10000; ++r)
    for (std::size_t c = 0; c < 3; ++c) est(r, c) = z(r, c) + 0.8 * rng.normal();
  const double base = mcc::mcc(est, z, 4).mcc;

  Tensor permuted = Tensor::matrix(10000, 3);
  for (std::size_t r = 0; r < 10000; ++r) {
    permuted(r, 0) = -est(r, 2);
    permuted(r, 1) = est(r, 0);
    permuted(r, 2) = -est(r, 1);
  }
  CHECK(std::abs(mcc::mcc(permuted, z, 4).mcc - base) < 0.005);

  const Tensor cubed = map(est, [](double v) { return v * v * v; });
  CHECK(std::abs(mcc::mcc(cubed, z, 4).mcc - base) < 0.01);
  // atanh of a squashed copy: strictly monotone, kept inside the domain.
  const Tensor warped = map(est, [](double v) { return std::atanh(0.95 * std::tanh(v / 3.0)); });
  CHECK(std::abs(mcc::mcc(warped, z, 4).mcc - base) < 0.01);
}

TEST_CASE("correlation table layout", "[mcc]") {
  Rng rng(2);
  const Tensor z = gaussian(rng, 500, 2);
  Tensor est = Tensor::matrix(500, 2);
  for (std::size_t r = 0; r < 500; ++r) {
    est(r, 0) = z(r, 1);
    est(r, 1) = rng.normal();
  }
  const Tensor t = corr_table(est, z);
  CHECK(t(1, 0) == Approx(1.0));
  CHECK(t(0, 0) == Approx(pearson_abs(column(z, 0), column(est, 0))));
  CHECK_THROWS_AS(corr_table(Tensor::matrix(3, 2), Tensor::matrix(4, 2)), ShapeError);
}
