#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "ccica/error.hpp"
#include "ccica/linalg.hpp"
#include "ccica/rng.hpp"

using namespace ccica;
using ccica::linalg::Tensor;
using Catch::Approx;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("SVD reconstructs the input", "[linalg]") {
  Rng rng(5);
  for (auto [r, c] : {std::pair{4, 4}, {6, 3}, {3, 5}, {1, 4}}) {
    const Tensor a = random_matrix(rng, r, c);
    const auto svd = linalg::jacobi_svd(a);
    REQUIRE(svd.singular_values.size() == static_cast<std::size_t>(std::min(r, c)));
    CHECK(std::is_sorted(svd.singular_values.rbegin(), svd.singular_values.rend()));
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < svd.singular_values.size(); ++k) s += svd.u(i, k) * svd.singular_values[k] * svd.v(j, k);
        CHECK(s == Approx(a(i, j)).margin(1e-10));
      }
    }
  }
}

TEST_CASE("singular values of a diagonal matrix", "[linalg]") {
  Tensor d = Tensor::matrix(3, 3);
  d(0, 0) = -2.0;
  d(1, 1) = 5.0;
  d(2, 2) = 0.5;
  const auto svd = linalg::jacobi_svd(d);
  CHECK(svd.singular_values[0] == Approx(5.0));
  CHECK(svd.singular_values[1] == Approx(2.0));
  CHECK(svd.singular_values[2] == Approx(0.5));
  CHECK(linalg::condition_number(d) == Approx(10.0));
}

TEST_CASE("numerical rank", "[linalg]") {
  CHECK(linalg::numerical_rank({3.0, 1.0, 1e-12}) == 2);
  CHECK(linalg::numerical_rank({0.0, 0.0}) == 0);
  Tensor rank_one = Tensor::from_rows({{1, 2, 3}, {2, 4, 6}, {-1, -2, -3}});
  CHECK(linalg::numerical_rank(linalg::jacobi_svd(rank_one).singular_values) == 1);
  CHECK(std::isinf(linalg::condition_number(rank_one)));
}

TEST_CASE("solve and inverse", "[linalg]") {
  Rng rng(9);
  const Tensor a = random_matrix(rng, 5, 5);
  std::vector<double> x{1, -2, 3, 0.5, 4};
  std::vector<double> b(5, 0.0);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) b[i] += a(i, j) * x[j];
  const auto sol = linalg::solve(a, b);
  for (int i = 0; i < 5; ++i) CHECK(sol[i] == Approx(x[i]).margin(1e-10));

  const Tensor prod = linalg::matmul(a, linalg::inverse(a));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK(prod(i, j) == Approx(i == j ? 1.0 : 0.0).margin(1e-10));

  CHECK_THROWS_AS(linalg::solve(Tensor::matrix(2, 2), {1.0, 1.0}), NumericalError);
}
