#include "ccica/gem.hpp"

#include <algorithm>
#include <cmath>

#include "ccica/error.hpp"
#include "ccica/linalg.hpp"

namespace ccica::gem {

MemoryBank::MemoryBank(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("memory capacity must be > 0");
}

void MemoryBank::reservoir_update(int u, const Tensor& batch, Rng& rng) {
  Store& s = stores_[u];
  const std::size_t width = batch.cols();
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const double* row = &batch[r * width];
    ++s.seen;
    if (s.rows.size() < capacity_) {
      s.rows.emplace_back(row, row + width);
      continue;
    }
    const std::uint64_t j = rng.below(s.seen);
    if (j < capacity_) s.rows[j].assign(row, row + width);
  }
}

std::size_t MemoryBank::size(int u) const {
  auto it = stores_.find(u);
  return it == stores_.end() ? 0 : it->second.rows.size();
}

std::size_t MemoryBank::seen(int u) const {
  auto it = stores_.find(u);
  return it == stores_.end() ? 0 : it->second.seen;
}

Tensor MemoryBank::memory(int u) const {
  auto it = stores_.find(u);
  if (it == stores_.end() || it->second.rows.empty()) throw ConfigError("memory for domain " + std::to_string(u) + " is empty");
  const auto& rows = it->second.rows;
  const std::size_t w = rows.front().size();
  Tensor t = Tensor::matrix(rows.size(), w);
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), &t[r * w]);
  return t;
}

std::vector<int> MemoryBank::domains() const {
  std::vector<int> out;
  for (const auto& [u, s] : stores_) out.push_back(u);
  return out;
}

std::vector<std::vector<double>> past_gradients(const MemoryBank& bank, std::span<const int> past_domains,
                                                const MemoryGradFn& grad_fn) {
  std::vector<std::vector<double>> rows;
  rows.reserve(past_domains.size());
  for (int u : past_domains) rows.push_back(grad_fn(u, bank.memory(u)));
  return rows;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 1.0;
  return ab / std::sqrt(aa * bb);
}

namespace {

struct Dual {
  Tensor gram;            // k x k
  std::vector<double> c;  // B v - margin
  double scale = 1.0;

  double objective(const std::vector<double>& w) const {
    const std::size_t k = c.size();
    double f = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double gi = 0.0;
      for (std::size_t j = 0; j < k; ++j) gi += gram(i, j) * w[j];
      f += w[i] * (0.5 * gi + c[i]);
    }
    return f;
  }

  std::vector<double> gradient(const std::vector<double>& w) const {
    const std::size_t k = c.size();
    std::vector<double> g(c);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) g[i] += gram(i, j) * w[j];
    return g;
  }

  // Natural residual ||min(w, grad)||_inf, relative to the problem scale.
  double kkt_residual(const std::vector<double>& w) const {
    const auto g = gradient(w);
    double r = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) r = std::max(r, std::abs(std::min(w[i], g[i])));
    return r / scale;
  }

  // Lawson-Hanson active set on the Gram form of the dual (the dual is the
  // non-negative least-squares problem min ||B^T w + v||^2). Terminates with
  // an exact solution of the KKT system; returns false when a passive-set
  // system is singular.
  bool active_set(std::vector<double>& w, std::size_t& iterations) const {
    const std::size_t k = c.size();
    const double tol = 1e-13 * scale;
    std::vector<bool> passive(k, false);
    w.assign(k, 0.0);
    for (std::size_t outer = 0; outer < 3 * k + 3; ++outer) {
      const auto g = gradient(w);
      std::size_t enter = k;
      double most = -tol;
      for (std::size_t i = 0; i < k; ++i) {
        if (!passive[i] && g[i] < most) {
          most = g[i];
          enter = i;
        }
      }
      if (enter == k) return true;
      passive[enter] = true;
      for (std::size_t inner = 0; inner < k + 1; ++inner) {
        ++iterations;
        std::vector<std::size_t> p;
        for (std::size_t i = 0; i < k; ++i)
          if (passive[i]) p.push_back(i);
        Tensor sub = Tensor::matrix(p.size(), p.size());
        std::vector<double> rhs(p.size());
        for (std::size_t a = 0; a < p.size(); ++a) {
          rhs[a] = -c[p[a]];
          for (std::size_t b = 0; b < p.size(); ++b) sub(a, b) = gram(p[a], p[b]);
        }
        std::vector<double> sol;
        try {
          sol = linalg::solve(sub, rhs);
        } catch (const NumericalError&) {
          return false;
        }
        bool positive = true;
        for (double x : sol) positive = positive && x > 0.0;
        if (positive) {
          std::fill(w.begin(), w.end(), 0.0);
          for (std::size_t a = 0; a < p.size(); ++a) w[p[a]] = sol[a];
          break;
        }
        // Step towards the unconstrained solution until a multiplier hits zero.
        double alpha = 1.0;
        for (std::size_t a = 0; a < p.size(); ++a)
          if (sol[a] <= 0.0) alpha = std::min(alpha, w[p[a]] / (w[p[a]] - sol[a]));
        for (std::size_t a = 0; a < p.size(); ++a) {
          w[p[a]] += alpha * (sol[a] - w[p[a]]);
          if (w[p[a]] <= 1e-15 * scale) {
            w[p[a]] = 0.0;
            passive[p[a]] = false;
          }
        }
      }
    }
    return kkt_residual(w) <= 1e-12;
  }

  // Exact solve on the support suggested by the current iterate.
  bool polish(std::vector<double>& w) const {
    const auto g = gradient(w);
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (w[i] > 0.0 || g[i] < 0.0) support.push_back(i);
    if (support.empty()) return false;
    const std::size_t s = support.size();
    Tensor sub = Tensor::matrix(s, s);
    std::vector<double> rhs(s);
    for (std::size_t a = 0; a < s; ++a) {
      rhs[a] = -c[support[a]];
      for (std::size_t b = 0; b < s; ++b) sub(a, b) = gram(support[a], support[b]);
    }
    std::vector<double> ws;
    try {
      ws = linalg::solve(sub, rhs);
    } catch (const NumericalError&) {
      return false;
    }
    std::vector<double> cand(w.size(), 0.0);
    for (std::size_t a = 0; a < s; ++a) {
      if (!(ws[a] >= 0.0) || !std::isfinite(ws[a])) return false;
      cand[support[a]] = ws[a];
    }
    if (kkt_residual(cand) > kkt_residual(w)) return false;
    w = std::move(cand);
    return true;
  }
};

}  // namespace

Projection project(std::span<const double> v, const std::vector<std::vector<double>>& rows, const ProjectOptions& opts) {
  Projection out;
  const std::size_t k = rows.size();
  const std::size_t dim = v.size();
  for (const auto& r : rows) {
    if (r.size() != dim) {
      throw ShapeError("project: constraint row has " + std::to_string(r.size()) + " entries, gradient has " +
                       std::to_string(dim));
    }
  }

  Dual dual;
  dual.c.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += rows[i][j] * v[j];
    dual.c[i] = s - opts.margin;
    if (dual.c[i] < 0.0) ++out.violated;
  }
  if (out.violated == 0) {
    out.v.assign(v.begin(), v.end());
    out.multipliers.assign(k, 0.0);
    return out;
  }
  out.projected = true;

  dual.gram = Tensor::matrix(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < dim; ++t) s += rows[i][t] * rows[j][t];
      dual.gram(i, j) = s;
      dual.gram(j, i) = s;
    }
  }
  double cmax = 0.0, trace = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    cmax = std::max(cmax, std::abs(dual.c[i]));
    trace += dual.gram(i, i);
  }
  dual.scale = std::max(1.0, cmax);

  std::vector<double> w(k, 0.0);
  std::size_t it = 0;
  double residual = 0.0;
  if (dual.active_set(w, it)) {
    residual = dual.kkt_residual(w);
  } else {
    // Degenerate Gram matrix: projected gradient descent with backtracking.
    w.assign(k, 0.0);
    double step = trace > 0.0 ? 1.0 / trace : 1.0;
    double f = dual.objective(w);
    residual = dual.kkt_residual(w);
    while (residual > opts.kkt_tol && it < opts.max_iterations) {
      ++it;
      const auto g = dual.gradient(w);
      std::vector<double> next(k);
      double fn = 0.0;
      for (int bt = 0; bt < 60; ++bt) {
        double lin = 0.0, quad = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          next[i] = std::max(0.0, w[i] - step * g[i]);
          const double d = next[i] - w[i];
          lin += g[i] * d;
          quad += d * d;
        }
        fn = dual.objective(next);
        if (fn <= f + lin + 0.5 * quad / step + 1e-15 * std::abs(f)) break;
        step *= 0.5;
      }
      w = std::move(next);
      f = fn;
      step *= 1.5;
      if (it % 25 == 0 || it < 5) {
        dual.polish(w);
        f = dual.objective(w);
      }
      residual = dual.kkt_residual(w);
    }
    if (residual > opts.kkt_tol) {
      dual.polish(w);
      residual = dual.kkt_residual(w);
    }
  }
  if (residual > opts.kkt_tol) {
    throw QpError("GEM dual solver did not converge after " + std::to_string(it) +
                      " iterations (scaled KKT residual " + std::to_string(residual) + ")",
                  residual);
  }

  out.v.assign(v.begin(), v.end());
  for (std::size_t i = 0; i < k; ++i) {
    if (w[i] == 0.0) continue;
    for (std::size_t t = 0; t < dim; ++t) out.v[t] += rows[i][t] * w[i];
  }
  out.multipliers = std::move(w);
  out.kkt_residual = residual;
  out.iterations = it;
  return out;
}

}  // namespace ccica::gem
