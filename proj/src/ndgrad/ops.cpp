#include <algorithm>
#include <cmath>

#include "ccica/error.hpp"
#include "ccica/ndgrad/graph.hpp"

namespace ccica::ndgrad {
namespace {

Graph& graph_of(Var a) {
  if (!a.graph()) throw std::logic_error("Var is not attached to a graph");
  return *a.graph();
}

Graph& graph_of(Var a, Var b) {
  if (a.graph() != b.graph()) throw std::logic_error("operands live on different graphs");
  return graph_of(a);
}

struct View2 {
  std::size_t rows;
  std::size_t cols;
};

View2 view2(const Tensor& t, std::string_view op) {
  switch (t.rank()) {
    case 0: return {1, 1};
    case 1: return {1, t.shape()[0]};
    case 2: return {t.shape()[0], t.shape()[1]};
    default:
      throw ShapeError(std::string(op) + ": rank " + std::to_string(t.rank()) + " operands are not supported");
  }
}

struct Broadcast {
  View2 a, b;
  std::size_t rows, cols;
  Shape out;

  std::size_t ia(std::size_t r, std::size_t c) const {
    return (a.rows == 1 ? 0 : r) * a.cols + (a.cols == 1 ? 0 : c);
  }
  std::size_t ib(std::size_t r, std::size_t c) const {
    return (b.rows == 1 ? 0 : r) * b.cols + (b.cols == 1 ? 0 : c);
  }
};

Broadcast broadcast(const Tensor& x, const Tensor& y, std::string_view op) {
  Broadcast bc{view2(x, op), view2(y, op), 0, 0, {}};
  auto join = [&](std::size_t p, std::size_t q) -> std::size_t {
    if (p == q || q == 1) return p;
    if (p == 1) return q;
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(x.shape()) + " with " +
                     shape_string(y.shape()));
  };
  bc.rows = join(bc.a.rows, bc.b.rows);
  bc.cols = join(bc.a.cols, bc.b.cols);
  if (x.size() == bc.rows * bc.cols && x.rank() >= y.rank()) {
    bc.out = x.shape();
  } else if (y.size() == bc.rows * bc.cols && y.rank() >= x.rank()) {
    bc.out = y.shape();
  } else {
    bc.out = Shape{bc.rows, bc.cols};
  }
  return bc;
}

// Elementwise binary op with broadcasting. `da`/`db` give the local partials.
template <typename F, typename DA, typename DB>
Var binary(OpTag tag, Var a, Var b, F f, DA da, DB db) {
  Graph& g = graph_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast bc = broadcast(x, y, op_name(tag));
  Tensor out(bc.out);
  for (std::size_t r = 0; r < bc.rows; ++r) {
    for (std::size_t c = 0; c < bc.cols; ++c) {
      out[r * bc.cols + c] = f(x[bc.ia(r, c)], y[bc.ib(r, c)]);
    }
  }
  const std::size_t ida = a.id(), idb = b.id();
  return g.record(tag, {ida, idb}, std::move(out), [ida, idb, bc, da, db](Graph& gr, std::size_t self) {
    const Tensor& adj = gr.node(self).adjoint;
    const Tensor& xv = gr.node(ida).value;
    const Tensor& yv = gr.node(idb).value;
    Tensor* ga = gr.adjoint_if_needed(ida);
    Tensor* gb = gr.adjoint_if_needed(idb);
    for (std::size_t r = 0; r < bc.rows; ++r) {
      for (std::size_t c = 0; c < bc.cols; ++c) {
        const std::size_t k = r * bc.cols + c;
        const double xa = xv[bc.ia(r, c)], yb = yv[bc.ib(r, c)];
        if (ga) (*ga)[bc.ia(r, c)] += adj[k] * da(xa, yb);
        if (gb) (*gb)[bc.ib(r, c)] += adj[k] * db(xa, yb);
      }
    }
  });
}

// Elementwise unary op; `d(x, y)` is the local derivative given input and output.
template <typename F, typename D>
Var unary(OpTag tag, Var a, F f, D d) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = f(x[k]);
  const std::size_t ida = a.id();
  return g.record(tag, {ida}, std::move(out), [ida, d](Graph& gr, std::size_t self) {
    Tensor* ga = gr.adjoint_if_needed(ida);
    if (!ga) return;
    const Tensor& adj = gr.node(self).adjoint;
    const Tensor& xv = gr.node(ida).value;
    const Tensor& yv = gr.node(self).value;
    for (std::size_t k = 0; k < xv.size(); ++k) (*ga)[k] += adj[k] * d(xv[k], yv[k]);
  });
}

double softplus_value(double x) {
  // log(1 + e^x) without overflow.
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      OpTag::add, a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      OpTag::sub, a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      OpTag::mul, a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(Var a, double factor) {
  return unary(
      OpTag::scale, a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(
      OpTag::add_scalar, a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[0]) {
    throw ShapeError("matmul: shapes " + shape_string(x.shape()) + " and " + shape_string(y.shape()) +
                     " do not conform");
  }
  const std::size_t m = x.shape()[0], k = x.shape()[1], n = y.shape()[1];
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* yrow = &y[p * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
    }
  }
  const std::size_t ida = a.id(), idb = b.id();
  return g.record(OpTag::matmul, {ida, idb}, std::move(out), [ida, idb, m, k, n](Graph& gr, std::size_t self) {
    const Tensor& adj = gr.node(self).adjoint;
    const Tensor& xv = gr.node(ida).value;
    const Tensor& yv = gr.node(idb).value;
    // dA = dC B^T
    if (Tensor* ga = gr.adjoint_if_needed(ida)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &adj[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double* yrow = &yv[p * n];
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += arow[j] * yrow[j];
          (*ga)[i * k + p] += acc;
        }
      }
    }
    // dB = A^T dC
    if (Tensor* gb = gr.adjoint_if_needed(idb)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &adj[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double xval = xv[i * k + p];
          double* grow = &(*gb)[p * n];
          for (std::size_t j = 0; j < n; ++j) grow[j] += xval * arow[j];
        }
      }
    }
  });
}

Var leaky_relu(Var a, double slope) {
  // Subgradient at 0 is the positive-side slope.
  return unary(
      OpTag::leaky_relu, a, [slope](double x) { return x >= 0 ? x : slope * x; },
      [slope](double x, double) { return x >= 0 ? 1.0 : slope; });
}

Var exp(Var a) {
  return unary(
      OpTag::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      OpTag::log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(
      OpTag::square, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softplus(Var a) {
  return unary(OpTag::softplus, a, softplus_value, [](double x, double) { return sigmoid(x); });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      OpTag::clamp, a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ida = a.id();
  return g.record(OpTag::sum, {ida}, Tensor::scalar(s), [ida](Graph& gr, std::size_t self) {
    Tensor* ga = gr.adjoint_if_needed(ida);
    if (!ga) return;
    const double d = gr.node(self).adjoint[0];
    for (auto& v : ga->data()) v += d;
  });
}

Var mean(Var a) {
  Graph& g = graph_of(a);
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ida = a.id();
  return g.record(OpTag::mean, {ida}, Tensor::scalar(s / static_cast<double>(n)),
                  [ida, n](Graph& gr, std::size_t self) {
                    Tensor* ga = gr.adjoint_if_needed(ida);
                    if (!ga) return;
                    const double d = gr.node(self).adjoint[0] / static_cast<double>(n);
                    for (auto& v : ga->data()) v += d;
                  });
}

Var row_sum(Var a) {
  Graph& g = graph_of(a);
  const View2 v = view2(a.value(), "row_sum");
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(v.rows, 1);
  for (std::size_t r = 0; r < v.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < v.cols; ++c) s += x[r * v.cols + c];
    out[r] = s;
  }
  const std::size_t ida = a.id();
  return g.record(OpTag::row_sum, {ida}, std::move(out), [ida, v](Graph& gr, std::size_t self) {
    Tensor* ga = gr.adjoint_if_needed(ida);
    if (!ga) return;
    const Tensor& adj = gr.node(self).adjoint;
    for (std::size_t r = 0; r < v.rows; ++r)
      for (std::size_t c = 0; c < v.cols; ++c) (*ga)[r * v.cols + c] += adj[r];
  });
}

Var reshape(Var a, Shape shape) {
  Graph& g = graph_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ida = a.id();
  return g.record(OpTag::reshape, {ida}, std::move(out), [ida](Graph& gr, std::size_t self) {
    Tensor* ga = gr.adjoint_if_needed(ida);
    if (!ga) return;
    const Tensor& adj = gr.node(self).adjoint;
    for (std::size_t k = 0; k < adj.size(); ++k) (*ga)[k] += adj[k];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  if (x.rank() != 2) throw ShapeError("slice_cols needs a rank-2 tensor, got " + shape_string(x.shape()));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (begin > end || end > n) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + std::to_string(n) + " columns");
  }
  const std::size_t w = end - begin;
  Tensor out = Tensor::matrix(m, w);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x[r * n + begin + c];
  const std::size_t ida = a.id();
  return g.record(OpTag::slice_cols, {ida}, std::move(out), [ida, m, n, w, begin](Graph& gr, std::size_t self) {
    Tensor* ga = gr.adjoint_if_needed(ida);
    if (!ga) return;
    const Tensor& adj = gr.node(self).adjoint;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c) (*ga)[r * n + begin + c] += adj[r * w + c];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
  Graph& g = graph_of(parts.front());
  std::size_t m = 0, n = 0;
  std::vector<std::size_t> widths, ids;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    graph_of(parts.front(), parts[i]);
    const Tensor& t = parts[i].value();
    if (t.rank() != 2) throw ShapeError("concat_cols needs rank-2 tensors, got " + shape_string(t.shape()));
    if (i == 0) m = t.shape()[0];
    if (t.shape()[0] != m) {
      throw ShapeError("concat_cols: row counts differ (" + std::to_string(m) + " vs " +
                       std::to_string(t.shape()[0]) + ")");
    }
    widths.push_back(t.shape()[1]);
    ids.push_back(parts[i].id());
    n += t.shape()[1];
  }
  Tensor out = Tensor::matrix(m, n);
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& t = parts[i].value();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < widths[i]; ++c) out[r * n + off + c] = t[r * widths[i] + c];
    off += widths[i];
  }
  return g.record(OpTag::concat_cols, ids, std::move(out), [ids, widths, m, n](Graph& gr, std::size_t self) {
    const Tensor& adj = gr.node(self).adjoint;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (Tensor* ga = gr.adjoint_if_needed(ids[i])) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < widths[i]; ++c) (*ga)[r * widths[i] + c] += adj[r * n + offset + c];
      }
      offset += widths[i];
    }
  });
}

Var softmax(Var a) {
  Graph& g = graph_of(a);
  const View2 v = view2(a.value(), "softmax");
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < v.rows; ++r) {
    const double* xr = &x[r * v.cols];
    double mx = xr[0];
    for (std::size_t c = 1; c < v.cols; ++c) mx = std::max(mx, xr[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < v.cols; ++c) z += std::exp(xr[c] - mx);
    for (std::size_t c = 0; c < v.cols; ++c) out[r * v.cols + c] = std::exp(xr[c] - mx) / z;
  }
  const std::size_t ida = a.id();
  return g.record(OpTag::softmax, {ida}, std::move(out), [ida, v](Graph& gr, std::size_t self) {
    Tensor* ga = gr.adjoint_if_needed(ida);
    if (!ga) return;
    const Tensor& adj = gr.node(self).adjoint;
    const Tensor& y = gr.node(self).value;
    for (std::size_t r = 0; r < v.rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < v.cols; ++c) dot += adj[r * v.cols + c] * y[r * v.cols + c];
      for (std::size_t c = 0; c < v.cols; ++c) {
        const std::size_t k = r * v.cols + c;
        (*ga)[k] += y[k] * (adj[k] - dot);
      }
    }
  });
}

}  // namespace ccica::ndgrad
