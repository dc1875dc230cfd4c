#include "ccica/mcc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "ccica/assignment.hpp"
#include "ccica/error.hpp"
#include "ccica/ndgrad/adam.hpp"
#include "ccica/ndgrad/graph.hpp"
#include "ccica/rng.hpp"

namespace ccica::mcc {

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("pearson: series lengths differ");
  if (a.size() < 2) throw ShapeError("pearson: need at least 2 samples");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw NumericalError("pearson: zero variance (collapsed latent)");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double pearson_abs(std::span<const double> a, std::span<const double> b) { return std::abs(pearson(a, b)); }

namespace {

std::vector<double> column(const Tensor& t, std::size_t j) {
  std::vector<double> c(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) c[r] = t(r, j);
  return c;
}

struct Standardizer {
  double mean = 0.0, sd = 1.0;
  explicit Standardizer(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / n);
    if (!(sd > 0.0)) sd = 1.0;
  }
  double operator()(double x) const { return (x - mean) / sd; }
};

}  // namespace

Tensor corr_table(const Tensor& estimate, const Tensor& truth) {
  if (estimate.rank() != 2 || truth.rank() != 2 || estimate.rows() != truth.rows() || estimate.cols() != truth.cols()) {
    throw ShapeError("corr_table: estimate " + ndgrad::shape_string(estimate.shape()) + " and truth " +
                     ndgrad::shape_string(truth.shape()) + " must have equal shapes");
  }
  const std::size_t d = truth.cols();
  Tensor t = Tensor::matrix(d, d);
  std::vector<std::vector<double>> est_cols, true_cols;
  for (std::size_t j = 0; j < d; ++j) {
    est_cols.push_back(column(estimate, j));
    true_cols.push_back(column(truth, j));
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) t(i, j) = pearson_abs(true_cols[i], est_cols[j]);
  return t;
}

std::vector<std::size_t> assign(const Tensor& corr) { return assign_max(corr); }

double ScalarMlp::predict(double x) const {
  const std::size_t h = hidden;
  double out = theta[3 * h];
  for (std::size_t j = 0; j < h; ++j) {
    const double a = theta[j] * x + theta[h + j];
    out += theta[2 * h + j] * (a > 0.0 ? a : slope * a);
  }
  return out;
}

double ScalarMlp::loss_and_gradient(std::span<const double> x, std::span<const double> y,
                                    std::span<const std::size_t> idx, std::vector<double>& grad) const {
  const std::size_t h = hidden;
  grad.assign(theta.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(idx.size());
  double loss = 0.0;
  for (std::size_t i : idx) {
    const double r = predict(x[i]) - y[i];
    loss += r * r * inv;
    const double d = 2.0 * r * inv;
    for (std::size_t j = 0; j < h; ++j) {
      const double a = theta[j] * x[i] + theta[h + j];
      const double act = a > 0.0 ? a : slope * a;
      const double da = d * theta[2 * h + j] * (a > 0.0 ? 1.0 : slope);
      grad[j] += da * x[i];
      grad[h + j] += da;
      grad[2 * h + j] += d * act;
    }
    grad[3 * h] += d;
  }
  return loss;
}

PairFit remove_nonlinearity(std::span<const double> estimate, std::span<const double> truth, std::uint64_t seed,
                            const RegressorOptions& opts) {
  if (estimate.size() != truth.size()) throw ShapeError("remove_nonlinearity: series lengths differ");
  if (estimate.size() < 100) throw ConfigError("remove_nonlinearity: need at least 100 pairs");
  Rng rng(seed);
  std::vector<std::size_t> idx(estimate.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  const std::size_t n_train = idx.size() / 2;
  std::vector<double> xtr, ytr, xte, yte;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto& xs = k < n_train ? xtr : xte;
    auto& ys = k < n_train ? ytr : yte;
    xs.push_back(estimate[idx[k]]);
    ys.push_back(truth[idx[k]]);
  }
  PairFit fit;
  fit.train_size = xtr.size();
  fit.test_size = xte.size();
  fit.raw = pearson_abs(xte, yte);

  const Standardizer sx(xtr), sy(ytr);
  std::vector<double> x_train(xtr.size()), y_train(ytr.size()), x_test(xte.size());
  for (std::size_t i = 0; i < xtr.size(); ++i) {
    x_train[i] = sx(xtr[i]);
    y_train[i] = sy(ytr[i]);
  }
  for (std::size_t i = 0; i < xte.size(); ++i) x_test[i] = sx(xte[i]);

  ScalarMlp net;
  net.hidden = opts.hidden;
  net.slope = opts.slope;
  const std::size_t h = opts.hidden;
  net.theta.assign(3 * h + 1, 0.0);
  const double gain = std::sqrt(2.0 / (1.0 + opts.slope * opts.slope));
  for (std::size_t i = 0; i < h; ++i) net.theta[i] = rng.normal(0.0, gain);
  for (std::size_t i = 0; i < h; ++i) net.theta[h + i] = rng.normal(0.0, 1.0);
  for (std::size_t i = 0; i < h; ++i) net.theta[2 * h + i] = rng.normal(0.0, gain / std::sqrt(static_cast<double>(h)));

  // The flat vector rides on the shared Adam implementation as one parameter.
  ndgrad::Parameter theta("theta", Tensor({net.theta.size()}, net.theta));
  std::vector<ndgrad::Parameter*> params{&theta};
  ndgrad::Adam adam({.lr = opts.lr});
  std::vector<std::size_t> order(x_train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::max<std::size_t>(1, std::min(opts.batch_size, order.size()));
  std::vector<double> grad;

  try {
    for (std::size_t e = 0; e < opts.epochs; ++e) {
      rng.shuffle(order);
      for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
        const std::size_t b1 = std::min(order.size(), b0 + batch);
        net.theta = theta.value.storage();
        const double loss = net.loss_and_gradient(x_train, y_train, std::span(order).subspan(b0, b1 - b0), grad);
        if (!std::isfinite(loss)) throw NumericalError("regressor loss is not finite");
        adam.step(params, grad);
      }
    }
    net.theta = theta.value.storage();
    std::vector<double> p(x_test.size());
    for (std::size_t i = 0; i < x_test.size(); ++i) p[i] = net.predict(x_test[i]);
    fit.corr = pearson_abs(p, yte);
  } catch (const NumericalError&) {
    fit.diverged = true;
    fit.corr = fit.raw;
  }
  return fit;
}

MccReport mcc(const Tensor& estimate, const Tensor& truth, std::uint64_t seed, const RegressorOptions& opts) {
  MccReport rep;
  rep.table = corr_table(estimate, truth);
  rep.assignment = assign(rep.table);
  const std::size_t d = truth.cols();
  const Rng root(seed);
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const auto est = column(estimate, rep.assignment[i]);
    const auto tru = column(truth, i);
    const std::uint64_t pair_seed = root.split("pair/" + std::to_string(i)).next_u64();
    auto fit = remove_nonlinearity(est, tru, pair_seed, opts);
    if (fit.diverged) rep.warnings.push_back("regression for latent " + std::to_string(i) + " diverged, raw correlation used");
    total += fit.corr;
    rep.train_size = fit.train_size;
    rep.test_size = fit.test_size;
    rep.pairs.push_back(fit);
  }
  rep.mcc = d ? total / static_cast<double>(d) : 0.0;
  return rep;
}

std::string MccReport::to_json() const {
  nlohmann::json j;
  j["mcc"] = mcc;
  j["assignment"] = assignment;
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    std::vector<double> r;
    for (std::size_t c = 0; c < table.cols(); ++c) r.push_back(table(i, c));
    rows.push_back(std::move(r));
  }
  j["corr_table"] = rows;
  nlohmann::json pj = nlohmann::json::array();
  for (const auto& p : pairs) pj.push_back({{"raw", p.raw}, {"corr", p.corr}, {"diverged", p.diverged}});
  j["pairs"] = pj;
  j["train_size"] = train_size;
  j["test_size"] = test_size;
  j["warnings"] = warnings;
  return j.dump(2);
}

}  // namespace ccica::mcc
