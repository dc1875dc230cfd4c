#include "ccica/elbo.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "ccica/error.hpp"

namespace ccica::elbo {

namespace nd = ndgrad;

namespace {
const double kLogTwoPi = std::log(2.0 * std::numbers::pi);
}

Var recon_loss(Var x, Var x_hat) {
  if (x.value().shape() != x_hat.value().shape()) {
    throw ShapeError("recon_loss: shapes " + nd::shape_string(x.value().shape()) + " and " +
                     nd::shape_string(x_hat.value().shape()) + " differ");
  }
  const double rows = static_cast<double>(x.value().rows());
  return nd::scale(nd::sum(nd::square(nd::sub(x_hat, x))), 0.5 / rows);
}

Var kl_gaussian(Var mean, Var logvar) {
  if (mean.value().shape() != logvar.value().shape()) throw ShapeError("kl_gaussian: mean/logvar shapes differ");
  const double rows = static_cast<double>(mean.value().rows());
  Var terms = nd::sub(nd::add(nd::square(mean), nd::exp(logvar)), nd::add_scalar(logvar, 1.0));
  return nd::scale(nd::sum(terms), 0.5 / rows);
}

Var kl_changing(Graph& g, Var mean_s, Var logvar_s, Var z_s, const Tensor& eps, nets::FlowBank& bank, int u) {
  const std::size_t rows = mean_s.value().rows();
  const std::size_t dims = mean_s.value().cols();
  // log q(z_s | x) at z_s = mean + sigma * eps equals -0.5 (eps^2 + logvar + log 2 pi).
  double eps_sq = 0.0;
  for (double e : eps.data()) eps_sq += e * e;
  Var log_q = nd::add_scalar(nd::scale(nd::sum(logvar_s), -0.5),
                             -0.5 * eps_sq - 0.5 * kLogTwoPi * static_cast<double>(rows * dims));
  const auto flow = bank.forward(g, u, z_s);
  Var log_prior = nd::add_scalar(nd::scale(nd::sum(nd::square(flow.out)), -0.5),
                                 -0.5 * kLogTwoPi * static_cast<double>(rows * dims));
  Var kl_sum = nd::sub(nd::sub(log_q, nd::sum(flow.logdet)), log_prior);
  return nd::scale(kl_sum, 1.0 / static_cast<double>(rows));
}

LossVars total_loss(Graph& g, const Tensor& x, int u, nets::Model& model, const Weights& w, Rng& rng) {
  const auto& cfg = model.config();
  if (!model.flows().has(u)) throw ConfigError("total_loss: domain " + std::to_string(u) + " has no flow parameters");
  Var xv = g.constant(x);
  auto enc = model.encode(g, xv);
  Tensor eps(enc.mean.value().shape());
  for (auto& v : eps.data()) v = rng.normal();
  Var z = nets::reparameterize_with(g, enc.mean, enc.logvar, eps);
  Var x_hat = model.decode(g, z);

  LossVars out;
  out.recon = recon_loss(xv, x_hat);
  const std::size_t nc = cfg.n_c();
  const std::size_t nz = cfg.z_dim;
  Var total = out.recon;
  if (nc > 0) {
    out.kl_c = kl_gaussian(nd::slice_cols(enc.mean, 0, nc), nd::slice_cols(enc.logvar, 0, nc));
    total = nd::add(total, nd::scale(out.kl_c, w.alpha));
  }
  Tensor eps_s = Tensor::matrix(eps.rows(), nz - nc);
  for (std::size_t r = 0; r < eps.rows(); ++r)
    for (std::size_t c = nc; c < nz; ++c) eps_s(r, c - nc) = eps(r, c);
  out.kl_s = kl_changing(g, nd::slice_cols(enc.mean, nc, nz), nd::slice_cols(enc.logvar, nc, nz),
                         nd::slice_cols(z, nc, nz), eps_s, model.flows(), u);
  out.total = nd::add(total, nd::scale(out.kl_s, w.beta));

  out.values.alpha = w.alpha;
  out.values.beta = w.beta;
  out.values.recon = out.recon.value().item();
  out.values.kl_c = nc > 0 ? out.kl_c.value().item() : 0.0;
  out.values.kl_s = out.kl_s.value().item();
  out.values.total = out.total.value().item();
  return out;
}

LossVars total_loss_mixed(Graph& g, const Tensor& x, const std::vector<int>& domains, nets::Model& model,
                          const Weights& w, Rng& rng) {
  if (domains.size() != x.rows()) throw ShapeError("total_loss_mixed: one domain label per row required");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < domains.size(); ++r) groups[domains[r]].push_back(r);
  const double n = static_cast<double>(x.rows());

  LossVars out;
  out.values.alpha = w.alpha;
  out.values.beta = w.beta;
  std::vector<Var> recon, klc, kls, total;
  for (const auto& [u, rows] : groups) {
    Tensor sub = Tensor::matrix(rows.size(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < x.cols(); ++c) sub(i, c) = x(rows[i], c);
    auto part = total_loss(g, sub, u, model, w, rng);
    const double share = static_cast<double>(rows.size()) / n;
    recon.push_back(nd::scale(part.recon, share));
    if (model.config().n_c() > 0) klc.push_back(nd::scale(part.kl_c, share));
    kls.push_back(nd::scale(part.kl_s, share));
    total.push_back(nd::scale(part.total, share));
  }
  auto accumulate = [](const std::vector<Var>& parts) {
    Var acc = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) acc = nd::add(acc, parts[i]);
    return acc;
  };
  out.recon = accumulate(recon);
  if (!klc.empty()) out.kl_c = accumulate(klc);
  out.kl_s = accumulate(kls);
  out.total = accumulate(total);
  out.values.recon = out.recon.value().item();
  out.values.kl_c = klc.empty() ? 0.0 : out.kl_c.value().item();
  out.values.kl_s = out.kl_s.value().item();
  out.values.total = out.total.value().item();
  return out;
}

}  // namespace ccica::elbo
