#include "ccica/nets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "ccica/error.hpp"
#include "ccica/spline.hpp"

namespace ccica::nets {

namespace {

constexpr const char* kCheckpointMagic = "CCICA-CKPT 1\n";

// softplus(r) + min_d == 1 at identity.
double identity_derivative_raw(double min_d) { return std::log(std::expm1(1.0 - min_d)); }

}  // namespace

// ---------------------------------------------------------------- Mlp

Mlp::Mlp(std::string prefix, std::size_t in, std::size_t hidden, std::size_t blocks, std::size_t out, double slope)
    : in_(in), out_(out), slope_(slope) {
  std::vector<std::pair<std::size_t, std::size_t>> dims;
  dims.emplace_back(in, hidden);
  for (std::size_t b = 0; b < blocks; ++b) dims.emplace_back(hidden, hidden);
  dims.emplace_back(hidden, out);
  for (std::size_t l = 0; l < dims.size(); ++l) {
    const auto [fi, fo] = dims[l];
    weights_.emplace_back(prefix + "." + std::to_string(l) + ".weight", Tensor::matrix(fi, fo));
    biases_.emplace_back(prefix + "." + std::to_string(l) + ".bias", Tensor::matrix(1, fo));
  }
}

void Mlp::init(Rng& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + slope_ * slope_));
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto& w = weights_[l].value;
    const double stddev = gain / std::sqrt(static_cast<double>(w.rows()));
    for (auto& v : w.data()) v = rng.normal(0.0, stddev);
    biases_[l].value.fill(0.0);
  }
}

Var Mlp::forward(Graph& g, Var x) {
  if (x.value().rank() != 2 || x.value().cols() != in_) {
    throw ShapeError("mlp: expected input with " + std::to_string(in_) + " columns, got shape " +
                     ndgrad::shape_string(x.value().shape()));
  }
  const std::size_t last = weights_.size() - 1;
  Var h = x;
  for (std::size_t l = 0; l <= last; ++l) {
    h = ndgrad::add(ndgrad::matmul(h, g.param(weights_[l])), g.param(biases_[l]));
    if (l > 0 && l < last) h = ndgrad::leaky_relu(h, slope_);
    // The standalone activation row that precedes the output layer.
    if (l + 1 == last) h = ndgrad::leaky_relu(h, slope_);
  }
  return h;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const Parameter*> Mlp::parameters() const {
  std::vector<const Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

// ---------------------------------------------------------------- spline op

FlowResult rq_spline(Var z, Var kx, Var ky, Var kd) {
  Graph& g = *z.graph();
  const Tensor& zv = z.value();
  const Tensor& xk = kx.value();
  const Tensor& yk = ky.value();
  const Tensor& dk = kd.value();
  if (zv.rank() != 2) throw ShapeError("rq_spline: input must be rank 2");
  const std::size_t m = zv.rows(), d = zv.cols();
  if (xk.rows() != d || yk.shape() != xk.shape() || dk.shape() != xk.shape() || xk.cols() < 2) {
    throw ShapeError("rq_spline: knot tensors must be " + std::to_string(d) + " x (bins+1)");
  }
  const std::size_t nk = xk.cols();

  Tensor out = Tensor::matrix(m, 2 * d);
  std::vector<int> bin(m * d, -1);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      const double x = zv(r, i);
      const std::span<const double> row(&xk[i * nk], nk);
      if (x < row.front() || x > row.back()) {
        out(r, i) = x;
        out(r, d + i) = 0.0;
        continue;
      }
      const std::size_t k = spline::find_bin(row, x);
      bin[r * d + i] = static_cast<int>(k);
      const auto res = spline::rq_bin_forward<double>(x, xk(i, k), xk(i, k + 1), yk(i, k), yk(i, k + 1), dk(i, k),
                                                      dk(i, k + 1));
      out(r, i) = res.y;
      out(r, d + i) = res.logdet;
    }
  }

  const std::size_t iz = z.id(), ix = kx.id(), iy = ky.id(), id = kd.id();
  Var fused = g.record(
      ndgrad::OpTag::custom, {iz, ix, iy, id}, std::move(out),
      [iz, ix, iy, id, m, d, nk, bin = std::move(bin)](Graph& gr, std::size_t self) {
        const Tensor& adj = gr.node(self).adjoint;
        const Tensor& zval = gr.node(iz).value;
        const Tensor& xs = gr.node(ix).value;
        const Tensor& ys = gr.node(iy).value;
        const Tensor& ds = gr.node(id).value;
        Tensor* gz = gr.adjoint_if_needed(iz);
        Tensor* gx = gr.adjoint_if_needed(ix);
        Tensor* gy = gr.adjoint_if_needed(iy);
        Tensor* gd = gr.adjoint_if_needed(id);
        using D = spline::Dual<7>;
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t i = 0; i < d; ++i) {
            const double ay = adj[r * 2 * d + i];
            const double al = adj[r * 2 * d + d + i];
            const int b = bin[r * d + i];
            if (b < 0) {
              if (gz) (*gz)(r, i) += ay;
              continue;
            }
            const std::size_t k = static_cast<std::size_t>(b);
            const auto res = spline::rq_bin_forward<D>(
                D::variable(zval(r, i), 0), D::variable(xs(i, k), 1), D::variable(xs(i, k + 1), 2),
                D::variable(ys(i, k), 3), D::variable(ys(i, k + 1), 4), D::variable(ds(i, k), 5),
                D::variable(ds(i, k + 1), 6));
            auto partial = [&](std::size_t slot) { return ay * res.y.d[slot] + al * res.logdet.d[slot]; };
            if (gz) (*gz)(r, i) += partial(0);
            if (gx) {
              (*gx)[i * nk + k] += partial(1);
              (*gx)[i * nk + k + 1] += partial(2);
            }
            if (gy) {
              (*gy)[i * nk + k] += partial(3);
              (*gy)[i * nk + k + 1] += partial(4);
            }
            if (gd) {
              (*gd)[i * nk + k] += partial(5);
              (*gd)[i * nk + k + 1] += partial(6);
            }
          }
        }
      });
  return {ndgrad::slice_cols(fused, 0, d), ndgrad::slice_cols(fused, d, 2 * d)};
}

// ---------------------------------------------------------------- FlowBank

void FlowBank::ensure(int u) {
  if (has(u)) return;
  const std::string p = "flow." + std::to_string(u);
  SplineParams sp{
      Parameter(p + ".widths", Tensor::matrix(cfg_.n_s, cfg_.bins, 0.0)),
      Parameter(p + ".heights", Tensor::matrix(cfg_.n_s, cfg_.bins, 0.0)),
      Parameter(p + ".derivatives",
                Tensor::matrix(cfg_.n_s, cfg_.bins - 1, identity_derivative_raw(cfg_.min_derivative))),
  };
  params_.emplace(u, std::move(sp));
  order_.push_back(u);
}

SplineParams& FlowBank::params(int u) {
  auto it = params_.find(u);
  if (it == params_.end()) throw ConfigError("flow bank has no domain " + std::to_string(u));
  return it->second;
}

const SplineParams& FlowBank::params(int u) const {
  auto it = params_.find(u);
  if (it == params_.end()) throw ConfigError("flow bank has no domain " + std::to_string(u));
  return it->second;
}

std::vector<Parameter*> FlowBank::parameters() {
  std::vector<Parameter*> out;
  for (int u : order_) {
    auto& sp = params_.at(u);
    out.insert(out.end(), {&sp.widths, &sp.heights, &sp.derivatives});
  }
  return out;
}

std::vector<const Parameter*> FlowBank::parameters() const {
  std::vector<const Parameter*> out;
  for (int u : order_) {
    const auto& sp = params_.at(u);
    out.insert(out.end(), {&sp.widths, &sp.heights, &sp.derivatives});
  }
  return out;
}

namespace {

// Shared by the tracked and untracked paths so both see identical knots.
Knots build_knots(Graph& g, const ModelConfig& cfg, Var w_raw, Var h_raw, Var d_raw, Var* kx, Var* ky, Var* kd) {
  const std::size_t bins = cfg.bins;
  const std::size_t rows = cfg.n_s;
  Tensor tri = Tensor::matrix(bins, bins + 1);
  for (std::size_t j = 0; j < bins; ++j)
    for (std::size_t k = j + 1; k <= bins; ++k) tri(j, k) = 1.0;
  Var cum_op = g.constant(std::move(tri));
  const double span = 2.0 * cfg.bound;
  const double keep = 1.0 - cfg.min_bin_size * static_cast<double>(bins);

  auto positions = [&](Var raw) {
    Var frac = ndgrad::add_scalar(ndgrad::scale(ndgrad::softmax(raw), keep), cfg.min_bin_size);
    return ndgrad::add_scalar(ndgrad::scale(ndgrad::matmul(frac, cum_op), span), -cfg.bound);
  };
  Var x = positions(w_raw);
  Var y = positions(h_raw);
  Var ones = g.constant(Tensor::matrix(rows, 1, 1.0));
  Var interior = ndgrad::add_scalar(ndgrad::softplus(d_raw), cfg.min_derivative);
  Var d = ndgrad::concat_cols({ones, interior, ones});
  if (kx) *kx = x;
  if (ky) *ky = y;
  if (kd) *kd = d;
  return {x.value(), y.value(), d.value()};
}

}  // namespace

Knots FlowBank::knots_on(Graph& g, int u, Var* kx, Var* ky, Var* kd) {
  auto& sp = params(u);
  return build_knots(g, cfg_, g.param(sp.widths), g.param(sp.heights), g.param(sp.derivatives), kx, ky, kd);
}

Knots FlowBank::knots(int u) const {
  const auto& sp = params(u);
  Graph g;
  return build_knots(g, cfg_, g.constant(sp.widths.value), g.constant(sp.heights.value),
                     g.constant(sp.derivatives.value), nullptr, nullptr, nullptr);
}

FlowResult FlowBank::forward(Graph& g, int u, Var z) {
  Var kx, ky, kd;
  knots_on(g, u, &kx, &ky, &kd);
  return rq_spline(z, kx, ky, kd);
}

std::pair<Tensor, Tensor> FlowBank::forward_values(int u, const Tensor& z) const {
  const Knots k = knots(u);
  Graph g;
  auto res = rq_spline(g.constant(z), g.constant(k.x), g.constant(k.y), g.constant(k.d));
  return {res.out.value(), res.logdet.value()};
}

Tensor FlowBank::inverse(int u, const Tensor& y) const {
  const Knots k = knots(u);
  if (y.rank() != 2 || y.cols() != cfg_.n_s) throw ShapeError("flow inverse: expected n_s columns");
  const std::size_t nk = k.x.cols();
  Tensor out(y.shape());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t i = 0; i < y.cols(); ++i) {
      const double v = y(r, i);
      const std::span<const double> yrow(&k.y[i * nk], nk);
      if (v < yrow.front() || v > yrow.back()) {
        out(r, i) = v;
        continue;
      }
      const std::size_t b = spline::find_bin(yrow, v);
      out(r, i) = spline::rq_bin_inverse(v, k.x(i, b), k.x(i, b + 1), k.y(i, b), k.y(i, b + 1), k.d(i, b),
                                         k.d(i, b + 1));
    }
  }
  return out;
}

// ---------------------------------------------------------------- Model

Model::Model(const ModelConfig& cfg)
    : cfg_(cfg),
      encoder_("encoder", cfg.x_dim, cfg.hidden, cfg.hidden_blocks, 2 * cfg.z_dim, cfg.slope),
      decoder_("decoder", cfg.z_dim, cfg.hidden, cfg.hidden_blocks, cfg.x_dim, cfg.slope),
      flows_(cfg) {
  if (cfg.n_s < 1 || cfg.n_s > cfg.z_dim) throw ConfigError("model: n_s must be in [1, z_dim]");
  if (cfg.bins < 2) throw ConfigError("model: spline needs at least 2 bins");
  if (cfg.min_bin_size * static_cast<double>(cfg.bins) >= 1.0) throw ConfigError("model: min_bin_size too large");
}

Model::Model(const Model& other) = default;
Model& Model::operator=(const Model& other) = default;

void Model::init(Rng& rng) {
  encoder_.init(rng);
  decoder_.init(rng);
}

std::vector<Parameter*> Model::parameters() {
  auto out = encoder_.parameters();
  for (auto* p : decoder_.parameters()) out.push_back(p);
  for (auto* p : flows_.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto out = encoder_.parameters();
  for (auto* p : decoder_.parameters()) out.push_back(p);
  for (auto* p : flows_.parameters()) out.push_back(p);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

void Model::zero_grad() {
  for (auto* p : parameters()) {
    if (p->grad.shape() != p->value.shape()) p->grad = Tensor(p->value.shape());
    p->zero_grad();
  }
}

std::vector<double> Model::flat_grad() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto* p : parameters()) {
    if (p->grad.shape() != p->value.shape()) {
      out.insert(out.end(), p->value.size(), 0.0);
    } else {
      out.insert(out.end(), p->grad.data().begin(), p->grad.data().end());
    }
  }
  return out;
}

Encoded Model::encode(Graph& g, Var x) {
  Var h = encoder_.forward(g, x);
  Var mean = ndgrad::slice_cols(h, 0, cfg_.z_dim);
  Var logvar = ndgrad::clamp(ndgrad::slice_cols(h, cfg_.z_dim, 2 * cfg_.z_dim), -cfg_.logvar_limit, cfg_.logvar_limit);
  return {mean, logvar};
}

Var Model::decode(Graph& g, Var z) { return decoder_.forward(g, z); }

Tensor Model::encode_mean(const Tensor& x) const {
  Model scratch = *this;
  Graph g;
  return scratch.encode(g, g.constant(x)).mean.value();
}

Var reparameterize_with(Graph& g, Var mean, Var logvar, const Tensor& eps) {
  if (mean.value().shape() != logvar.value().shape() || eps.shape() != mean.value().shape()) {
    throw ShapeError("reparameterize: mean, logvar and noise shapes differ");
  }
  Var sd = ndgrad::exp(ndgrad::scale(logvar, 0.5));
  return ndgrad::add(mean, ndgrad::mul(sd, g.constant(eps)));
}

Var reparameterize(Graph& g, Var mean, Var logvar, Rng& rng) {
  Tensor eps(mean.value().shape());
  for (auto& v : eps.data()) v = rng.normal();
  return reparameterize_with(g, mean, logvar, eps);
}

// ---------------------------------------------------------------- checkpoints

namespace {

void write_f64(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

double read_f64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw ConfigError("checkpoint: truncated parameter blob");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

nlohmann::json config_json(const ModelConfig& c) {
  return {{"x_dim", c.x_dim},       {"z_dim", c.z_dim},
          {"n_s", c.n_s},           {"hidden", c.hidden},
          {"hidden_blocks", c.hidden_blocks}, {"slope", c.slope},
          {"bins", c.bins},         {"bound", c.bound},
          {"logvar_limit", c.logvar_limit}, {"min_bin_size", c.min_bin_size},
          {"min_derivative", c.min_derivative}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.x_dim = j.at("x_dim");
  c.z_dim = j.at("z_dim");
  c.n_s = j.at("n_s");
  c.hidden = j.at("hidden");
  c.hidden_blocks = j.at("hidden_blocks");
  c.slope = j.at("slope");
  c.bins = j.at("bins");
  c.bound = j.at("bound");
  c.logvar_limit = j.at("logvar_limit");
  c.min_bin_size = j.at("min_bin_size");
  c.min_derivative = j.at("min_derivative");
  return c;
}

}  // namespace

void write_checkpoint(std::ostream& os, const Model& model, const ndgrad::Adam* adam, const std::string& extra_json) {
  nlohmann::json h;
  h["format"] = "ccica-checkpoint";
  h["version"] = 1;
  h["architecture"] = config_json(model.config());
  h["latent_split"] = {{"invariant", {0, model.config().n_c()}},
                       {"changing", {model.config().n_c(), model.config().z_dim}}};
  h["domains"] = model.flows().domains();
  nlohmann::json layout = nlohmann::json::array();
  for (const auto* p : model.parameters()) layout.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  h["parameters"] = layout;
  h["has_optimizer"] = adam != nullptr;
  if (adam) {
    const auto& c = adam->config();
    h["optimizer"] = {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
    nlohmann::json steps = nlohmann::json::object();
    for (const auto* p : model.parameters()) {
      auto it = adam->moments().find(p->name);
      steps[p->name] = it == adam->moments().end() ? 0 : it->second.t;
    }
    h["optimizer_steps"] = steps;
  }
  h["extra"] = nlohmann::json::parse(extra_json);
  const std::string header = h.dump();

  os << kCheckpointMagic << header.size() << '\n' << header << '\n';
  for (const auto* p : model.parameters())
    for (double v : p->value.data()) write_f64(os, v);
  if (adam) {
    for (const auto* p : model.parameters()) {
      auto it = adam->moments().find(p->name);
      for (std::size_t k = 0; k < p->value.size(); ++k) {
        write_f64(os, it == adam->moments().end() ? 0.0 : it->second.m[k]);
      }
      for (std::size_t k = 0; k < p->value.size(); ++k) {
        write_f64(os, it == adam->moments().end() ? 0.0 : it->second.v[k]);
      }
    }
  }
}

Checkpoint read_checkpoint(std::istream& is) {
  std::string magic_line;
  std::getline(is, magic_line);
  if (magic_line + "\n" != kCheckpointMagic) throw ConfigError("checkpoint: bad magic line");
  std::size_t header_len = 0;
  is >> header_len;
  is.get();
  std::string header(header_len, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(header_len))) throw ConfigError("checkpoint: truncated header");
  is.get();
  const auto h = nlohmann::json::parse(header);

  Checkpoint ck{Model(config_from_json(h.at("architecture"))), std::nullopt, header};
  for (int u : h.at("domains").get<std::vector<int>>()) ck.model.flows().ensure(u);
  auto params = ck.model.parameters();
  const auto& layout = h.at("parameters");
  if (layout.size() != params.size()) throw ConfigError("checkpoint: parameter layout does not match architecture");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (layout[i].at("name").get<std::string>() != params[i]->name ||
        layout[i].at("shape").get<ndgrad::Shape>() != params[i]->value.shape()) {
      throw ConfigError("checkpoint: unexpected parameter '" + layout[i].at("name").get<std::string>() + "'");
    }
    for (auto& v : params[i]->value.data()) v = read_f64(is);
  }
  if (h.value("has_optimizer", false)) {
    const auto& o = h.at("optimizer");
    ndgrad::Adam adam({o.at("lr"), o.at("beta1"), o.at("beta2"), o.at("eps")});
    const auto& steps = h.at("optimizer_steps");
    for (auto* p : params) {
      ndgrad::Adam::Moments mo{Tensor(p->value.shape()), Tensor(p->value.shape()), steps.at(p->name)};
      for (auto& v : mo.m.data()) v = read_f64(is);
      for (auto& v : mo.v.data()) v = read_f64(is);
      if (mo.t > 0) adam.moments().emplace(p->name, std::move(mo));
    }
    ck.adam = std::move(adam);
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Model& model, const ndgrad::Adam* adam,
                     const std::string& extra_json) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write checkpoint '" + path + "'");
  write_checkpoint(os, model, adam, extra_json);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace ccica::nets
