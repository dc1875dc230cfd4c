#include "ccica/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ccica/error.hpp"

namespace ccica {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::continual_gem: return "continual-gem";
    case Regime::baseline: return "baseline";
    case Regime::joint: return "joint";
  }
  return "unknown";
}

Regime regime_from_string(const std::string& s) {
  if (s == "continual-gem" || s == "continual") return Regime::continual_gem;
  if (s == "baseline") return Regime::baseline;
  if (s == "joint") return Regime::joint;
  throw ConfigError("unknown regime '" + s + "' (expected continual-gem, baseline or joint)");
}

std::vector<int> TrainConfig::resolved_order(const Dataset& data) const {
  if (!domain_order.empty()) return domain_order;
  std::vector<int> out;
  for (const auto& d : data.domains) out.push_back(d.domain);
  return out;
}

void TrainConfig::validate(const Dataset& data) const {
  std::ostringstream err;
  if (epochs_per_domain < 1) err << "epochs_per_domain must be > 0; ";
  if (batch_size < 1) err << "batch_size must be > 0; ";
  if (!(lr > 0.0)) err << "lr must be > 0; ";
  if (!(weights.alpha >= 0.0) || !(weights.beta >= 0.0)) err << "alpha and beta must be >= 0; ";
  if (memory_capacity < 1) err << "memory_capacity must be > 0; ";
  if (hidden < 1) err << "hidden must be > 0; ";
  if (data.domains.empty()) err << "dataset has no domains; ";
  if (!domain_order.empty()) {
    std::multiset<int> want, got(domain_order.begin(), domain_order.end());
    for (const auto& d : data.domains) want.insert(d.domain);
    if (want != got) err << "domain_order must be a permutation of the dataset's domains; ";
  }
  const auto msg = err.str();
  if (!msg.empty()) throw ConfigError("invalid train config: " + msg.substr(0, msg.size() - 2));
}

nets::ModelConfig model_config_for(const Dataset& data, const TrainConfig& cfg) {
  nets::ModelConfig m;
  m.x_dim = data.n;
  m.z_dim = data.n;
  m.n_s = data.n_s;
  m.hidden = cfg.hidden;
  return m;
}

namespace {

using Clock = std::chrono::steady_clock;

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> idx) {
  const std::size_t w = src.cols();
  Tensor out = Tensor::matrix(idx.size(), w);
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(&src[idx[r] * w], w, &out[r * w]);
  return out;
}

struct Accumulator {
  elbo::LossBreakdown sum;
  double rows = 0.0;

  void add(const elbo::LossBreakdown& b, std::size_t n) {
    const double k = static_cast<double>(n);
    sum.recon += b.recon * k;
    sum.kl_c += b.kl_c * k;
    sum.kl_s += b.kl_s * k;
    sum.total += b.total * k;
    sum.alpha = b.alpha;
    sum.beta = b.beta;
    rows += k;
  }

  elbo::LossBreakdown mean() const {
    elbo::LossBreakdown m = sum;
    m.recon /= rows;
    m.kl_c /= rows;
    m.kl_s /= rows;
    m.total /= rows;
    return m;
  }
};

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Random streams are split by purpose so that regimes consuming different
// amounts of randomness (memory sampling) still share init, shuffling and noise.
struct Streams {
  Rng init, shuffle, noise, memory, past_noise;
  explicit Streams(std::uint64_t seed)
      : init(Rng(seed).split("init")),
        shuffle(Rng(seed).split("shuffle")),
        noise(Rng(seed).split("noise")),
        memory(Rng(seed).split("memory")),
        past_noise(Rng(seed).split("past-noise")) {}
};

std::vector<double> gradient_of(nets::Model& model, const Tensor& x, int u, const elbo::Weights& w, Rng& rng,
                                elbo::LossBreakdown* values) {
  model.zero_grad();
  ndgrad::Graph g;
  auto loss = elbo::total_loss(g, x, u, model, w, rng);
  g.backward(loss.total);
  g.accumulate_param_grads();
  if (values) *values = loss.values;
  return model.flat_grad();
}

[[noreturn]] void rethrow_with_context(const std::exception& e, const std::string& where) {
  throw NumericalError(where + ": " + e.what());
}

RunRecord train_sequential(const Dataset& data, const TrainConfig& cfg, bool use_gem) {
  cfg.validate(data);
  const auto start = Clock::now();
  RunRecord run;
  run.regime = use_gem ? Regime::continual_gem : Regime::baseline;
  run.config = cfg;
  run.config.regime = run.regime;

  Streams rng(cfg.seed);
  nets::Model model(model_config_for(data, cfg));
  model.init(rng.init);
  ndgrad::Adam adam({.lr = cfg.lr});
  gem::MemoryBank bank(cfg.memory_capacity);
  gem::ProjectOptions popts;
  popts.margin = cfg.gem_margin;

  const auto order = cfg.resolved_order(data);
  std::vector<int> done;
  for (int u : order) {
    const DomainData& dd = data.domain(u);
    model.flows().ensure(u);
    const std::size_t n = dd.x_train.rows();
    std::vector<std::size_t> perm(n);
    for (std::size_t e = 0; e < cfg.epochs_per_domain; ++e) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle.shuffle(perm);
      Accumulator acc;
      for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
        const std::size_t b1 = std::min(n, b0 + cfg.batch_size);
        const Tensor xb = gather_rows(dd.x_train, std::span(perm).subspan(b0, b1 - b0));
        try {
          // Reservoir updates run over the first pass only, so stored rows are
          // distinct samples of the domain's training set.
          if (use_gem && e == 0) bank.reservoir_update(u, xb, rng.memory);
          elbo::LossBreakdown lb;
          auto v = gradient_of(model, xb, u, cfg.weights, rng.noise, &lb);
          acc.add(lb, b1 - b0);
          if (use_gem && !done.empty()) {
            auto rows = gem::past_gradients(bank, done, [&](int k, const Tensor& mem) {
              return gradient_of(model, mem, k, cfg.weights, rng.past_noise, nullptr);
            });
            auto proj = gem::project(v, rows, popts);
            if (proj.projected) ++run.projections;
            if (cfg.gem_diagnostics) {
              const double nv = l2(v), np = l2(proj.v);
              const double c = std::clamp(gem::cosine(v, proj.v), -1.0, 1.0);
              run.gem.push_back({run.steps, u, proj.violated, nv, np, std::acos(c)});
            }
            v = std::move(proj.v);
          }
          auto params = model.parameters();
          adam.step(params, v);
        } catch (const QpError&) {
          throw;
        } catch (const NumericalError& ex) {
          rethrow_with_context(ex, fmt::format("{} training, domain {}, epoch {}, step {}", to_string(run.regime), u,
                                               e, run.steps));
        }
        ++run.steps;
        for (int k : bank.domains()) run.max_memory = std::max(run.max_memory, bank.size(k));
      }
      run.log.push_back({u, e, acc.mean()});
      spdlog::debug("{} seed {} domain {} epoch {}: total {:.5f}", to_string(run.regime), cfg.seed, u, e,
                    run.log.back().loss.total);
    }
    done.push_back(u);
    run.checkpoints.push_back({done, model, adam});
    spdlog::info("{} seed {}: finished domain {} ({} of {})", to_string(run.regime), cfg.seed, u, done.size(),
                 order.size());
  }
  run.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return run;
}

}  // namespace

RunRecord train_continual(const Dataset& data, const TrainConfig& cfg) { return train_sequential(data, cfg, true); }

RunRecord train_baseline(const Dataset& data, const TrainConfig& cfg) { return train_sequential(data, cfg, false); }

RunRecord train_joint(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate(data);
  const auto start = Clock::now();
  RunRecord run;
  run.regime = Regime::joint;
  run.config = cfg;
  run.config.regime = Regime::joint;

  Streams rng(cfg.seed);
  nets::Model model(model_config_for(data, cfg));
  model.init(rng.init);
  ndgrad::Adam adam({.lr = cfg.lr});

  const auto order = cfg.resolved_order(data);
  for (int u : order) model.flows().ensure(u);

  // Union of all domains; each row keeps its domain label for flow routing.
  std::vector<std::pair<int, std::size_t>> rows;
  for (int u : order)
    for (std::size_t r = 0; r < data.domain(u).x_train.rows(); ++r) rows.emplace_back(u, r);
  const std::size_t n = rows.size();
  const std::size_t width = data.n;

  // Same number of passes over the union as each sequential domain gets, which
  // gives the same total number of updates as the continual run.
  std::vector<std::size_t> perm(n);
  for (std::size_t e = 0; e < cfg.epochs_per_domain; ++e) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle.shuffle(perm);
    Accumulator acc;
    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(n, b0 + cfg.batch_size);
      Tensor xb = Tensor::matrix(b1 - b0, width);
      std::vector<int> labels(b1 - b0);
      for (std::size_t i = b0; i < b1; ++i) {
        const auto [u, r] = rows[perm[i]];
        labels[i - b0] = u;
        std::copy_n(&data.domain(u).x_train[r * width], width, &xb[(i - b0) * width]);
      }
      try {
        model.zero_grad();
        ndgrad::Graph g;
        auto loss = elbo::total_loss_mixed(g, xb, labels, model, cfg.weights, rng.noise);
        g.backward(loss.total);
        g.accumulate_param_grads();
        acc.add(loss.values, b1 - b0);
        auto params = model.parameters();
        adam.step(params);
      } catch (const NumericalError& ex) {
        rethrow_with_context(ex, fmt::format("joint training, epoch {}, step {}", e, run.steps));
      }
      ++run.steps;
    }
    run.log.push_back({-1, e, acc.mean()});
    spdlog::debug("joint seed {} epoch {}: total {:.5f}", cfg.seed, e, run.log.back().loss.total);
  }
  run.checkpoints.push_back({order, model, adam});
  run.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return run;
}

RunRecord train(const Dataset& data, const TrainConfig& cfg) {
  switch (cfg.regime) {
    case Regime::continual_gem: return train_continual(data, cfg);
    case Regime::baseline: return train_baseline(data, cfg);
    case Regime::joint: return train_joint(data, cfg);
  }
  throw ConfigError("unknown regime");
}

void write_train_log(const std::string& path, const RunRecord& run) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write training log '" + path + "'");
  os << "epoch,domain,recon,kl_c,kl_s,total\n";
  for (const auto& l : run.log) {
    os << l.epoch << ',' << (l.domain < 0 ? std::string("all") : std::to_string(l.domain)) << ','
       << fmt::format("{:.10g},{:.10g},{:.10g},{:.10g}\n", l.loss.recon, l.loss.kl_c, l.loss.kl_s, l.loss.total);
  }
}

void write_gem_diagnostics(const std::string& path, const RunRecord& run) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write GEM diagnostics '" + path + "'");
  os << "step,domain,violated,norm_v,norm_projected,angle\n";
  for (const auto& s : run.gem) {
    os << fmt::format("{},{},{},{:.10g},{:.10g},{:.10g}\n", s.step, s.domain, s.violated, s.norm_v, s.norm_projected,
                      s.angle);
  }
}

}  // namespace ccica
