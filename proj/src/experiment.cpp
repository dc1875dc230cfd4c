#include "ccica/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ccica/dataset_io.hpp"
#include "ccica/error.hpp"

namespace ccica {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::default_: return "default";
    case Scenario::increasing_domains: return "increasing-domains";
    case Scenario::repeated_partial: return "repeated-partial";
    case Scenario::ordering_z1: return "ordering-z1";
    case Scenario::custom: return "custom";
  }
  return "unknown";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "default") return Scenario::default_;
  if (s == "increasing-domains") return Scenario::increasing_domains;
  if (s == "repeated-partial") return Scenario::repeated_partial;
  if (s == "ordering-z1") return Scenario::ordering_z1;
  if (s == "custom") return Scenario::custom;
  throw ConfigError("unknown scenario '" + s +
                    "' (expected default, increasing-domains, repeated-partial, ordering-z1 or custom)");
}

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  std::ostringstream err;
  if (seeds.empty()) err << "seeds must not be empty; ";
  if (regimes.empty()) err << "regimes must not be empty; ";
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) err << "seeds must be distinct; ";
  if (scenario == Scenario::custom && scenario_file.empty()) err << "scenario 'custom' needs scenario_file; ";
  if (scenario != Scenario::custom && !scenario_file.empty()) err << "scenario_file is only used with scenario 'custom'; ";
  if (scenario == Scenario::repeated_partial && generation.n_s < 2) err << "repeated-partial needs n_s >= 2; ";
  if (regressor.hidden < 1 || regressor.epochs < 1 || regressor.batch_size < 1 || !(regressor.lr > 0.0)) err << "invalid regressor settings; ";
  try {
    generation.validate();
  } catch (const ConfigError& e) {
    err << e.what() << "; ";
  }
  if (training.epochs_per_domain < 1) err << "epochs_per_domain must be > 0; ";
  if (training.batch_size < 1) err << "batch_size must be > 0; ";
  if (!(training.lr > 0.0)) err << "lr must be > 0; ";
  if (training.memory_capacity < 1) err << "memory_capacity must be > 0; ";
  if (!(training.weights.alpha >= 0.0) || !(training.weights.beta >= 0.0)) err << "alpha and beta must be >= 0; ";
  const auto msg = err.str();
  if (!msg.empty()) throw ConfigError("invalid experiment config: " + msg.substr(0, msg.size() - 2));
}

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed,
                std::vector<std::string>& errors) {
  if (!j.is_object()) {
    errors.push_back(where + " must be an object");
    return;
  }
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) errors.push_back("unknown key '" + where + "." + k + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where, std::vector<std::string>& errors) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    errors.push_back("'" + where + "." + key + "' has the wrong type");
  }
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  std::vector<std::string> errors;
  check_keys(j, "config",
             {"generation", "training", "regimes", "seeds", "scenario", "scenario_file", "evaluation", "jobs",
              "write_checkpoints", "gem_diagnostics", "timings_in_csv"},
             errors);
  if (j.contains("generation")) {
    const auto& g = j["generation"];
    check_keys(g, "generation",
               {"n", "n_s", "domains", "train_per_domain", "test_per_domain", "family", "mixed_combine",
                "condition_bound", "mixing_slope"},
               errors);
    auto& gc = cfg.generation;
    read(g, "n", gc.n, "generation", errors);
    read(g, "n_s", gc.n_s, "generation", errors);
    const bool has_train = g.contains("train_per_domain");
    gc.train_per_domain = GenerationConfig::defaults_for(gc.n, gc.n_s).train_per_domain;
    if (has_train) read(g, "train_per_domain", gc.train_per_domain, "generation", errors);
    read(g, "domains", gc.domains, "generation", errors);
    read(g, "test_per_domain", gc.test_per_domain, "generation", errors);
    read(g, "condition_bound", gc.condition_bound, "generation", errors);
    read(g, "mixing_slope", gc.mixing_slope, "generation", errors);
    std::string fam = to_string(gc.family), comb = "mixture";
    read(g, "family", fam, "generation", errors);
    read(g, "mixed_combine", comb, "generation", errors);
    try {
      gc.family = latent_family_from_string(fam);
    } catch (const ConfigError& e) {
      errors.emplace_back(e.what());
    }
    if (comb == "sum") {
      gc.mixed_combine = MixedCombine::sum;
    } else if (comb != "mixture") {
      errors.push_back("generation.mixed_combine must be 'mixture' or 'sum'");
    }
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    check_keys(t, "training",
               {"epochs_per_domain", "batch_size", "lr", "alpha", "beta", "memory_capacity", "gem_margin", "hidden",
                "domain_order"},
               errors);
    auto& tc = cfg.training;
    read(t, "epochs_per_domain", tc.epochs_per_domain, "training", errors);
    read(t, "batch_size", tc.batch_size, "training", errors);
    read(t, "lr", tc.lr, "training", errors);
    read(t, "alpha", tc.weights.alpha, "training", errors);
    read(t, "beta", tc.weights.beta, "training", errors);
    read(t, "memory_capacity", tc.memory_capacity, "training", errors);
    read(t, "gem_margin", tc.gem_margin, "training", errors);
    read(t, "hidden", tc.hidden, "training", errors);
    read(t, "domain_order", tc.domain_order, "training", errors);
  }
  if (j.contains("regimes")) {
    std::vector<std::string> names;
    read(j, "regimes", names, "config", errors);
    cfg.regimes.clear();
    for (const auto& n : names) {
      try {
        cfg.regimes.push_back(regime_from_string(n));
      } catch (const ConfigError& e) {
        errors.emplace_back(e.what());
      }
    }
  }
  read(j, "seeds", cfg.seeds, "config", errors);
  if (j.contains("scenario")) {
    std::string s;
    read(j, "scenario", s, "config", errors);
    try {
      cfg.scenario = scenario_from_string(s);
    } catch (const ConfigError& e) {
      errors.emplace_back(e.what());
    }
  }
  read(j, "scenario_file", cfg.scenario_file, "config", errors);
  read(j, "jobs", cfg.jobs, "config", errors);
  read(j, "write_checkpoints", cfg.write_checkpoints, "config", errors);
  read(j, "gem_diagnostics", cfg.gem_diagnostics, "config", errors);
  read(j, "timings_in_csv", cfg.timings_in_csv, "config", errors);
  if (j.contains("evaluation")) {
    const auto& e = j["evaluation"];
    check_keys(e, "evaluation", {"mcc_seed", "regressor_hidden", "regressor_lr", "regressor_epochs", "regressor_batch_size"}, errors);
    read(e, "mcc_seed", cfg.mcc_seed, "evaluation", errors);
    read(e, "regressor_hidden", cfg.regressor.hidden, "evaluation", errors);
    read(e, "regressor_lr", cfg.regressor.lr, "evaluation", errors);
    read(e, "regressor_epochs", cfg.regressor.epochs, "evaluation", errors);
    read(e, "regressor_batch_size", cfg.regressor.batch_size, "evaluation", errors);
  }
  if (!errors.empty()) {
    std::string msg = "invalid experiment config:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) { return parse_experiment_config(read_file(path)); }

std::string experiment_config_json(const ExperimentConfig& cfg) {
  json j;
  const auto& g = cfg.generation;
  j["generation"] = {{"n", g.n},
                     {"n_s", g.n_s},
                     {"domains", g.domains},
                     {"train_per_domain", g.train_per_domain},
                     {"test_per_domain", g.test_per_domain},
                     {"family", to_string(g.family)},
                     {"mixed_combine", g.mixed_combine == MixedCombine::sum ? "sum" : "mixture"},
                     {"condition_bound", g.condition_bound},
                     {"mixing_slope", g.mixing_slope}};
  const auto& t = cfg.training;
  j["training"] = {{"epochs_per_domain", t.epochs_per_domain},
                   {"batch_size", t.batch_size},
                   {"lr", t.lr},
                   {"alpha", t.weights.alpha},
                   {"beta", t.weights.beta},
                   {"memory_capacity", t.memory_capacity},
                   {"gem_margin", t.gem_margin},
                   {"hidden", t.hidden},
                   {"domain_order", t.domain_order}};
  std::vector<std::string> regimes;
  for (auto r : cfg.regimes) regimes.push_back(to_string(r));
  j["regimes"] = regimes;
  j["seeds"] = cfg.seeds;
  j["scenario"] = to_string(cfg.scenario);
  if (!cfg.scenario_file.empty()) j["scenario_file"] = cfg.scenario_file;
  j["evaluation"] = {{"mcc_seed", cfg.mcc_seed},
                     {"regressor_hidden", cfg.regressor.hidden},
                     {"regressor_lr", cfg.regressor.lr},
                     {"regressor_epochs", cfg.regressor.epochs},
                     {"regressor_batch_size", cfg.regressor.batch_size}};
  j["jobs"] = cfg.jobs;
  j["write_checkpoints"] = cfg.write_checkpoints;
  j["gem_diagnostics"] = cfg.gem_diagnostics;
  j["timings_in_csv"] = cfg.timings_in_csv;
  return j.dump(2);
}

// ---------------------------------------------------------------- scenarios

std::optional<std::vector<DomainSpec>> scenario_specs(const ExperimentConfig& cfg, GenerationConfig& gen) {
  switch (cfg.scenario) {
    case Scenario::default_:
    case Scenario::increasing_domains: return std::nullopt;
    case Scenario::repeated_partial: {
      Rng spec_rng = Rng(gen.seed).split("specs");
      auto specs = sample_domain_specs(gen, spec_rng);
      // Second changing latent: distributions A, B, C, then C repeated.
      for (std::size_t u = 3; u < specs.size(); ++u) specs[u].changing[1] = specs[2].changing[1];
      return specs;
    }
    case Scenario::ordering_z1: {
      gen.n = 4;
      gen.n_s = 2;
      gen.domains = 3;
      gen.family = LatentFamily::gaussian;
      auto g = [](double m, double v) {
        ChangingLatent c;
        c.mean = m;
        c.variance = v;
        return c;
      };
      return std::vector<DomainSpec>{{0, {g(0.0, 1.0), g(0.0, 1.0)}},
                                     {1, {g(2.5, 0.3), g(0.0, 1.0)}},
                                     {2, {g(2.5, 0.3), g(-2.0, 0.5)}}};
    }
    case Scenario::custom: {
      auto specs = read_scenario_specs(cfg.scenario_file);
      gen.domains = specs.size();
      gen.n_s = specs.front().changing.size();
      if (gen.n_s > gen.n) throw ConfigError("scenario file has more changing latents than n");
      return specs;
    }
  }
  return std::nullopt;
}

GeneratedData scenario_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  GenerationConfig gen = cfg.generation;
  gen.seed = seed;
  auto specs = scenario_specs(cfg, gen);
  return generate(gen, specs);
}

mcc::MccReport evaluate_checkpoint(const nets::Model& model, const Dataset& data, const std::vector<int>& domains,
                                   std::uint64_t mcc_seed, const mcc::RegressorOptions& opts) {
  const std::size_t n = data.n, ns = data.n_s, nc = n - ns;
  std::size_t rows = 0;
  for (int u : domains) rows += data.domain(u).x_test.rows();
  Tensor x = Tensor::matrix(rows, n), truth = Tensor::matrix(rows, ns);
  std::size_t r = 0;
  for (int u : domains) {
    const auto& d = data.domain(u);
    for (std::size_t i = 0; i < d.x_test.rows(); ++i, ++r) {
      for (std::size_t j = 0; j < n; ++j) x(r, j) = d.x_test(i, j);
      for (std::size_t j = 0; j < ns; ++j) truth(r, j) = d.z_test(i, nc + j);
    }
  }
  const Tensor means = model.encode_mean(x);
  const std::size_t zc = model.config().n_c();
  Tensor est = Tensor::matrix(rows, ns);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < ns; ++j) est(i, j) = means(i, zc + j);
  return mcc::mcc(est, truth, mcc_seed, opts);
}

// ---------------------------------------------------------------- results

std::vector<CellAggregate> aggregate(const std::vector<ResultRow>& rows) {
  std::map<std::pair<int, std::size_t>, std::vector<const ResultRow*>> cells;
  for (const auto& r : rows)
    if (!r.failed) cells[{static_cast<int>(r.regime), r.train_domains}].push_back(&r);
  std::vector<CellAggregate> out;
  for (const auto& [key, members] : cells) {
    CellAggregate a;
    a.regime = static_cast<Regime>(key.first);
    a.train_domains = key.second;
    a.count = members.size();
    for (const auto* m : members) a.mean += m->mcc;
    a.mean /= static_cast<double>(a.count);
    if (a.count > 1) {
      double ss = 0.0;
      for (const auto* m : members) ss += (m->mcc - a.mean) * (m->mcc - a.mean);
      a.std = std::sqrt(ss / static_cast<double>(a.count - 1));
    }
    a.per_latent_mean.assign(members.front()->per_latent.size(), 0.0);
    for (const auto* m : members)
      for (std::size_t i = 0; i < a.per_latent_mean.size(); ++i) a.per_latent_mean[i] += m->per_latent[i];
    for (auto& v : a.per_latent_mean) v /= static_cast<double>(a.count);
    out.push_back(std::move(a));
  }
  return out;
}

std::string results_csv(const ExperimentResult& res, bool with_timings) {
  std::string s = "regime,seed,train_domains,mcc,runtime_s\n";
  for (const auto& r : res.rows) {
    const std::string mcc = r.failed ? std::string("failed") : fmt::format("{:.6f}", r.mcc);
    const std::string rt = with_timings ? fmt::format("{:.3f}", r.runtime_s) : std::string();
    s += fmt::format("{},{},{},{},{}\n", to_string(r.regime), r.seed, r.train_domains, mcc, rt);
  }
  for (const auto& a : res.aggregates) {
    s += fmt::format("{},aggregate,{},{:.6f}±{:.6f},\n", to_string(a.regime), a.train_domains, a.mean, a.std);
  }
  return s;
}

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double W = 640, H = 420, L = 70, R = 160, T = 40, B = 60;
  double x0 = INFINITY, x1 = -INFINITY;
  for (const auto& s : series)
    for (double x : s.x) x0 = std::min(x0, x), x1 = std::max(x1, x);
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (x1 == x0) x0 -= 1, x1 += 1;
  const double y0 = 0.0, y1 = 1.0;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (std::clamp(y, y0, y1) - y0) / (y1 - y0) * (H - T - B); };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      W, H, W, H);
  s += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", (L + W - R) / 2, title);
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", L, H - B, W - R, H - B);
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", L, T, L, H - B);
  for (int k = 0; k <= 5; ++k) {
    const double y = y0 + (y1 - y0) * k / 5.0;
    s += fmt::format("<line x1=\"{}\" y1=\"{:.1f}\" x2=\"{}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n", L, py(y), W - R, py(y));
    s += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.1f}</text>\n", L - 6, py(y) + 4, y);
  }
  const int ticks = static_cast<int>(std::min(10.0, x1 - x0));
  for (int k = 0; k <= ticks; ++k) {
    const double x = x0 + (x1 - x0) * k / std::max(1, ticks);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{:g}</text>\n", px(x), H - B + 18, x);
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", (L + W - R) / 2, H - 15, x_label);
  s += fmt::format("<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
                   (T + H - B) / 2, (T + H - B) / 2, y_label);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& se = series[i];
    const char* color = kColors[i % std::size(kColors)];
    std::string pts;
    for (std::size_t k = 0; k < se.x.size(); ++k) pts += fmt::format("{:.1f},{:.1f} ", px(se.x[k]), py(se.y[k]));
    if (se.x.size() > 1)
      s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", color, pts);
    for (std::size_t k = 0; k < se.x.size(); ++k)
      s += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3.5\" fill=\"{}\"/>\n", px(se.x[k]), py(se.y[k]), color);
    const double ly = T + 10 + 20.0 * static_cast<double>(i);
    s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>\n", W - R + 15,
                     ly, W - R + 40, ly, color);
    s += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", W - R + 46, ly + 4, se.label);
  }
  s += "</svg>\n";
  return s;
}

// ---------------------------------------------------------------- runner

namespace {

struct CellOutput {
  std::vector<ResultRow> rows;
  std::string error;
  std::string dataset_hash;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + p.string() + "'");
  os << text;
}

CellOutput run_cell(const ExperimentConfig& cfg, Regime regime, std::uint64_t seed, const std::string& out_dir) {
  CellOutput out;
  const GeneratedData gen = scenario_data(cfg, seed);
  const Dataset& data = gen.data;
  out.dataset_hash = content_hash(dataset_csv(data));
  TrainConfig tc = cfg.training;
  tc.regime = regime;
  tc.seed = seed;
  tc.gem_diagnostics = cfg.gem_diagnostics;
  const RunRecord run = train(data, tc);
  const auto order = tc.resolved_order(data);

  if (!out_dir.empty()) {
    const fs::path root(out_dir);
    write_train_log((root / "logs" / fmt::format("{}_s{}.csv", to_string(regime), seed)).string(), run);
    if (cfg.gem_diagnostics && regime == Regime::continual_gem)
      write_gem_diagnostics((root / "logs" / fmt::format("{}_s{}_gem.csv", to_string(regime), seed)).string(), run);
  }
  for (const auto& ck : run.checkpoints) {
    const std::size_t t = ck.trained_domains.size();
    std::vector<int> eval;
    if (cfg.scenario == Scenario::increasing_domains) {
      eval = order;
    } else {
      eval.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(t));
    }
    const auto rep = evaluate_checkpoint(ck.model, data, eval, cfg.mcc_seed, cfg.regressor);
    ResultRow row;
    row.regime = regime;
    row.seed = seed;
    row.train_domains = t;
    row.eval_domains = eval;
    row.mcc = rep.mcc;
    for (const auto& p : rep.pairs) {
      row.per_latent.push_back(p.corr);
      row.per_latent_raw.push_back(p.raw);
    }
    row.runtime_s = run.wall_seconds;
    for (const auto& w : rep.warnings) spdlog::warn("{} seed {} d{}: {}", to_string(regime), seed, t, w);
    out.rows.push_back(std::move(row));
    if (!out_dir.empty() && cfg.write_checkpoints) {
      json extra = {{"regime", to_string(regime)}, {"seed", seed}, {"trained_domains", ck.trained_domains},
                    {"scenario", to_string(cfg.scenario)}, {"dataset_hash", out.dataset_hash}};
      nets::save_checkpoint(
          (fs::path(out_dir) / "checkpoints" / fmt::format("{}_s{}_d{}.ckpt", to_string(regime), seed, t)).string(),
          ck.model, &ck.adam, extra.dump());
    }
  }
  return out;
}

void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& res, const std::vector<CellOutput>& cells,
                   const std::vector<std::pair<Regime, std::uint64_t>>& keys, const fs::path& root) {
  write_text(root / "results.csv", results_csv(res, cfg.timings_in_csv));

  std::string pairs = "regime,seed,train_domains,latent,raw_corr,corr\n";
  for (const auto& r : res.rows) {
    for (std::size_t i = 0; i < r.per_latent.size(); ++i)
      pairs += fmt::format("{},{},{},{},{:.6f},{:.6f}\n", to_string(r.regime), r.seed, r.train_domains, i,
                           r.per_latent_raw[i], r.per_latent[i]);
  }
  write_text(root / "pairs.csv", pairs);

  json summary;
  summary["scenario"] = to_string(cfg.scenario);
  summary["config"] = json::parse(experiment_config_json(cfg));
  json cells_j = json::array();
  for (std::size_t k = 0; k < keys.size(); ++k) {
    json c = {{"regime", to_string(keys[k].first)}, {"seed", keys[k].second},
              {"status", cells[k].error.empty() ? "ok" : "failed"}};
    if (!cells[k].error.empty()) c["error"] = cells[k].error;
    if (!cells[k].rows.empty()) c["runtime_s"] = cells[k].rows.front().runtime_s;
    cells_j.push_back(c);
  }
  summary["cells"] = cells_j;
  json agg = json::array();
  for (const auto& a : res.aggregates) {
    agg.push_back({{"regime", to_string(a.regime)}, {"train_domains", a.train_domains}, {"seeds", a.count},
                   {"mcc_mean", a.mean}, {"mcc_std", a.std}, {"per_latent_mean", a.per_latent_mean}});
  }
  summary["aggregates"] = agg;
  json rows = json::array();
  for (const auto& r : res.rows) {
    if (r.failed) continue;
    rows.push_back({{"regime", to_string(r.regime)}, {"seed", r.seed}, {"train_domains", r.train_domains},
                    {"eval_domains", r.eval_domains}, {"mcc", r.mcc}, {"per_latent", r.per_latent},
                    {"per_latent_raw", r.per_latent_raw}});
  }
  summary["rows"] = rows;
  summary["failures"] = res.failures;
  summary["wall_seconds"] = res.wall_seconds;
  write_text(root / "summary.json", summary.dump(2) + "\n");

  json manifest;
  manifest["config"] = json::parse(experiment_config_json(cfg));
  json hashes = json::object();
  for (std::size_t k = 0; k < keys.size(); ++k)
    if (!cells[k].dataset_hash.empty()) hashes[std::to_string(keys[k].second)] = cells[k].dataset_hash;
  manifest["dataset_hashes"] = hashes;
  manifest["wall_seconds"] = res.wall_seconds;
  write_text(root / "run_manifest.json", manifest.dump(2) + "\n");

  // MCC against number of trained domains, one line per regime.
  std::vector<Series> overall;
  const std::size_t ns = res.aggregates.empty() ? 0 : res.aggregates.front().per_latent_mean.size();
  std::vector<std::vector<Series>> per_latent(ns);
  for (auto regime : cfg.regimes) {
    Series s{to_string(regime), {}, {}};
    std::vector<Series> lat(ns, Series{to_string(regime), {}, {}});
    for (const auto& a : res.aggregates) {
      if (a.regime != regime) continue;
      s.x.push_back(static_cast<double>(a.train_domains));
      s.y.push_back(a.mean);
      for (std::size_t i = 0; i < ns && i < a.per_latent_mean.size(); ++i) {
        lat[i].x.push_back(static_cast<double>(a.train_domains));
        lat[i].y.push_back(a.per_latent_mean[i]);
      }
    }
    overall.push_back(std::move(s));
    for (std::size_t i = 0; i < ns; ++i) per_latent[i].push_back(std::move(lat[i]));
  }
  write_text(root / "plots" / "mcc_vs_domains.svg",
             svg_line_chart("MCC (" + to_string(cfg.scenario) + ")", "number of trained domains", "MCC", overall));
  for (std::size_t i = 0; i < ns; ++i) {
    write_text(root / "plots" / fmt::format("mcc_z{}.svg", i + 1),
               svg_line_chart(fmt::format("changing latent z{} ({})", i + 1, to_string(cfg.scenario)),
                              "number of trained domains", "|corr|", per_latent[i]));
  }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  if (!out_dir.empty()) {
    for (const char* sub : {"", "checkpoints", "logs", "plots"}) fs::create_directories(fs::path(out_dir) / sub);
  }
  std::vector<std::pair<Regime, std::uint64_t>> keys;
  for (auto r : cfg.regimes)
    for (auto s : cfg.seeds) keys.emplace_back(r, s);
  std::vector<CellOutput> cells(keys.size());

  std::size_t jobs = cfg.jobs ? cfg.jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, keys.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < keys.size(); k = next++) {
      const auto [regime, seed] = keys[k];
      try {
        cells[k] = run_cell(cfg, regime, seed, out_dir);
        spdlog::info("cell {} seed {} done", to_string(regime), seed);
      } catch (const std::exception& e) {
        cells[k].error = e.what();
        spdlog::error("cell {} seed {} failed: {}", to_string(regime), seed, e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  ExperimentResult res;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    if (!cells[k].error.empty()) {
      ResultRow failed;
      failed.regime = keys[k].first;
      failed.seed = keys[k].second;
      failed.failed = true;
      failed.error = cells[k].error;
      res.rows.push_back(failed);
      res.failures.push_back(fmt::format("{} seed {}: {}", to_string(keys[k].first), keys[k].second, cells[k].error));
      continue;
    }
    for (auto& r : cells[k].rows) res.rows.push_back(r);
  }
  res.aggregates = aggregate(res.rows);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!out_dir.empty()) write_outputs(cfg, res, cells, keys, fs::path(out_dir));
  return res;
}

}  // namespace ccica
