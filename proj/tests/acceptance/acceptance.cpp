// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails.
//
//   acceptance [work_dir] [criteria]     e.g.  acceptance /tmp/acc 1,2,3

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ccica/assignment.hpp"
#include "ccica/dataset_io.hpp"
#include "ccica/experiment.hpp"
#include "ccica/gem.hpp"
#include "ccica/identcheck.hpp"
#include "ccica/mcc.hpp"
#include "ccica/nets.hpp"
#include "oracles.hpp"
#include "random_graph.hpp"

using namespace ccica;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using ccica::ndgrad::OpTag;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ------------------------------------------------------------------ 1

Verdict autodiff_graphs() {
  const auto t0 = Clock::now();
  Rng rng(20240601);
  const auto& ops = oracle::all_ops();
  std::set<OpTag> covered;
  std::size_t entries = 0, failures = 0, rejected = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    auto prog = oracle::random_program(rng, ops[i % ops.size()]);
    // Central differences are undefined across a kink; draw again there.
    while (oracle::evaluate(prog, prog.inputs, false).kink_distance < 1e-3) {
      ++rejected;
      prog = oracle::random_program(rng, ops[i % ops.size()]);
    }
    const auto info = oracle::evaluate(prog, prog.inputs, false);
    covered.insert(info.ops.begin(), info.ops.end());
    const auto res = oracle::check_program(prog);
    entries += res.entries;
    failures += res.failures;
    worst = std::max(worst, res.worst_rel);
  }
  const double secs = seconds_since(t0);
  const bool all_ops = std::all_of(ops.begin(), ops.end(), [&](OpTag t) { return covered.count(t) != 0; });
  return {failures == 0 && all_ops && secs < 60.0,
          fmt::format("200 graphs, {} gradient entries, {} mismatches, {} of {} ops covered, worst rel err {:.2e}, "
                      "{} kink redraws, {:.1f}s",
                      entries, failures, covered.size(), ops.size(), worst, rejected, secs)};
}

// ------------------------------------------------------------------ 2

Verdict spline_flow() {
  nets::ModelConfig cfg;
  Rng rng(2);
  bool ok = true;
  std::ostringstream notes;

  nets::FlowBank ident(cfg);
  ident.ensure(0);
  Tensor pts = Tensor::matrix(1000, cfg.n_s);
  for (auto& v : pts.data()) v = rng.uniform(-5.0, 5.0);
  {
    const auto [y, ld] = ident.forward_values(0, pts);
    double dy = 0.0, dl = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      dy = std::max(dy, std::abs(y[i] - pts[i]));
      dl = std::max(dl, std::abs(ld[i]));
    }
    ok = ok && dy < 1e-12 && dl < 1e-12;
    notes << fmt::format("identity init |y-x| {:.1e} |logdet| {:.1e}; ", dy, dl);
  }

  double worst_rt = 0.0, worst_ld = 0.0;
  bool outside_exact = true;
  for (int trial = 0; trial < 5; ++trial) {
    nets::FlowBank bank(cfg);
    bank.ensure(0);
    auto& p = bank.params(0);
    for (auto* q : {&p.widths, &p.heights, &p.derivatives})
      for (auto& v : q->value.data()) v = rng.normal(0.0, 1.5);
    const auto [y, ld] = bank.forward_values(0, pts);
    const Tensor back = bank.inverse(0, y);
    for (std::size_t i = 0; i < pts.size(); ++i) worst_rt = std::max(worst_rt, std::abs(back[i] - pts[i]));

    const double h = 1e-5;
    Tensor up = pts, down = pts;
    for (auto& v : up.data()) v += h;
    for (auto& v : down.data()) v -= h;
    const Tensor yu = bank.forward_values(0, up).first;
    const Tensor yd = bank.forward_values(0, down).first;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::abs(std::abs(pts[i]) - 5.0) < 2 * h) continue;  // straddles the bound
      worst_ld = std::max(worst_ld, std::abs(ld[i] - std::log((yu[i] - yd[i]) / (2 * h))));
    }

    Tensor outside = Tensor::matrix(200, cfg.n_s);
    for (std::size_t i = 0; i < outside.size(); ++i) {
      const double mag = rng.uniform(5.0 + 1e-9, 50.0);
      outside[i] = i % 2 ? mag : -mag;
    }
    const auto [yo, lo] = bank.forward_values(0, outside);
    const Tensor io = bank.inverse(0, outside);
    for (std::size_t i = 0; i < outside.size(); ++i)
      outside_exact = outside_exact && yo[i] == outside[i] && lo[i] == 0.0 && io[i] == outside[i];
  }
  ok = ok && worst_rt < 1e-8 && worst_ld < 1e-5 && outside_exact;
  notes << fmt::format("round trip {:.1e}, logdet vs FD {:.1e}, outside exact {}", worst_rt, worst_ld,
                       outside_exact ? "yes" : "no");
  return {ok, notes.str()};
}

// ------------------------------------------------------------------ 3

double dot(const std::vector<double>& a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Verdict gem_qp() {
  Rng rng(3);
  double worst = 0.0, worst_feas = 0.0;
  std::size_t projected = 0;
  bool noop_bitwise = true;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 1 + rng.below(3);
    const std::size_t dim = k + rng.below(21 - k);
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    std::vector<std::vector<double>> rows(k, std::vector<double>(dim));
    for (auto& r : rows) {
      for (auto& x : r) x = rng.normal();
      if (rng.uniform() < 0.6 && dot(r, v) > 0)
        for (auto& x : r) x = -x;
    }
    const auto p = gem::project(v, rows);
    projected += p.projected;
    const auto ref = oracle::qp_projection(v, rows);
    for (std::size_t j = 0; j < dim; ++j) worst = std::max(worst, std::abs(p.v[j] - ref[j]));
    for (const auto& r : rows) worst_feas = std::min(worst_feas, dot(r, p.v));

    // The same rows flipped into agreement with v must leave v untouched.
    for (auto& r : rows)
      if (dot(r, v) < 0)
        for (auto& x : r) x = -x;
    const auto q = gem::project(v, rows);
    noop_bitwise = noop_bitwise && !q.projected && q.v.size() == v.size() &&
                   std::memcmp(q.v.data(), v.data(), v.size() * sizeof(double)) == 0;
  }
  return {worst < 1e-6 && worst_feas >= -1e-8 && noop_bitwise,
          fmt::format("500 instances ({} needed projection), max |v'-oracle| {:.1e}, min B v' {:.1e}, no-op bitwise {}",
                      projected, worst, worst_feas, noop_bitwise ? "yes" : "no")};
}

// ------------------------------------------------------------------ 4

Verdict assignment() {
  Rng rng(4);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    Tensor s = Tensor::matrix(n, n);
    for (auto& v : s.data()) v = rng.uniform();
    if (assign_max(s) != oracle::brute_force_assignment(s)) ++mismatches;
  }
  return {mismatches == 0, fmt::format("500 random tables up to 6x6, {} mismatches", mismatches)};
}

// ------------------------------------------------------------------ 5

Verdict mcc_sanity() {
  bool ok = true;
  std::ostringstream notes;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    const std::size_t n = 10000;
    Tensor z = Tensor::matrix(n, 2), warped = Tensor::matrix(n, 2), noise = Tensor::matrix(n, 2);
    for (auto& v : z.data()) v = rng.normal();
    for (auto& v : noise.data()) v = rng.normal();
    for (std::size_t r = 0; r < n; ++r) {
      warped(r, 0) = std::pow(z(r, 1), 3);
      warped(r, 1) = std::pow(z(r, 0), 3);
    }
    const double same = mcc::mcc(z, z, seed).mcc;
    const double cubed = mcc::mcc(warped, z, seed).mcc;
    const double indep = mcc::mcc(noise, z, seed).mcc;
    ok = ok && same >= 0.999 && cubed >= 0.98 && indep < 0.15;
    notes << fmt::format("seed {}: identity {:.4f} cubed {:.4f} noise {:.4f}; ", seed, same, cubed, indep);
  }
  return {ok, notes.str()};
}

// ------------------------------------------------------------------ 6

std::vector<DomainSpec> random_specs(Rng& rng, std::size_t domains, std::size_t n_s) {
  GenerationConfig cfg;
  cfg.n = n_s;
  cfg.n_s = n_s;
  cfg.domains = domains;
  return sample_domain_specs(cfg, rng);
}

std::vector<double> prior_draw(const std::vector<DomainSpec>& specs, Rng& rng) {
  const auto& s = specs[rng.below(specs.size())];
  std::vector<double> z;
  for (const auto& c : s.changing) z.push_back(rng.normal(c.mean, std::sqrt(c.variance)));
  return z;
}

Verdict identifiability() {
  Rng rng(6);
  bool ok = true;
  std::ostringstream notes;
  for (std::size_t n_s : {2u, 4u}) {
    for (auto kind : {ident::MatrixKind::theorem1, ident::MatrixKind::lemma1}) {
      std::size_t full = 0;
      for (int t = 0; t < 1000; ++t) {
        const auto specs = random_specs(rng, ident::rows_needed(kind, n_s) + 1, n_s);
        full += ident::build_matrix(specs, kind, prior_draw(specs, rng), specs[0].domain).full_rank;
      }
      ok = ok && full >= 990;
      notes << fmt::format("(a) n_s={} {} full rank {}/1000; ", n_s, ident::to_string(kind), full);
    }
  }

  Rng prng(61);
  const auto degenerate = ident::check_scenario(ident::partial_change_specs(2), ident::MatrixKind::lemma1, prng);
  std::size_t deficient = 0, flagged_24 = 0;
  for (const auto& p : degenerate.points) {
    deficient += !p.full_rank;
    flagged_24 += std::count(p.dependent.begin(), p.dependent.end(), std::pair<std::size_t, std::size_t>{1, 3});
  }
  const bool b_ok = deficient == degenerate.points.size() && flagged_24 == degenerate.points.size();
  ok = ok && b_ok;
  notes << fmt::format("(b) degenerate: {}/{} rank-deficient, columns 2&4 dependent at {}/{}; ", deficient,
                       degenerate.points.size(), flagged_24, degenerate.points.size());

  // (c) collapse random latents to 1..3 distinct distributions and compare.
  std::size_t audit_errors = 0;
  for (int t = 0; t < 300; ++t) {
    const std::size_t n_s = 2 + rng.below(3);
    auto specs = random_specs(rng, 5 + rng.below(5), n_s);
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < n_s; ++i) {
      const std::size_t distinct = 1 + rng.below(std::min<std::size_t>(specs.size(), 5));
      for (std::size_t u = distinct; u < specs.size(); ++u) specs[u].changing[i] = specs[rng.below(distinct)].changing[i];
      if (distinct < 3) expected.push_back(i);
    }
    rng.shuffle(specs);
    if (ident::minimal_change_audit(specs).flagged != expected) ++audit_errors;
  }
  ok = ok && audit_errors == 0;
  notes << fmt::format("(c) audit mismatches {}/300", audit_errors);
  return {ok, notes.str()};
}

// ------------------------------------------------------------------ 7-10

ExperimentConfig desk_config() {
  ExperimentConfig cfg;
  cfg.generation.n = 4;
  cfg.generation.n_s = 2;
  cfg.generation.domains = 5;
  cfg.generation.train_per_domain = 2000;
  cfg.generation.test_per_domain = 1000;
  cfg.generation.family = LatentFamily::gaussian;
  cfg.training.epochs_per_domain = 20;
  cfg.seeds = {1, 2, 3};
  cfg.write_checkpoints = false;
  return cfg;
}

// Mean over seeds of `value(row)` for rows of one regime trained on `t` domains.
double seed_mean(const ExperimentResult& res, Regime r, std::size_t t,
                 const std::function<double(const ResultRow&)>& value = [](const ResultRow& row) { return row.mcc; }) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& row : res.rows) {
    if (row.regime != r || row.train_domains != t) continue;
    s += value(row);
    ++n;
  }
  return n ? s / static_cast<double>(n) : std::nan("");
}

std::string per_seed(const ExperimentResult& res, Regime r, std::size_t t) {
  std::string out;
  for (const auto& row : res.rows)
    if (row.regime == r && row.train_domains == t) out += fmt::format("{}{:.3f}", out.empty() ? "" : "/", row.mcc);
  return out;
}

struct DeskRun {
  ExperimentResult result;
  std::string csv;
  double seconds = 0.0;
};

DeskRun run_desk(const ExperimentConfig& cfg, const fs::path& dir) {
  const auto t0 = Clock::now();
  DeskRun r;
  r.result = run_experiment(cfg, dir.string());
  r.seconds = seconds_since(t0);
  r.csv = read_file((dir / "results.csv").string());
  return r;
}

Verdict continual_vs_joint(const DeskRun& run) {
  if (!run.result.ok()) return {false, "experiment failed: " + run.result.failures.front()};
  const double c = seed_mean(run.result, Regime::continual_gem, 5);
  const double b = seed_mean(run.result, Regime::baseline, 5);
  const double j = seed_mean(run.result, Regime::joint, 5);
  const bool close = std::abs(c - j) <= 0.10;
  const bool beats = c >= b + 0.03;
  return {close && beats,
          fmt::format("mean MCC after 5 domains: continual {:.3f} ({}), baseline {:.3f} ({}), joint {:.3f} ({}); "
                      "|continual-joint| {:.3f} (<= 0.10: {}), continual-baseline {:+.3f} (>= 0.03: {}), {:.0f}s",
                      c, per_seed(run.result, Regime::continual_gem, 5), b, per_seed(run.result, Regime::baseline, 5),
                      j, per_seed(run.result, Regime::joint, 5), std::abs(c - j), close ? "yes" : "no", c - b,
                      beats ? "yes" : "no", run.seconds)};
}

Verdict increasing_domains(const fs::path& dir) {
  auto cfg = desk_config();
  cfg.generation.domains = 9;
  cfg.scenario = Scenario::increasing_domains;
  cfg.regimes = {Regime::continual_gem};
  const auto t0 = Clock::now();
  const auto res = run_experiment(cfg, dir.string());
  if (!res.ok()) return {false, "experiment failed: " + res.failures.front()};
  const double m2 = seed_mean(res, Regime::continual_gem, 2);
  const double m5 = seed_mean(res, Regime::continual_gem, 5);
  const double m9 = seed_mean(res, Regime::continual_gem, 9);
  std::string series;
  for (std::size_t t = 1; t <= 9; ++t) series += fmt::format("{}{:.3f}", t == 1 ? "" : " ", seed_mean(res, Regime::continual_gem, t));
  const bool rise = m5 >= m2 + 0.05;
  const bool plateau = m9 >= m5 - 0.02;
  return {rise && plateau, fmt::format("mean MCC on all 9 test domains by checkpoint: [{}]; after5-after2 {:+.3f} "
                                       "(>= 0.05: {}), after9-after5 {:+.3f} (>= -0.02: {}), {:.0f}s",
                                       series, m5 - m2, rise ? "yes" : "no", m9 - m5, plateau ? "yes" : "no",
                                       seconds_since(t0))};
}

Verdict ordering(const fs::path& dir) {
  auto cfg = desk_config();
  cfg.scenario = Scenario::ordering_z1;
  cfg.regimes = {Regime::continual_gem, Regime::joint};
  const auto t0 = Clock::now();
  const auto res = run_experiment(cfg, dir.string());
  if (!res.ok()) return {false, "experiment failed: " + res.failures.front()};
  auto z1 = [](const ResultRow& row) { return row.per_latent.at(0); };
  const double c = seed_mean(res, Regime::continual_gem, 3, z1);
  const double j = seed_mean(res, Regime::joint, 3, z1);
  return {c >= j + 0.03, fmt::format("mean MCC(z1) after 3 domains: continual {:.3f}, joint {:.3f}, "
                                     "difference {:+.3f} (>= 0.03: {}), {:.0f}s",
                                     c, j, c - j, c >= j + 0.03 ? "yes" : "no", seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "ccica_acceptance";
  std::set<int> only;
  if (argc > 2) {
    std::istringstream in(argv[2]);
    for (std::string tok; std::getline(in, tok, ',');) only.insert(std::stoi(tok));
  }
  auto wanted = [&](int c) { return only.empty() || only.count(c) != 0; };
  fs::create_directories(work);

  int failed = 0;
  auto report = [&](int id, const std::string& title, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << fmt::format("criterion {:>2} {}: {} -- {}", id, v.pass ? "PASS" : "FAIL", title, v.detail)
              << std::endl;
  };

  report(1, "autodiff vs finite differences", autodiff_graphs);
  report(2, "spline flow", spline_flow);
  report(3, "GEM projection vs active-set oracle", gem_qp);
  report(4, "assignment vs brute force", assignment);
  report(5, "MCC sanity", mcc_sanity);
  report(6, "identifiability checker", identifiability);

  DeskRun first;
  const bool need_desk = wanted(7) || wanted(10);
  if (need_desk) {
    try {
      first = run_desk(desk_config(), work / "desk_a");
    } catch (const std::exception& e) {
      first.result.failures.push_back(e.what());
    }
  }
  report(7, "continual-GEM comparable to joint, above baseline", [&] { return continual_vs_joint(first); });
  report(8, "increasing-domains trend", [&] { return increasing_domains(work / "increasing"); });
  report(9, "ordering experiment, z1", [&] { return ordering(work / "ordering"); });
  report(10, "determinism of the desk-scale matrix", [&] {
    auto cfg = desk_config();
    cfg.jobs = 1;  // a different worker count must not matter
    const auto second = run_desk(cfg, work / "desk_b");
    const bool same = !first.csv.empty() && second.csv == first.csv;
    return Verdict{same, fmt::format("results.csv {} ({} bytes, hash {} vs {})", same ? "identical" : "differs",
                                     second.csv.size(), content_hash(first.csv).substr(0, 12),
                                     content_hash(second.csv).substr(0, 12))};
  });

  std::cout << (failed ? fmt::format("{} criteria failed", failed) : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
