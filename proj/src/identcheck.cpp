#include "ccica/identcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "ccica/error.hpp"
#include "ccica/linalg.hpp"

namespace ccica::ident {

namespace {

constexpr double kHalfLogTwoPi = 0.91893853320467274178;  // 0.5 * log(2 pi)

const DomainSpec& spec_of(const std::vector<DomainSpec>& specs, int u) {
  for (const auto& s : specs)
    if (s.domain == u) return s;
  throw ConfigError("no spec for domain " + std::to_string(u));
}

// Base variable m of the mixed family: 0.5 N(0,1) + 0.5 N(offset,1).
struct MixtureTerms {
  double log_p, d1, d2;
};

MixtureTerms mixture_terms(double m) {
  const double a = -0.5 * m * m;
  const double b = -0.5 * (m - kMixtureOffset) * (m - kMixtureOffset);
  const double hi = std::max(a, b);
  const double log_p = std::log(0.5) - kHalfLogTwoPi + hi + std::log(std::exp(a - hi) + std::exp(b - hi));
  const double r1 = 1.0 / (1.0 + std::exp(b - a));
  const double r2 = 1.0 - r1;
  const double m2 = m - kMixtureOffset;
  const double g = -(r1 * m + r2 * m2);
  const double h = r1 * (m * m - 1.0) + r2 * (m2 * m2 - 1.0);
  return {log_p, g, h - g * g};
}

}  // namespace

double log_density(const ChangingLatent& c, double z) {
  switch (c.family) {
    case LatentFamily::gaussian: {
      const double d = z - c.mean;
      return -0.5 * d * d / c.variance - 0.5 * std::log(c.variance) - kHalfLogTwoPi;
    }
    case LatentFamily::summed_gaussian: {
      // The standardized sum is exactly N(0, 1).
      const double d = (z - c.shift) / c.scale;
      return -0.5 * d * d - std::log(c.scale) - kHalfLogTwoPi;
    }
    case LatentFamily::mixed_gaussian: {
      const double k = std::sqrt(kMixtureVariance) / c.scale;
      const double m = (z - c.shift) * k + kMixtureMean;
      return std::log(k) + mixture_terms(m).log_p;
    }
  }
  throw ConfigError("unsupported latent family");
}

LogDensityDerivs log_density_derivs(const ChangingLatent& c, double z) {
  if (!std::isfinite(z)) throw NumericalError("log_density_derivs: z is not finite");
  switch (c.family) {
    case LatentFamily::gaussian: return {-(z - c.mean) / c.variance, -1.0 / c.variance};
    case LatentFamily::summed_gaussian: {
      const double v = c.scale * c.scale;
      return {-(z - c.shift) / v, -1.0 / v};
    }
    case LatentFamily::mixed_gaussian: {
      const double k = std::sqrt(kMixtureVariance) / c.scale;
      const auto t = mixture_terms((z - c.shift) * k + kMixtureMean);
      return {k * t.d1, k * k * t.d2};
    }
  }
  throw ConfigError("unsupported latent family");
}

LogDensityDerivs log_density_derivs(const std::vector<DomainSpec>& specs, std::size_t i, int u, double z) {
  const DomainSpec& s = spec_of(specs, u);
  if (i >= s.changing.size()) throw ConfigError("latent index " + std::to_string(i) + " out of range");
  return log_density_derivs(s.changing[i], z);
}

std::string to_string(MatrixKind k) { return k == MatrixKind::lemma1 ? "lemma1" : "theorem1"; }

MatrixKind matrix_kind_from_string(const std::string& s) {
  if (s == "lemma1") return MatrixKind::lemma1;
  if (s == "theorem1") return MatrixKind::theorem1;
  throw ConfigError("unknown matrix kind '" + s + "' (expected lemma1 or theorem1)");
}

std::size_t rows_needed(MatrixKind k, std::size_t n_s) { return k == MatrixKind::lemma1 ? 2 * n_s : n_s; }

IdentMatrix build_matrix(const std::vector<DomainSpec>& specs, MatrixKind kind, const std::vector<double>& z, int u0,
                         std::vector<int> domains) {
  if (specs.empty()) throw ConfigError("build_matrix: no domain specs");
  const std::size_t ns = specs.front().changing.size();
  if (z.size() != ns) throw ShapeError("build_matrix: z has " + std::to_string(z.size()) + " entries, n_s is " +
                                       std::to_string(ns));
  const std::size_t m = rows_needed(kind, ns);
  if (domains.empty()) {
    for (const auto& s : specs) {
      if (s.domain != u0 && domains.size() < m) domains.push_back(s.domain);
    }
  }
  if (domains.size() != m) {
    throw ConfigError("build_matrix: " + to_string(kind) + " needs " + std::to_string(m + 1) +
                      " domains including the reference, got " + std::to_string(specs.size()));
  }
  const DomainSpec& ref = spec_of(specs, u0);

  IdentMatrix out;
  out.kind = kind;
  out.z = z;
  out.u0 = u0;
  out.domains = domains;
  out.entries = Tensor::matrix(m, kind == MatrixKind::lemma1 ? 2 * ns : ns);
  std::vector<LogDensityDerivs> base(ns);
  for (std::size_t i = 0; i < ns; ++i) base[i] = log_density_derivs(ref.changing.at(i), z[i]);
  for (std::size_t k = 0; k < m; ++k) {
    const DomainSpec& s = spec_of(specs, domains[k]);
    for (std::size_t i = 0; i < ns; ++i) {
      const auto d = log_density_derivs(s.changing.at(i), z[i]);
      if (kind == MatrixKind::lemma1) {
        out.entries(k, i) = d.d2 - base[i].d2;
        out.entries(k, ns + i) = d.d1 - base[i].d1;
      } else {
        out.entries(k, i) = d.d1 - base[i].d1;
      }
    }
  }
  out.singular_values = linalg::jacobi_svd(out.entries).singular_values;
  out.rank = linalg::numerical_rank(out.singular_values);
  out.full_rank = out.rank == m;
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> dependent_columns(const Tensor& m, double threshold) {
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> norms(c, 0.0);
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < r; ++i) norms[j] += m(i, j) * m(i, j);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = a + 1; b < c; ++b) {
      if (norms[a] == 0.0 || norms[b] == 0.0) {
        out.emplace_back(a, b);
        continue;
      }
      double d = 0.0;
      for (std::size_t i = 0; i < r; ++i) d += m(i, a) * m(i, b);
      if (std::abs(d) / std::sqrt(norms[a] * norms[b]) > threshold) out.emplace_back(a, b);
    }
  }
  return out;
}

std::vector<double> halton_point(std::size_t index, std::size_t dims, double bound) {
  static constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  if (dims > std::size(kPrimes)) throw ConfigError("halton_point: at most 16 dimensions");
  std::vector<double> p(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    const int base = kPrimes[d];
    double f = 1.0, r = 0.0;
    for (std::size_t i = index; i > 0; i /= static_cast<std::size_t>(base)) {
      f /= base;
      r += f * static_cast<double>(i % static_cast<std::size_t>(base));
    }
    p[d] = -bound + 2.0 * bound * r;
  }
  return p;
}

namespace {

// Visits every (u0, ordered-by-spec subset of m other domains); stops when fn returns true.
template <typename Fn>
bool any_subset(const std::vector<DomainSpec>& specs, std::size_t m, Fn&& fn) {
  const std::size_t t = specs.size();
  for (std::size_t r = 0; r < t; ++r) {
    std::vector<int> others;
    for (std::size_t j = 0; j < t; ++j)
      if (j != r) others.push_back(specs[j].domain);
    if (others.size() < m) return false;
    std::vector<bool> pick(others.size(), false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(m), true);
    do {
      std::vector<int> chosen;
      for (std::size_t j = 0; j < others.size(); ++j)
        if (pick[j]) chosen.push_back(others[j]);
      if (fn(specs[r].domain, chosen)) return true;
    } while (std::prev_permutation(pick.begin(), pick.end()));
  }
  return false;
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

}  // namespace

IdentReport check_scenario(const std::vector<DomainSpec>& specs, MatrixKind kind, Rng& rng, const CheckOptions& opts) {
  if (specs.empty()) throw ConfigError("check_scenario: no domain specs");
  const std::size_t ns = specs.front().changing.size();
  const std::size_t m = rows_needed(kind, ns);
  if (specs.size() < m + 1) {
    throw ConfigError("check_scenario: " + to_string(kind) + " needs " + std::to_string(m + 1) + " domains, got " +
                      std::to_string(specs.size()));
  }
  IdentReport rep;
  rep.kind = kind;
  rep.n_s = ns;
  rep.u0 = specs.front().domain;
  for (std::size_t k = 1; k <= m; ++k) rep.domains.push_back(specs[k].domain);

  const double subsets = static_cast<double>(specs.size()) * binomial(specs.size() - 1, m);
  const bool search = subsets <= static_cast<double>(opts.max_subsets);

  const std::size_t n_prior = opts.n_points / 2;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> dep_counts;
  std::size_t full = 0, exists = 0;
  for (std::size_t p = 0; p < opts.n_points; ++p) {
    std::vector<double> z(ns);
    if (p < n_prior) {
      // Prior draw: a domain chosen at random, then z_s from its conditional.
      const auto& s = specs[rng.below(specs.size())];
      GenerationConfig gc;
      gc.n = ns;
      gc.n_s = ns;
      const Tensor row = sample_latents(s, gc, 1, rng);
      for (std::size_t i = 0; i < ns; ++i) z[i] = row(0, i);
    } else {
      z = halton_point(p - n_prior + 1, ns, opts.grid_bound);
    }
    const IdentMatrix mat = build_matrix(specs, kind, z, rep.u0, rep.domains);
    PointVerdict v;
    v.z = z;
    v.sigma_max = mat.singular_values.front();
    v.sigma_min = mat.singular_values.back();
    v.rank = mat.rank;
    v.full_rank = mat.full_rank;
    v.dependent = dependent_columns(mat.entries, opts.dependency_threshold);
    v.any_full_rank = v.full_rank;
    if (!v.any_full_rank && search) {
      v.any_full_rank = any_subset(specs, m, [&](int u0, const std::vector<int>& chosen) {
        return build_matrix(specs, kind, z, u0, chosen).full_rank;
      });
    }
    full += v.full_rank ? 1 : 0;
    exists += v.any_full_rank ? 1 : 0;
    for (const auto& d : v.dependent) ++dep_counts[{d.first + 1, d.second + 1}];
    rep.points.push_back(std::move(v));
  }
  const double n = static_cast<double>(opts.n_points);
  rep.full_rank_fraction = opts.n_points ? static_cast<double>(full) / n : 0.0;
  rep.exists_full_rank_fraction = opts.n_points ? static_cast<double>(exists) / n : 0.0;
  for (const auto& [pair, c] : dep_counts) rep.dependency_rate[pair] = static_cast<double>(c) / n;
  return rep;
}

std::string IdentReport::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["n_s"] = n_s;
  j["reference_domain"] = u0;
  j["domains"] = domains;
  j["points"] = points.size();
  j["full_rank_fraction"] = full_rank_fraction;
  j["exists_full_rank_fraction"] = exists_full_rank_fraction;
  nlohmann::json deps = nlohmann::json::array();
  for (const auto& [pair, rate] : dependency_rate) deps.push_back({{"columns", {pair.first, pair.second}}, {"rate", rate}});
  j["dependent_columns"] = deps;
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) {
    pts.push_back({{"z", p.z},
                   {"sigma_min", p.sigma_min},
                   {"sigma_max", p.sigma_max},
                   {"rank", p.rank},
                   {"full_rank", p.full_rank},
                   {"any_full_rank", p.any_full_rank}});
  }
  j["point_verdicts"] = pts;
  return j.dump(2);
}

std::string IdentReport::to_table() const {
  std::ostringstream os;
  os << fmt::format("{} matrix, n_s = {}, reference domain {}, {} points\n", to_string(kind), n_s, u0, points.size());
  os << fmt::format("  full rank (fixed domains)     {:6.1f}%\n", 100.0 * full_rank_fraction);
  os << fmt::format("  full rank (some domain set)   {:6.1f}%\n", 100.0 * exists_full_rank_fraction);
  double lo = INFINITY, hi = 0.0;
  for (const auto& p : points) {
    const double ratio = p.sigma_max > 0.0 ? p.sigma_min / p.sigma_max : 0.0;
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  os << fmt::format("  sigma_min / sigma_max range   [{:.3g}, {:.3g}]\n", lo, hi);
  if (dependency_rate.empty()) {
    os << "  no dependent column pairs\n";
  } else {
    for (const auto& [pair, rate] : dependency_rate)
      os << fmt::format("  columns {} and {} dependent at {:.1f}% of points\n", pair.first, pair.second, 100.0 * rate);
  }
  return os.str();
}

ChangeAudit minimal_change_audit(const std::vector<DomainSpec>& specs) {
  ChangeAudit a;
  if (specs.empty()) return a;
  const std::size_t ns = specs.front().changing.size();
  for (std::size_t i = 0; i < ns; ++i) {
    std::vector<ChangingLatent> seen;
    for (const auto& s : specs) {
      const auto& c = s.changing.at(i);
      if (std::find(seen.begin(), seen.end(), c) == seen.end()) seen.push_back(c);
    }
    a.distinct.push_back(seen.size());
    if (ns >= 2 && seen.size() < 3) a.flagged.push_back(i);
  }
  return a;
}

std::vector<DomainSpec> partial_change_specs(std::size_t distinct_z2) {
  if (distinct_z2 < 1 || distinct_z2 > 5) throw ConfigError("partial_change_specs: distinct_z2 must be in [1, 5]");
  auto g = [](double m, double v) {
    ChangingLatent c;
    c.mean = m;
    c.variance = v;
    return c;
  };
  const ChangingLatent z1[] = {g(-2.0, 0.5), g(-1.0, 0.8), g(0.5, 0.3), g(1.5, 1.0), g(3.0, 0.6)};
  const ChangingLatent z2[] = {g(0.0, 1.0), g(2.0, 0.4), g(-1.5, 0.7), g(1.0, 0.2), g(-3.0, 0.9)};
  std::vector<DomainSpec> specs;
  for (std::size_t u = 0; u < 5; ++u) {
    const std::size_t k = std::min(u, distinct_z2 - 1);
    specs.push_back({static_cast<int>(u), {z1[u], z2[k]}});
  }
  return specs;
}

}  // namespace ccica::ident
