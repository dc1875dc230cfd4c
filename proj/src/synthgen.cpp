#include "ccica/synthgen.hpp"

#include <cmath>
#include <sstream>

#include "ccica/error.hpp"
#include "ccica/linalg.hpp"

namespace ccica {

std::string to_string(LatentFamily f) {
  switch (f) {
    case LatentFamily::gaussian: return "gaussian";
    case LatentFamily::mixed_gaussian: return "mixed-gaussian";
    case LatentFamily::summed_gaussian: return "summed-gaussian";
  }
  return "unknown";
}

LatentFamily latent_family_from_string(const std::string& s) {
  if (s == "gaussian") return LatentFamily::gaussian;
  if (s == "mixed-gaussian") return LatentFamily::mixed_gaussian;
  if (s == "summed-gaussian") return LatentFamily::summed_gaussian;
  throw ConfigError("unknown latent family '" + s + "'");
}

GenerationConfig GenerationConfig::defaults_for(std::size_t n, std::size_t n_s) {
  GenerationConfig cfg;
  cfg.n = n;
  cfg.n_s = n_s;
  cfg.train_per_domain = n_s >= 4 ? 5000 : 10000;
  cfg.test_per_domain = 1000;
  return cfg;
}

void GenerationConfig::validate() const {
  std::ostringstream err;
  if (n_s < 1) err << "n_s must be >= 1; ";
  if (n_s > n) err << "n_s (" << n_s << ") must not exceed n (" << n << "); ";
  if (domains < 1) err << "domains must be >= 1; ";
  if (train_per_domain < 1) err << "train_per_domain must be > 0; ";
  if (test_per_domain < 1) err << "test_per_domain must be > 0; ";
  if (!(condition_bound > 1.0)) err << "condition_bound must be > 1; ";
  if (!(mixing_slope > 0.0)) err << "mixing_slope must be > 0; ";
  if (family == LatentFamily::summed_gaussian) err << "family must be gaussian or mixed-gaussian; ";
  const auto msg = err.str();
  if (!msg.empty()) throw ConfigError("invalid generation config: " + msg.substr(0, msg.size() - 2));
}

const DomainData& Dataset::domain(int u) const {
  for (const auto& d : domains)
    if (d.domain == u) return d;
  throw ConfigError("dataset has no domain " + std::to_string(u));
}

bool Dataset::operator==(const Dataset& other) const {
  if (n != other.n || n_s != other.n_s || domains.size() != other.domains.size()) return false;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto& a = domains[i];
    const auto& b = other.domains[i];
    if (a.domain != b.domain || a.x_train != b.x_train || a.z_train != b.z_train || a.x_test != b.x_test ||
        a.z_test != b.z_test)
      return false;
  }
  return true;
}

std::vector<DomainSpec> sample_domain_specs(const GenerationConfig& cfg, Rng& rng) {
  cfg.validate();
  const LatentFamily fam = (cfg.family == LatentFamily::mixed_gaussian && cfg.mixed_combine == MixedCombine::sum)
                               ? LatentFamily::summed_gaussian
                               : cfg.family;
  std::vector<DomainSpec> specs;
  specs.reserve(cfg.domains);
  for (std::size_t u = 0; u < cfg.domains; ++u) {
    DomainSpec s;
    s.domain = static_cast<int>(u);
    for (std::size_t i = 0; i < cfg.n_s; ++i) {
      ChangingLatent c;
      c.family = fam;
      if (fam == LatentFamily::gaussian) {
        c.mean = rng.uniform(-4.0, 4.0);
        c.variance = rng.uniform(0.01, 1.0);
      } else {
        c.scale = rng.uniform(0.01, 1.0);
        c.shift = rng.uniform(-4.0, 4.0);
      }
      s.changing.push_back(c);
    }
    specs.push_back(std::move(s));
  }
  return specs;
}

double standardized_mixed_draw(MixedCombine combine, Rng& rng) {
  if (combine == MixedCombine::sum) {
    const double s = rng.normal() + rng.normal(kMixtureOffset, 1.0);
    return (s - kMixtureOffset) / std::sqrt(2.0);
  }
  const bool second = rng.uniform() < 0.5;
  const double m = rng.normal(second ? kMixtureOffset : 0.0, 1.0);
  return (m - kMixtureMean) / std::sqrt(kMixtureVariance);
}

Tensor sample_latents(const DomainSpec& spec, const GenerationConfig& cfg, std::size_t count, Rng& rng) {
  if (spec.changing.size() != cfg.n_s) {
    throw ConfigError("domain spec " + std::to_string(spec.domain) + " has " + std::to_string(spec.changing.size()) +
                      " changing latents, config expects " + std::to_string(cfg.n_s));
  }
  const std::size_t n_c = cfg.n_c();
  Tensor z = Tensor::matrix(count, cfg.n);
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t j = 0; j < n_c; ++j) {
      z(r, j) = cfg.family == LatentFamily::gaussian ? rng.normal() : standardized_mixed_draw(cfg.mixed_combine, rng);
    }
    for (std::size_t i = 0; i < cfg.n_s; ++i) {
      const ChangingLatent& c = spec.changing[i];
      double v = 0.0;
      switch (c.family) {
        case LatentFamily::gaussian: v = rng.normal(c.mean, std::sqrt(c.variance)); break;
        case LatentFamily::mixed_gaussian: v = standardized_mixed_draw(MixedCombine::mixture, rng) * c.scale + c.shift; break;
        case LatentFamily::summed_gaussian: v = standardized_mixed_draw(MixedCombine::sum, rng) * c.scale + c.shift; break;
      }
      z(r, n_c + i) = v;
    }
  }
  return z;
}

Tensor MixingFunction::apply(const Tensor& z) const {
  Tensor h = linalg::matmul(z, weights.at(0));
  for (auto& v : h.data()) v = v >= 0 ? v : slope * v;
  return linalg::matmul(h, weights.at(1));
}

Tensor MixingFunction::invert(const Tensor& x) const {
  // Row-vector convention: x = h W2  <=>  h = x W2^{-1}.
  Tensor h = linalg::matmul(x, linalg::inverse(weights.at(1)));
  for (auto& v : h.data()) v = v >= 0 ? v : v / slope;
  return linalg::matmul(h, linalg::inverse(weights.at(0)));
}

MixingFunction build_mixing(const GenerationConfig& cfg, Rng& rng) {
  MixingFunction g;
  g.slope = cfg.mixing_slope;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(cfg.n));
  for (int layer = 0; layer < 2; ++layer) {
    bool accepted = false;
    for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
      Tensor w = Tensor::matrix(cfg.n, cfg.n);
      for (auto& v : w.data()) v = rng.normal(0.0, stddev);
      if (linalg::condition_number(w) < cfg.condition_bound) {
        g.weights.push_back(std::move(w));
        accepted = true;
      }
    }
    if (!accepted) {
      throw ConfigError("could not draw a mixing matrix with condition number below " +
                        std::to_string(cfg.condition_bound) + " in 100 attempts");
    }
  }
  return g;
}

GeneratedData generate(const GenerationConfig& cfg, const std::optional<std::vector<DomainSpec>>& pinned_specs) {
  cfg.validate();
  const Rng root(cfg.seed);
  GeneratedData out;
  out.config = cfg;
  if (pinned_specs) {
    if (pinned_specs->size() != cfg.domains) {
      throw ConfigError("scenario pins " + std::to_string(pinned_specs->size()) + " domains, config asks for " +
                        std::to_string(cfg.domains));
    }
    out.specs = *pinned_specs;
  } else {
    Rng spec_rng = root.split("specs");
    out.specs = sample_domain_specs(cfg, spec_rng);
  }
  Rng mix_rng = root.split("mixing");
  out.mixing = build_mixing(cfg, mix_rng);

  out.data.n = cfg.n;
  out.data.n_s = cfg.n_s;
  for (const auto& spec : out.specs) {
    Rng lat = root.split("latents/" + std::to_string(spec.domain));
    DomainData d;
    d.domain = spec.domain;
    d.z_train = sample_latents(spec, cfg, cfg.train_per_domain, lat);
    d.z_test = sample_latents(spec, cfg, cfg.test_per_domain, lat);
    d.x_train = out.mixing.apply(d.z_train);
    d.x_test = out.mixing.apply(d.z_test);
    out.data.domains.push_back(std::move(d));
  }
  return out;
}

}  // namespace ccica
