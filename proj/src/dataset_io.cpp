#include "ccica/dataset_io.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "ccica/error.hpp"

namespace ccica {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string dataset_csv(const Dataset& data) {
  std::string out = "domain";
  for (std::size_t j = 0; j < data.n; ++j) out += ",x_" + std::to_string(j);
  for (std::size_t j = 0; j < data.n; ++j) out += ",z_" + std::to_string(j);
  out += ",split\n";
  auto emit = [&](int u, const Tensor& x, const Tensor& z, const char* split) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      out += std::to_string(u);
      for (std::size_t j = 0; j < data.n; ++j) out += fmt::format(",{:.17g}", x(r, j));
      for (std::size_t j = 0; j < data.n; ++j) out += fmt::format(",{:.17g}", z(r, j));
      out += ',';
      out += split;
      out += '\n';
    }
  };
  for (const auto& d : data.domains) {
    emit(d.domain, d.x_train, d.z_train, "train");
    emit(d.domain, d.x_test, d.z_test, "test");
  }
  return out;
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write dataset '" + path + "'");
  os << dataset_csv(data);
}

Dataset read_dataset_csv(const std::string& path, std::size_t n_s) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read dataset '" + path + "'");
  std::string line;
  std::getline(is, line);
  std::size_t cols = 0;
  for (char c : line) cols += c == ',' ? 1 : 0;
  if (cols < 3 || (cols - 1) % 2 != 0) throw ConfigError("dataset '" + path + "': malformed header");
  const std::size_t n = (cols - 1) / 2;

  struct Rows {
    std::vector<double> x_train, z_train, x_test, z_test;
  };
  std::map<int, Rows> by_domain;
  std::vector<int> order;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    const int u = std::stoi(cell);
    if (!by_domain.count(u)) order.push_back(u);
    Rows& rows = by_domain[u];
    std::vector<double> vals(2 * n);
    for (auto& v : vals) {
      if (!std::getline(ls, cell, ',')) throw ConfigError(fmt::format("dataset '{}' line {}: too few columns", path, line_no));
      v = std::stod(cell);
    }
    std::getline(ls, cell);
    const bool train = cell == "train";
    if (!train && cell != "test") throw ConfigError(fmt::format("dataset '{}' line {}: bad split '{}'", path, line_no, cell));
    auto& xs = train ? rows.x_train : rows.x_test;
    auto& zs = train ? rows.z_train : rows.z_test;
    xs.insert(xs.end(), vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(n));
    zs.insert(zs.end(), vals.begin() + static_cast<std::ptrdiff_t>(n), vals.end());
  }
  Dataset data;
  data.n = n;
  data.n_s = n_s;
  if (n_s < 1 || n_s > n) throw ConfigError("dataset '" + path + "': n_s must be in [1, n]");
  for (int u : order) {
    Rows& r = by_domain[u];
    DomainData d;
    d.domain = u;
    // Row counts are taken before the buffers are moved from.
    const std::size_t m_train = r.x_train.size() / n, m_test = r.x_test.size() / n;
    d.x_train = Tensor({m_train, n}, std::move(r.x_train));
    d.z_train = Tensor({m_train, n}, std::move(r.z_train));
    d.x_test = Tensor({m_test, n}, std::move(r.x_test));
    d.z_test = Tensor({m_test, n}, std::move(r.z_test));
    data.domains.push_back(std::move(d));
  }
  return data;
}

namespace {

json latent_json(const ChangingLatent& c) {
  if (c.family == LatentFamily::gaussian) return {{"family", "gaussian"}, {"mean", c.mean}, {"variance", c.variance}};
  return {{"family", to_string(c.family)}, {"scale", c.scale}, {"shift", c.shift}};
}

ChangingLatent latent_from_json(const json& j) {
  ChangingLatent c;
  c.family = latent_family_from_string(j.value("family", std::string("gaussian")));
  if (c.family == LatentFamily::gaussian) {
    c.mean = j.at("mean");
    c.variance = j.at("variance");
    if (!(c.variance > 0.0)) throw ConfigError("scenario: variance must be > 0");
  } else {
    c.scale = j.at("scale");
    c.shift = j.at("shift");
    if (!(c.scale > 0.0)) throw ConfigError("scenario: scale must be > 0");
  }
  return c;
}

json specs_to_json(const std::vector<DomainSpec>& specs) {
  json arr = json::array();
  for (const auto& s : specs) {
    json ch = json::array();
    for (const auto& c : s.changing) ch.push_back(latent_json(c));
    arr.push_back({{"domain", s.domain}, {"changing", ch}});
  }
  return arr;
}

std::vector<DomainSpec> specs_from_json(const json& arr) {
  std::vector<DomainSpec> specs;
  std::size_t width = 0;
  for (std::size_t k = 0; k < arr.size(); ++k) {
    DomainSpec s;
    s.domain = arr[k].value("domain", static_cast<int>(k));
    for (const auto& c : arr[k].at("changing")) s.changing.push_back(latent_from_json(c));
    if (k == 0) width = s.changing.size();
    if (s.changing.size() != width || width == 0) throw ConfigError("scenario: every domain needs the same non-zero number of changing latents");
    specs.push_back(std::move(s));
  }
  return specs;
}

json config_to_json(const GenerationConfig& c) {
  return {{"n", c.n},
          {"n_s", c.n_s},
          {"domains", c.domains},
          {"train_per_domain", c.train_per_domain},
          {"test_per_domain", c.test_per_domain},
          {"seed", c.seed},
          {"family", to_string(c.family)},
          {"mixed_combine", c.mixed_combine == MixedCombine::sum ? "sum" : "mixture"},
          {"condition_bound", c.condition_bound},
          {"mixing_slope", c.mixing_slope}};
}

}  // namespace

std::string specs_json(const std::vector<DomainSpec>& specs) { return json{{"domains", specs_to_json(specs)}}.dump(2); }

std::vector<DomainSpec> parse_specs_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.is_array()) return specs_from_json(j);
    if (j.contains("specs")) return specs_from_json(j.at("specs"));
    return specs_from_json(j.at("domains"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
}

std::vector<DomainSpec> read_scenario_specs(const std::string& path) { return parse_specs_json(read_file(path)); }

std::string sidecar_json(const GeneratedData& gen) {
  json j;
  j["config"] = config_to_json(gen.config);
  j["specs"] = specs_to_json(gen.specs);
  json w = json::array();
  for (const auto& m : gen.mixing.weights) {
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      std::vector<double> row;
      for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    w.push_back(rows);
  }
  j["mixing"] = {{"slope", gen.mixing.slope}, {"weights", w}};
  return j.dump(2);
}

void write_sidecar(const std::string& path, const GeneratedData& gen) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write sidecar '" + path + "'");
  os << sidecar_json(gen) << '\n';
}

Sidecar read_sidecar(const std::string& path) {
  const json j = json::parse(read_file(path));
  Sidecar s;
  const auto& c = j.at("config");
  s.config.n = c.at("n");
  s.config.n_s = c.at("n_s");
  s.config.domains = c.at("domains");
  s.config.train_per_domain = c.at("train_per_domain");
  s.config.test_per_domain = c.at("test_per_domain");
  s.config.seed = c.at("seed");
  s.config.family = latent_family_from_string(c.at("family"));
  s.config.mixed_combine = c.at("mixed_combine") == "sum" ? MixedCombine::sum : MixedCombine::mixture;
  s.config.condition_bound = c.at("condition_bound");
  s.config.mixing_slope = c.at("mixing_slope");
  s.specs = specs_from_json(j.at("specs"));
  s.mixing.slope = j.at("mixing").at("slope");
  for (const auto& m : j.at("mixing").at("weights")) {
    const auto rows = m.get<std::vector<std::vector<double>>>();
    Tensor t = Tensor::matrix(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t col = 0; col < rows[r].size(); ++col) t(r, col) = rows[r][col];
    s.mixing.weights.push_back(std::move(t));
  }
  return s;
}

std::string content_hash(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  const std::string payload = header + bytes;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(payload.data(), payload.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw NumericalError("SHA-1 digest failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string file_content_hash(const std::string& path) { return content_hash(read_file(path)); }

}  // namespace ccica
