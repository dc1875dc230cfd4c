#pragma once

#include <string>
#include <vector>

#include "ccica/synthgen.hpp"

namespace ccica {

/// CSV with columns domain,x_0..x_{n-1},z_0..z_{n-1},split (train|test).
/// Values are written with 17 significant digits so a reload is exact.
std::string dataset_csv(const Dataset& data);
void write_dataset_csv(const std::string& path, const Dataset& data);
Dataset read_dataset_csv(const std::string& path, std::size_t n_s);

/// JSON sidecar: generation config, domain specs and mixing weights.
std::string sidecar_json(const GeneratedData& gen);
void write_sidecar(const std::string& path, const GeneratedData& gen);

struct Sidecar {
  GenerationConfig config;
  std::vector<DomainSpec> specs;
  MixingFunction mixing;
};
Sidecar read_sidecar(const std::string& path);

/// Domain specs from a scenario file: {"domains": [{"domain": u, "changing": [
/// {"family": "gaussian", "mean": m, "variance": v} | {"family": "mixed-gaussian",
/// "scale": s, "shift": t}, ...]}, ...]}. Also accepts a sidecar.
std::vector<DomainSpec> read_scenario_specs(const std::string& path);
std::vector<DomainSpec> parse_specs_json(const std::string& text);
std::string specs_json(const std::vector<DomainSpec>& specs);

/// Git-style blob hash: SHA-1 over "blob <size>\0" + content, hex encoded.
std::string content_hash(const std::string& bytes);
std::string file_content_hash(const std::string& path);

/// Entire file as a string. Throws ConfigError when unreadable.
std::string read_file(const std::string& path);

}  // namespace ccica
