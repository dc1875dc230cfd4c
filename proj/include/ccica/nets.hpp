#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ccica/ndgrad/adam.hpp"
#include "ccica/ndgrad/graph.hpp"
#include "ccica/rng.hpp"

namespace ccica::nets {

using ndgrad::Graph;
using ndgrad::Parameter;
using ndgrad::Tensor;
using ndgrad::Var;

struct ModelConfig {
  std::size_t x_dim = 4;
  std::size_t z_dim = 4;
  std::size_t n_s = 2;  // changing latents occupy the last n_s coordinates of z
  std::size_t hidden = 32;
  std::size_t hidden_blocks = 4;  // "Linear with Activation" rows of the architecture table
  double slope = 0.2;
  std::size_t bins = 8;
  double bound = 5.0;
  double logvar_limit = 10.0;
  double min_bin_size = 1e-3;
  double min_derivative = 1e-3;

  std::size_t n_c() const noexcept { return z_dim - n_s; }
};

/// Fully connected stack: Linear(in->h), blocks x (Linear(h->h) + LeakyReLU),
/// LeakyReLU, Linear(h->out).
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string prefix, std::size_t in, std::size_t hidden, std::size_t blocks, std::size_t out, double slope);

  /// Kaiming-normal weights for leaky ReLU gain, zero biases.
  void init(Rng& rng);
  Var forward(Graph& g, Var x);
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t in_dim() const noexcept { return in_; }
  std::size_t out_dim() const noexcept { return out_; }
  /// Output layer; zeroing it makes the network a constant zero map.
  Parameter& last_weight() { return weights_.back(); }
  Parameter& last_bias() { return biases_.back(); }

 private:
  std::size_t in_ = 0, out_ = 0;
  double slope_ = 0.2;
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;
};

/// Unconstrained spline parameters of one domain, one row per changing latent.
struct SplineParams {
  Parameter widths;       // n_s x bins
  Parameter heights;      // n_s x bins
  Parameter derivatives;  // n_s x (bins - 1), interior knots only
};

/// Knot locations and derivatives derived from SplineParams.
struct Knots {
  Tensor x;  // n_s x (bins + 1)
  Tensor y;  // n_s x (bins + 1)
  Tensor d;  // n_s x (bins + 1), boundary derivatives are 1
};

struct FlowResult {
  Var out;     // m x n_s
  Var logdet;  // m x n_s, log of the elementwise derivative
};

/// Per-domain monotone rational-quadratic spline flows mapping z_s -> z~_s.
/// Domains are allocated lazily at identity.
class FlowBank {
 public:
  FlowBank() = default;
  FlowBank(const ModelConfig& cfg) : cfg_(cfg) {}  // NOLINT(google-explicit-constructor)

  bool has(int u) const { return params_.count(u) != 0; }
  /// Allocates identity parameters for a new domain; no-op when present.
  void ensure(int u);
  const std::vector<int>& domains() const noexcept { return order_; }
  SplineParams& params(int u);
  const SplineParams& params(int u) const;
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  /// Differentiable knot construction (softmax widths/heights, softplus derivatives).
  Knots knots_on(Graph& g, int u, Var* kx, Var* ky, Var* kd);
  Knots knots(int u) const;

  FlowResult forward(Graph& g, int u, Var z);
  /// Plain evaluation of the forward map and its log-derivative.
  std::pair<Tensor, Tensor> forward_values(int u, const Tensor& z) const;
  Tensor inverse(int u, const Tensor& y) const;

 private:
  ModelConfig cfg_;
  std::map<int, SplineParams> params_;
  std::vector<int> order_;
};

/// Records the elementwise spline on the graph. z is m x d, knots are d x (bins+1).
FlowResult rq_spline(Var z, Var kx, Var ky, Var kd);

struct Encoded {
  Var mean;
  Var logvar;
};

/// Encoder, decoder and flow bank. Canonical parameter order is encoder,
/// decoder, then flow domains in allocation order.
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& cfg);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  void init(Rng& rng);

  Mlp& encoder() { return encoder_; }
  Mlp& decoder() { return decoder_; }
  FlowBank& flows() { return flows_; }
  const FlowBank& flows() const { return flows_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();
  /// Flat gradient in canonical order.
  std::vector<double> flat_grad() const;

  Encoded encode(Graph& g, Var x);
  Var decode(Graph& g, Var z);

  /// Posterior means for a batch, evaluated without recording gradients.
  Tensor encode_mean(const Tensor& x) const;

 private:
  ModelConfig cfg_;
  Mlp encoder_;
  Mlp decoder_;
  FlowBank flows_;
};

/// z = mean + exp(logvar / 2) * eps with eps ~ N(0, I) drawn from rng.
Var reparameterize(Graph& g, Var mean, Var logvar, Rng& rng);
/// Same, with caller-supplied noise.
Var reparameterize_with(Graph& g, Var mean, Var logvar, const Tensor& eps);

/// Checkpoint: magic line, JSON header (architecture, dims, domains, parameter
/// layout), then every parameter (and optimizer moment when present) as
/// little-endian float64.
void write_checkpoint(std::ostream& os, const Model& model, const ndgrad::Adam* adam = nullptr,
                      const std::string& extra_json = "{}");
struct Checkpoint {
  Model model;
  std::optional<ndgrad::Adam> adam;
  std::string header_json;
};
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::string& path, const Model& model, const ndgrad::Adam* adam = nullptr,
                     const std::string& extra_json = "{}");
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ccica::nets
