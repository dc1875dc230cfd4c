#pragma once

#include <vector>

#include "ccica/nets.hpp"

namespace ccica::elbo {

using ndgrad::Graph;
using ndgrad::Tensor;
using ndgrad::Var;

struct Weights {
  double alpha = 0.1;  // invariant-branch KL
  double beta = 0.1;   // changing-branch KL
};

struct LossBreakdown {
  double recon = 0.0;
  double kl_c = 0.0;
  double kl_s = 0.0;
  double total = 0.0;
  double alpha = 0.1;
  double beta = 0.1;
};

/// Tape handles of the three terms and their weighted total.
struct LossVars {
  Var recon;
  Var kl_c;  // unset when the model has no invariant latents
  Var kl_s;
  Var total;
  LossBreakdown values;
};

/// Batch mean of 0.5 * ||x - x_hat||^2 (sum over features).
Var recon_loss(Var x, Var x_hat);

/// Batch mean of 0.5 * sum_d (mu^2 + sigma^2 - 1 - log sigma^2).
Var kl_gaussian(Var mean, Var logvar);

/// Single-sample estimate of KL(q(z~_s | x) || N(0, I)) through domain u's flow:
/// log q(z_s|x) - log|dz~/dz_s| - log N(z~_s; 0, I), averaged over the batch.
/// `eps` is the reparameterization noise that produced z_s.
Var kl_changing(Graph& g, Var mean_s, Var logvar_s, Var z_s, const Tensor& eps, nets::FlowBank& bank, int u);

/// Full pipeline for one batch from a single domain:
/// encode -> reparameterize -> split (c | s) -> flow -> decode.
LossVars total_loss(Graph& g, const Tensor& x, int u, nets::Model& model, const Weights& w, Rng& rng);

/// Batch holding rows from several domains: each row is routed through its
/// own domain's flow. Equivalent to the batch mean over all rows.
LossVars total_loss_mixed(Graph& g, const Tensor& x, const std::vector<int>& domains, nets::Model& model,
                          const Weights& w, Rng& rng);

}  // namespace ccica::elbo
