#pragma once

#include <cstddef>
#include <span>

#include "nvae/autodiff.hpp"

namespace nvae {

// Every function here is batched: row i of each operand belongs to example i.

/// Diagonal Gaussian q(z|x) = N(mean, diag(exp(log_var))), both (B x d).
struct DiagGaussian {
  Var mean;
  Var log_var;
};

/// Dirichlet with concentrations alpha (B x L), all strictly positive.
struct DirichletParams {
  Var alpha;
};

struct GaussKl {
  Var per_dim;  // (B x d), 0.5 (mu^2 + sigma^2 - 1 - log sigma^2)
  Var total;    // (B x 1)
};

/// KL(q || N(0, I)) in closed form.
GaussKl gauss_kl_std(const DiagGaussian& q);

/// Reparameterised sample mean + exp(log_var / 2) * noise.
Var gauss_sample(const DiagGaussian& q, const Tensor& noise);

/// KL(Dir(q) || Dir(p)) per row, (B x 1). Differentiable through both.
Var dirichlet_kl(const DirichletParams& q, const DirichletParams& p);

/// Conjugate posterior concentrations alpha_p * 1_L + onehot(y), one row per label (B x L).
Tensor dirichlet_posterior(double alpha_p, std::size_t classes, std::span<const std::size_t> labels);

/// Dirichlet mean alpha / sum(alpha), used as q(y|x).
Var class_prob_from_dirichlet(const DirichletParams& q);
/// log of the Dirichlet mean, computed as log alpha - log sum(alpha).
Var class_log_prob_from_dirichlet(const DirichletParams& q);

/// -log_probs[i, y_i], (B x 1).
Var categorical_nll(Var log_probs, std::span<const std::size_t> labels);

/// sum_d x log sigmoid(l) + (1 - x) log(1 - sigmoid(l)) per row, from logits; x must lie in [0, 1].
Var bernoulli_recon_ll(Var logits, const Tensor& x);

}  // namespace nvae
