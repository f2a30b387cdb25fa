#include "nvae/distributions.hpp"

#include <cmath>
#include <string>

#include "nvae/error.hpp"

namespace nvae {

namespace {

void require_same_shape(const char* fn, const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(fn) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " differ");
}

void require_positive(const char* fn, const Tensor& t) {
  for (double v : t.data())
    if (!(v > 0.0) || !std::isfinite(v))
      throw DomainError(std::string(fn) + ": Dirichlet concentration must be finite and > 0, got " +
                        std::to_string(v));
}

}  // namespace

GaussKl gauss_kl_std(const DiagGaussian& q) {
  require_same_shape("gauss_kl_std", q.mean, q.log_var);
  if (!q.log_var.value().all_finite()) throw NonFiniteError("gauss_kl_std: non-finite log-variance");
  Var per_dim = 0.5 * (square(q.mean) + exp(q.log_var) - q.log_var - 1.0);
  return {per_dim, sum(per_dim, 1)};
}

Var gauss_sample(const DiagGaussian& q, const Tensor& noise) {
  require_same_shape("gauss_sample", q.mean, q.log_var);
  if (noise.size() != q.mean.value().size())
    throw ShapeError("gauss_sample: noise " + to_string(noise.shape()) + " does not match mean " +
                     to_string(q.mean.shape()));
  Tape& tape = q.mean.tape();
  Var eps = tape.constant(noise.reshaped(q.mean.shape()));
  return q.mean + exp(0.5 * q.log_var) * eps;
}

Var dirichlet_kl(const DirichletParams& q, const DirichletParams& p) {
  require_same_shape("dirichlet_kl", q.alpha, p.alpha);
  require_positive("dirichlet_kl", q.alpha.value());
  require_positive("dirichlet_kl", p.alpha.value());
  Var q0 = sum(q.alpha, 1);
  Var p0 = sum(p.alpha, 1);
  Var log_norm = log_gamma(q0) - sum(log_gamma(q.alpha), 1) - log_gamma(p0) + sum(log_gamma(p.alpha), 1);
  Var cross = sum((q.alpha - p.alpha) * (digamma(q.alpha) - digamma(q0)), 1);
  return log_norm + cross;
}

Tensor dirichlet_posterior(double alpha_p, std::size_t classes, std::span<const std::size_t> labels) {
  if (!(alpha_p > 0.0)) throw DomainError("dirichlet_posterior: alpha_p must be > 0");
  if (classes == 0 || labels.empty()) throw DomainError("dirichlet_posterior: need classes >= 1 and a label");
  Tensor out({labels.size(), classes}, alpha_p);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes)
      throw DomainError("dirichlet_posterior: label " + std::to_string(labels[i]) + " out of range for " +
                        std::to_string(classes) + " classes");
    out.at(i, labels[i]) += 1.0;
  }
  return out;
}

Var class_prob_from_dirichlet(const DirichletParams& q) {
  require_positive("class_prob_from_dirichlet", q.alpha.value());
  return q.alpha / sum(q.alpha, 1);
}

Var class_log_prob_from_dirichlet(const DirichletParams& q) {
  require_positive("class_log_prob_from_dirichlet", q.alpha.value());
  return log(q.alpha) - log(sum(q.alpha, 1));
}

Var categorical_nll(Var log_probs, std::span<const std::size_t> labels) {
  for (std::size_t y : labels)
    if (y >= log_probs.cols())
      throw DomainError("categorical_nll: label " + std::to_string(y) + " out of range for " +
                        std::to_string(log_probs.cols()) + " classes");
  return -pick(log_probs, labels);
}

Var bernoulli_recon_ll(Var logits, const Tensor& x) {
  if (x.size() != logits.value().size())
    throw ShapeError("bernoulli_recon_ll: target " + to_string(x.shape()) + " does not match logits " +
                     to_string(logits.shape()));
  for (double v : x.data())
    if (!(v >= 0.0 && v <= 1.0))
      throw DomainError("bernoulli_recon_ll: target value " + std::to_string(v) + " outside [0, 1]");
  Var target = logits.tape().constant(x.reshaped(logits.shape()));
  // x log s(l) + (1 - x) log(1 - s(l)) = x l - softplus(l)
  return sum(logits * target - softplus(logits), 1);
}

}  // namespace nvae
