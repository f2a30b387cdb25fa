#pragma once

// Reference computations the library is checked against. None of them call into
// the code under test except to build the function being differentiated.

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "nvae/autodiff.hpp"

namespace oracle {

using big = boost::multiprecision::cpp_bin_float_50;

inline double lgamma(double x) { return static_cast<double>(boost::math::lgamma(big(x))); }
inline double digamma(double x) { return static_cast<double>(boost::math::digamma(big(x))); }

/// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using ScalarFn = std::function<nvae::Var(nvae::Tape&, const std::vector<nvae::Var>&)>;

/// Largest relative error between reverse-mode gradients of `f` at `inputs` and central
/// differences with step h.
inline double gradient_error(const ScalarFn& f, const std::vector<nvae::Tensor>& inputs, double h = 1e-5) {
  nvae::Tape tape;
  std::vector<nvae::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  nvae::Var root = f(tape, vars);
  tape.backward(root);

  auto eval = [&](const std::vector<nvae::Tensor>& xs) {
    nvae::Tape t;
    std::vector<nvae::Var> v;
    for (const auto& x : xs) v.push_back(t.constant(x));
    return f(t, v).item();
  };
  double worst = 0.0;
  std::vector<nvae::Tensor> xs = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const nvae::Tensor g = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      xs[k][i] = x0 + h;
      const double up = eval(xs);
      xs[k][i] = x0 - h;
      const double down = eval(xs);
      xs[k][i] = x0;
      worst = std::max(worst, rel_err(g[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

inline nvae::Tensor uniform(nvae::Shape shape, double lo, double hi, std::mt19937_64& rng) {
  nvae::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

struct McEstimate {
  double mean;
  double se;
};

inline McEstimate mc_summary(const std::vector<double>& v) {
  double s = 0, s2 = 0;
  for (double x : v) s += x;
  const double m = s / v.size();
  for (double x : v) s2 += (x - m) * (x - m);
  return {m, std::sqrt(s2 / (v.size() - 1) / v.size())};
}

/// E_q[log q(z) - log p(z)] for diagonal Gaussians against N(0, I), sampled directly.
inline McEstimate gauss_kl_mc(const std::vector<double>& mean, const std::vector<double>& log_var, std::size_t n,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> draws(n);
  for (std::size_t s = 0; s < n; ++s) {
    double lq = 0, lp = 0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      const double sd = std::exp(0.5 * log_var[i]);
      const double e = normal(rng);
      const double z = mean[i] + sd * e;
      lq += -0.5 * e * e - std::log(sd);
      lp += -0.5 * z * z;
    }
    draws[s] = lq - lp;
  }
  return mc_summary(draws);
}

/// E_q[log q(pi) - log p(pi)] with pi drawn from Dir(q) via normalised Gamma variates.
/// Works in log space so tiny components do not underflow.
inline McEstimate dirichlet_kl_mc(const std::vector<double>& q, const std::vector<double>& p, std::size_t n,
                                  std::mt19937_64& rng) {
  std::vector<double> draws(n), lg(q.size());
  double sq = 0, sp = 0, c = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    sq += q[i];
    sp += p[i];
    c += -std::lgamma(q[i]) + std::lgamma(p[i]);
  }
  c += std::lgamma(sq) - std::lgamma(sp);
  for (std::size_t s = 0; s < n; ++s) {
    // log Gamma(a) variate: log(G(a+1)) + log(U)/a keeps precision for small a.
    double m = -INFINITY;
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::gamma_distribution<double> g(q[i] + 1.0, 1.0);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      double uu = u(rng);
      while (uu == 0.0) uu = u(rng);
      lg[i] = std::log(g(rng)) + std::log(uu) / q[i];
      m = std::max(m, lg[i]);
    }
    double z = 0;
    for (double v : lg) z += std::exp(v - m);
    const double lz = m + std::log(z);
    double d = c;
    for (std::size_t i = 0; i < q.size(); ++i) d += (q[i] - p[i]) * (lg[i] - lz);
    draws[s] = d;
  }
  return mc_summary(draws);
}

}  // namespace oracle
