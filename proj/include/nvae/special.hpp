#pragma once

namespace nvae {

/// ln Gamma(x) for x > 0. Lanczos (g = 7, 9 terms), reflection below 0.5.
double log_gamma(double x);
/// psi(x) = d/dx ln Gamma(x) for x > 0.
double digamma(double x);
/// psi'(x) for x > 0; the derivative used when differentiating digamma.
double trigamma(double x);

}  // namespace nvae
