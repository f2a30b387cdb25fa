#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nvae/autodiff.hpp"
#include "nvae/distributions.hpp"

namespace nvae {

/// Shape of z = [z_c1, ..., z_cL, z_s].
struct LatentLayout {
  std::size_t classes = 10;
  std::size_t class_dims = 2;
  std::size_t shared_dims = 8;

  std::size_t class_block_dims() const noexcept { return classes * class_dims; }
  std::size_t z_dims() const noexcept { return class_block_dims() + shared_dims; }
  /// Width of z_cy: one [1, z_ci] row per class, or [z_ci] without the class bias.
  std::size_t masked_dims(bool class_bias) const noexcept {
    return classes * (class_dims + (class_bias ? 1 : 0));
  }
  std::size_t decoder_input_dims(bool class_bias) const noexcept {
    return masked_dims(class_bias) + shared_dims;
  }
  void validate() const;
};

struct ModelConfig {
  std::size_t input_dims = 784;
  LatentLayout layout;
  std::vector<std::size_t> encoder_hidden{400, 200};
  std::vector<std::size_t> decoder_hidden{200, 400};
  double alpha_p = 1.0;
  double alpha_q = 10.0;
  /// Added to the softplus output so concentrations stay bounded away from zero.
  double concentration_floor = 1e-4;
  bool class_bias = true;

  void validate() const;
};

/// Encoder (phi) and decoder (theta) MLPs plus the hyperparameters that shape them.
class NvaeModel {
 public:
  NvaeModel(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const noexcept { return config_; }
  const LatentLayout& layout() const noexcept { return config_.layout; }
  ParamStore& encoder() noexcept { return encoder_; }
  const ParamStore& encoder() const noexcept { return encoder_; }
  ParamStore& decoder() noexcept { return decoder_; }
  const ParamStore& decoder() const noexcept { return decoder_; }
  std::size_t parameter_count() const noexcept { return encoder_.scalar_count() + decoder_.scalar_count(); }

 private:
  ModelConfig config_;
  ParamStore encoder_;
  ParamStore decoder_;
};

struct EncoderOutput {
  DiagGaussian z;             // over L * d_c + d_s dims
  DirichletParams pi;         // alpha_q * (softplus(h) + floor), L classes
};

/// Runs the shared trunk and both heads on a batch x (B x D) with values in [0, 1].
EncoderOutput encode(NvaeModel& model, Tape& tape, const Tensor& x);

/// z_cy: for each row, the L x (d_c + 1) matrix with row i = [1, z_ci] is zeroed except
/// row y and flattened class-major. Without the class bias the leading 1 is dropped.
/// `class_latents` is (B x L*d_c); pass an invalid Var when d_c = 0.
Var mask_class_latents(Tape& tape, Var class_latents, std::span<const std::size_t> labels,
                       const LatentLayout& layout, bool class_bias);

/// Decoder logits (B x D) from [z_cy, z_s]; z_cy may be invalid when it has no columns.
Var decode(NvaeModel& model, Var z_cy, Var z_s);

/// Splits z into its class block and shared part, masks with labels and decodes.
Var decode_latent(NvaeModel& model, Var z, std::span<const std::size_t> labels);

struct ObjectiveTerms {
  Var objective;      // (B x 1), to be maximised
  Var recon;          // (B x 1)
  Var kl_shared;      // (B x 1)
  Var kl_class;       // (B x 1), over every z_c dim
  Var log_qy;         // (B x 1); invalid in baseline mode
  Var dirichlet_kl;   // (B x 1); only set by exact_elbo
  Var kl_per_dim;     // (B x dz)
  Var concentration;  // (B x L) Dirichlet alpha of q(pi|x)
};

/// One tensor of standard normals (B x dz) per reconstruction sample.
using NoiseSamples = std::span<const Tensor>;

/// recon - KL(q(z|x) || p(z)) + log q(y|x).
ObjectiveTerms objective_lobj(NvaeModel& model, Tape& tape, const Tensor& x,
                              std::span<const std::size_t> labels, NoiseSamples noise);
/// recon - KL(z_s) - beta_c KL(z_c) + log q(y|x).
ObjectiveTerms objective_beta(NvaeModel& model, Tape& tape, const Tensor& x,
                              std::span<const std::size_t> labels, NoiseSamples noise, double beta_c);
/// Plain (beta-)VAE: recon - beta_s KL(z_s). Needs d_c = 0 and no class bias.
ObjectiveTerms objective_baseline(NvaeModel& model, Tape& tape, const Tensor& x,
                                  std::span<const std::size_t> labels, NoiseSamples noise, double beta_s);
/// recon - KL(q(z|x) || p(z)) - KL(q(pi|x) || p(pi|y)); the bound without the constant log p(y).
ObjectiveTerms exact_elbo(NvaeModel& model, Tape& tape, const Tensor& x,
                          std::span<const std::size_t> labels, NoiseSamples noise);

/// argmax of the Dirichlet mean per row, ties to the lowest index.
std::vector<std::size_t> infer_label(NvaeModel& model, const Tensor& x);

/// Pixel means sigmoid(decode(z)) with z ~ N(0, sigma^2 I), one row per label.
Tensor generate(NvaeModel& model, std::span<const std::size_t> labels, double sigma, std::mt19937_64& rng);

/// Latent coordinate to sweep: a shared dim, or dim `dim` of class block `cls`.
struct LatentTarget {
  bool shared = true;
  std::size_t cls = 0;
  std::size_t dim = 0;

  static LatentTarget shared_dim(std::size_t d) { return {true, 0, d}; }
  static LatentTarget class_dim(std::size_t c, std::size_t d) { return {false, c, d}; }
};

/// What the other latent coordinates are held at during a traversal.
struct TraversalBase {
  std::optional<Tensor> seed;          // (1 x D); fixes z at its encoded mean
  std::optional<std::size_t> label;    // defaults to infer_label(seed)
};

/// `steps` points of the uniform midpoint grid over (-3, 3).
std::vector<double> traversal_grid_values(std::size_t steps);

/// Decoded pixel means (steps x D), one row per grid value of the target coordinate.
Tensor traverse(NvaeModel& model, const TraversalBase& base, const LatentTarget& target, std::size_t steps);

}  // namespace nvae
