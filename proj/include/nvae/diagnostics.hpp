#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "nvae/data.hpp"
#include "nvae/model.hpp"
#include "nvae/training.hpp"

namespace nvae {

/// Dataset means of the per-dimension KL(q(z|x) || N(0, I)).
struct KlProfile {
  LatentLayout layout;
  std::size_t count = 0;
  std::vector<double> shared;      // d_s
  std::vector<double> cls;         // L * d_c, class-major: block i holds z_ci
  std::vector<double> true_class;  // d_c; block z_cy of each example's own class
  std::vector<double> off_class;   // d_c; blocks z_ci, i != y, averaged over those L - 1 blocks

  double mean_shared() const;
  double mean_class() const;
  double mean_true_class() const;
  double mean_off_class() const;
};

KlProfile kl_profile(NvaeModel& model, const Dataset& data, std::size_t chunk = 500);

/// Columns group,class,dim,mean_kl. group is shared, class, true_class or off_class;
/// class is empty except for group class.
void write_kl_csv(std::ostream& out, const KlProfile& profile);

/// Entry (t, i): over examples of true class t, the mean per-dim KL of block z_ci. (L x L)
/// Classes absent from the data give zero rows.
Tensor class_kl_confusion(NvaeModel& model, const Dataset& data, std::size_t chunk = 500);
/// Columns true_class,block_0,...,block_{L-1}.
void write_confusion_csv(std::ostream& out, const Tensor& confusion);

struct GapStats {
  std::size_t count = 0;
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

/// Per example: KL(q(pi|x) || p(pi|y)) - (-log q(y|x)).
std::vector<double> surrogate_gaps(NvaeModel& model, const Dataset& data, std::size_t chunk = 500);
GapStats summarize(const std::vector<double>& values);
/// Columns count,min,mean,max.
void write_gap_csv(std::ostream& out, const GapStats& stats);

/// Gap as a function of raw concentration-head outputs h (B x L):
/// alpha = alpha_q (softplus(h) + floor), compared against p(pi|y) = Dir(alpha_p 1 + onehot(y)).
Var surrogate_gap_from_logits(Var h, std::span<const std::size_t> labels, const ModelConfig& config);

struct SurrogateBound {
  double k_hat = 0.0;           // bound estimate from the fitting draw
  double sample_max = 0.0;      // plain maximum over the fitting draw
  double validation_max = 0.0;  // maximum over an independent draw
  std::size_t exceed = 0;       // validation gaps above k_hat
  std::size_t samples = 0;
};

/// Draws h ~ U[-range, range]^L and uniform labels. k_hat is the largest gap seen over
/// the fitting draw, the box corners, and projected gradient ascent from the best points.
SurrogateBound estimate_surrogate_bound(const ModelConfig& config, std::size_t samples, std::uint64_t seed,
                                        double range = 6.0);

/// exact_elbo against an importance-sampled log p(x | y) with q(z|x) as proposal.
/// Both exclude the constant log p(y).
struct BoundCheck {
  double elbo = 0.0;
  double elbo_se = 0.0;
  double log_marginal = 0.0;
  double log_marginal_se = 0.0;  // delta method
};

BoundCheck importance_bound_check(NvaeModel& model, const Tensor& x, std::size_t label, std::size_t samples,
                                  std::uint64_t seed, std::size_t chunk = 1000);

/// 8-bit grayscale raster.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Lays out the rows of `images` (n x h*w) left to right, `columns` per grid row,
/// each pixel round(255 v).
GrayImage tile_images(const Tensor& images, std::size_t h, std::size_t w, std::size_t columns);
/// Binary PGM (P5).
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

/// One grid row per target, one column per step.
GrayImage traversal_grid(NvaeModel& model, const std::vector<LatentTarget>& targets, std::size_t steps,
                         const TraversalBase& base, std::size_t h, std::size_t w);

struct ProbeConfig {
  std::size_t hidden = 128;
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  AdamConfig adam;
};

/// Trains the D -> hidden (relu) -> L classifier and returns its test error.
double probe_test_error(const Dataset& train, const Dataset& test, const ProbeConfig& config, std::uint64_t seed);

struct AugmentationConfig {
  double p_sub = 0.4;
  double sigma = 1.0;
  std::size_t repetitions = 3;
  std::uint64_t seed = 1;
  ProbeConfig probe;

  void validate() const;
};

struct AugmentationResult {
  double p_sub = 0.0;
  double sigma = 0.0;
  std::vector<std::uint64_t> seeds;  // probe seed of each repetition
  std::vector<double> errors;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  ProbeConfig probe;
};

/// Per repetition, every training example is independently replaced with probability
/// p_sub by generate(model, its label, sigma); the probe is trained on the result and
/// scored on the real test set.
AugmentationResult augmentation_experiment(NvaeModel& model, const Dataset& train, const Dataset& test,
                                           const AugmentationConfig& config);
/// The same repetitions and probe seeds trained on the untouched data; reports sigma = 0.
AugmentationResult augmentation_baseline(const Dataset& train, const Dataset& test, const AugmentationConfig& config);

/// Columns p_sub,sigma,repetition,seed,test_error,mean_error,std_error,probe_hidden,probe_epochs,probe_batch.
void write_augmentation_csv(std::ostream& out, const std::vector<AugmentationResult>& results);

}  // namespace nvae
