#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nvae/tensor.hpp"

namespace nvae {

/// Labeled images, one flattened image per row of `images`, pixels in [0, 1].
struct Dataset {
  Tensor images;                      // (N x D)
  std::vector<std::size_t> labels;    // N entries, each < classes
  std::size_t classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dims() const noexcept { return height * width; }
  void validate() const;

  /// Rows `index` as a (k x D) batch.
  Tensor gather(std::span<const std::size_t> index) const;
  std::vector<std::size_t> gather_labels(std::span<const std::size_t> index) const;
  Dataset subset(std::span<const std::size_t> index) const;
};

/// Reads big-endian IDX image (magic 0x00000803) and label (0x00000801) files.
/// Pixels are scaled by 1/255. `classes` = 0 infers max(label) + 1.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t classes = 0);
/// Writes pixels as round(255 v); lossless for data loaded from IDX.
void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

/// A generative factor drawn uniformly from [low, high] per image.
/// Kinds: intensity, shift_x, shift_y, scale, thickness, stretch, rotate, bar.
struct FactorSpec {
  std::string kind;
  double low = 0.0;
  double high = 0.0;
};

/// A factor that varies only for images of class `cls`.
struct ExclusiveFactorSpec {
  std::size_t cls = 0;
  FactorSpec factor;
};

struct SyntheticSpec {
  std::size_t classes = 3;
  std::vector<FactorSpec> shared;
  std::vector<ExclusiveFactorSpec> exclusive;
  std::size_t side = 16;
  std::size_t count = 3000;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Glyph pose; all fields are continuous so nearby parameters give nearby images.
struct GlyphParams {
  double intensity = 1.0;
  double shift_x = 0.0;
  double shift_y = 0.0;
  double scale = 1.0;
  double thickness = 0.12;
  double stretch = 1.0;
  double rotate = 0.0;
  double bar = 0.0;  // crossbar half-length; 0 draws no bar
};

inline constexpr std::size_t kGlyphCount = 6;

/// Anti-aliased rendering of glyph `cls` into a (1 x side*side) row.
Tensor render_glyph(std::size_t cls, const GlyphParams& params, std::size_t side);

/// Balanced classes (i mod L), factors drawn in spec order; deterministic given the seed.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Seeded shuffle into (train, test); `test_fraction` of the rows go to test.
std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double test_fraction, std::uint64_t seed);

/// Minibatch order for a dataset: a fresh seeded shuffle per epoch, final partial batch kept.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::vector<std::size_t>> epoch(std::size_t epoch_index) const;
  std::size_t batches_per_epoch() const noexcept { return (size_ + batch_ - 1) / batch_; }

 private:
  std::size_t size_;
  std::size_t batch_;
  std::uint64_t seed_;
};

}  // namespace nvae
