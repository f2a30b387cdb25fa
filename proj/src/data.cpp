#include "nvae/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "nvae/error.hpp"
#include "nvae/random.hpp"

namespace nvae {

namespace fs = std::filesystem;

void Dataset::validate() const {
  if (labels.empty()) throw DomainError("dataset is empty");
  if (images.rows() != labels.size() || images.cols() != dims())
    throw ShapeError("dataset images " + to_string(images.shape()) + " do not match " + std::to_string(labels.size()) +
                     " labels of " + std::to_string(height) + "x" + std::to_string(width) + " pixels");
  for (auto y : labels)
    if (y >= classes) throw DomainError("label " + std::to_string(y) + " >= class count " + std::to_string(classes));
  for (double v : images.data())
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("pixel value " + std::to_string(v) + " outside [0, 1]");
}

Tensor Dataset::gather(std::span<const std::size_t> index) const {
  const std::size_t D = images.cols();
  Tensor out({index.size(), D});
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= size()) throw std::out_of_range("dataset row " + std::to_string(index[k]));
    std::copy_n(images.data().data() + index[k] * D, D, out.data().data() + k * D);
  }
  return out;
}

std::vector<std::size_t> Dataset::gather_labels(std::span<const std::size_t> index) const {
  std::vector<std::size_t> out(index.size());
  for (std::size_t k = 0; k < index.size(); ++k) out[k] = labels.at(index[k]);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> index) const {
  if (index.empty()) throw DomainError("empty subset");
  return Dataset{gather(index), gather_labels(index), classes, height, width};
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const fs::path& path) {
  if (off + 4 > b.size()) throw FormatError(path.string() + ": truncated IDX header");
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
         std::uint32_t(b[off + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {char(v >> 24), char((v >> 16) & 0xff), char((v >> 8) & 0xff), char(v & 0xff)};
  out.write(bytes, 4);
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

Dataset load_idx(const fs::path& images_path, const fs::path& labels_path, std::size_t classes) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (auto m = be32(img, 0, images_path); m != kImageMagic)
    throw FormatError(images_path.string() + ": bad image magic " + hex(m) + ", expected 0x00000803");
  if (auto m = be32(lab, 0, labels_path); m != kLabelMagic)
    throw FormatError(labels_path.string() + ": bad label magic " + hex(m) + ", expected 0x00000801");
  const std::size_t n = be32(img, 4, images_path);
  const std::size_t rows = be32(img, 8, images_path);
  const std::size_t cols = be32(img, 12, images_path);
  const std::size_t nlabels = be32(lab, 4, labels_path);
  if (n != nlabels)
    throw FormatError("image count " + std::to_string(n) + " in " + images_path.string() + " != label count " +
                      std::to_string(nlabels) + " in " + labels_path.string());
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(images_path.string() + ": empty IDX image file");
  const std::size_t D = rows * cols;
  if (img.size() < 16 + n * D)
    throw FormatError(images_path.string() + ": truncated payload, expected " + std::to_string(n * D) + " pixel bytes");
  if (lab.size() < 8 + n) throw FormatError(labels_path.string() + ": truncated payload");

  Dataset d;
  d.height = rows;
  d.width = cols;
  d.images = Tensor({n, D});
  for (std::size_t i = 0; i < n * D; ++i) d.images[i] = static_cast<double>(img[16 + i]) / 255.0;
  d.labels.resize(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.classes = classes ? classes : max_label + 1;
  d.validate();
  return d;
}

void write_idx(const Dataset& data, const fs::path& images_path, const fs::path& labels_path) {
  data.validate();
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw std::runtime_error("cannot write IDX files " + images_path.string());
  put_be32(img, kImageMagic);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(data.height));
  put_be32(img, static_cast<std::uint32_t>(data.width));
  std::vector<char> bytes(data.images.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(data.images[i] * 255.0)));
  img.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  put_be32(lab, kLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (auto y : data.labels) {
    if (y > 255) throw FormatError("label " + std::to_string(y) + " does not fit in an IDX byte");
    lab.put(static_cast<char>(y));
  }
}

// ---------------------------------------------------------------------------
// Synthetic glyphs

namespace {

struct Point {
  double x, y;
};
struct Segment {
  Point a, b;
};

struct Glyph {
  std::vector<Segment> strokes;
  Point bar_anchor;
};

const std::array<Glyph, kGlyphCount>& glyphs() {
  static const std::array<Glyph, kGlyphCount> g = {{
      // seven; the bar crosses the stem
      {{{{-0.55, -0.6}, {0.55, -0.6}}, {{0.55, -0.6}, {-0.1, 0.7}}}, {0.225, 0.05}},
      // square
      {{{{-0.55, -0.55}, {0.55, -0.55}},
        {{0.55, -0.55}, {0.55, 0.55}},
        {{0.55, 0.55}, {-0.55, 0.55}},
        {{-0.55, 0.55}, {-0.55, -0.55}}},
       {0.0, 0.0}},
      // plus
      {{{{0.0, -0.65}, {0.0, 0.65}}, {{-0.65, 0.0}, {0.65, 0.0}}}, {0.0, -0.45}},
      // triangle
      {{{{0.0, -0.65}, {0.6, 0.55}}, {{0.6, 0.55}, {-0.6, 0.55}}, {{-0.6, 0.55}, {0.0, -0.65}}}, {0.0, 0.1}},
      // ell
      {{{{-0.4, -0.65}, {-0.4, 0.6}}, {{-0.4, 0.6}, {0.5, 0.6}}}, {0.05, -0.1}},
      // ex
      {{{{-0.55, -0.6}, {0.55, 0.6}}, {{0.55, -0.6}, {-0.55, 0.6}}}, {0.0, -0.6}},
  }};
  return g;
}

double segment_distance(Point p, const Segment& s) {
  const double dx = s.b.x - s.a.x, dy = s.b.y - s.a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - s.a.x) * dx + (p.y - s.a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = s.a.x + t * dx - p.x, ey = s.a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

void apply_factor(GlyphParams& g, const std::string& kind, double v) {
  if (kind == "intensity") g.intensity = v;
  else if (kind == "shift_x") g.shift_x = v;
  else if (kind == "shift_y") g.shift_y = v;
  else if (kind == "scale") g.scale = v;
  else if (kind == "thickness") g.thickness = v;
  else if (kind == "stretch") g.stretch = v;
  else if (kind == "rotate") g.rotate = v;
  else if (kind == "bar") g.bar = v;
  else throw ConfigError("unknown synthetic factor kind '" + kind + "'");
}

void validate_factor(const FactorSpec& f) {
  GlyphParams probe;
  apply_factor(probe, f.kind, f.low);
  if (!(f.low <= f.high)) throw ConfigError("factor " + f.kind + ": low > high");
  if (f.kind == "intensity" && (f.low < 0.0 || f.high > 1.0)) throw ConfigError("intensity must lie in [0, 1]");
  if ((f.kind == "scale" || f.kind == "stretch") && f.low <= 0.0) throw ConfigError(f.kind + " must be > 0");
  if ((f.kind == "thickness" || f.kind == "bar") && f.low < 0.0) throw ConfigError(f.kind + " must be >= 0");
}

}  // namespace

void SyntheticSpec::validate() const {
  if (classes < 1 || classes > kGlyphCount)
    throw ConfigError("synthetic classes must be in [1, " + std::to_string(kGlyphCount) + "]");
  if (shared.empty() && exclusive.empty()) throw ConfigError("synthetic spec needs at least one factor");
  if (side < 4) throw ConfigError("synthetic side must be >= 4");
  if (count < 1) throw ConfigError("synthetic count must be >= 1");
  for (const auto& f : shared) validate_factor(f);
  for (const auto& e : exclusive) {
    if (e.cls >= classes) throw ConfigError("exclusive factor class " + std::to_string(e.cls) + " out of range");
    validate_factor(e.factor);
  }
}

Tensor render_glyph(std::size_t cls, const GlyphParams& p, std::size_t side) {
  if (cls >= kGlyphCount) throw DomainError("no glyph for class " + std::to_string(cls));
  const Glyph& glyph = glyphs()[cls];
  std::vector<Segment> strokes = glyph.strokes;
  if (p.bar > 0.0)
    strokes.push_back({{glyph.bar_anchor.x - p.bar, glyph.bar_anchor.y}, {glyph.bar_anchor.x + p.bar, glyph.bar_anchor.y}});

  const double edge = 2.0 / static_cast<double>(side);
  const double c = std::cos(p.rotate), s = std::sin(p.rotate);
  Tensor img({1, side * side});
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      const double px = 2.0 * (static_cast<double>(j) + 0.5) / static_cast<double>(side) - 1.0 - p.shift_x;
      const double py = 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(side) - 1.0 - p.shift_y;
      // pixel -> glyph coordinates: undo rotation, then scale and vertical stretch
      const Point g{(c * px + s * py) / p.scale, (-s * px + c * py) / (p.scale * p.stretch)};
      double d = 1e9;
      for (const auto& seg : strokes) d = std::min(d, segment_distance(g, seg));
      const double coverage = std::clamp(0.5 + (p.thickness - d * p.scale) / edge, 0.0, 1.0);
      img[i * side + j] = p.intensity * coverage;
    }
  }
  return img;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t D = spec.side * spec.side;
  Dataset d;
  d.classes = spec.classes;
  d.height = d.width = spec.side;
  d.images = Tensor({spec.count, D});
  d.labels.resize(spec.count);
  for (std::size_t n = 0; n < spec.count; ++n) {
    const std::size_t y = n % spec.classes;
    GlyphParams g;
    for (const auto& f : spec.shared) apply_factor(g, f.kind, std::uniform_real_distribution<double>(f.low, f.high)(rng));
    for (const auto& e : spec.exclusive)
      if (e.cls == y)
        apply_factor(g, e.factor.kind, std::uniform_real_distribution<double>(e.factor.low, e.factor.high)(rng));
    Tensor img = render_glyph(y, g, spec.side);
    std::copy(img.data().begin(), img.data().end(), d.images.data().begin() + static_cast<std::ptrdiff_t>(n * D));
    d.labels[n] = y;
  }
  d.validate();
  return d;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DomainError("test_fraction must lie in (0, 1)");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
  if (n_test == 0 || n_test == data.size()) throw DomainError("split leaves one side empty");
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

BatchSchedule::BatchSchedule(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_(batch_size), seed_(seed) {
  if (dataset_size == 0) throw DomainError("cannot batch an empty dataset");
  if (batch_size == 0) throw DomainError("batch size must be >= 1");
}

std::vector<std::vector<std::size_t>> BatchSchedule::epoch(std::size_t epoch_index) const {
  std::vector<std::size_t> order(size_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed_, {0x5348554646ULL, epoch_index}));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < size_; start += batch_)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(size_, start + batch_)));
  return batches;
}

}  // namespace nvae
