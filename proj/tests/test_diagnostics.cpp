#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "model_checks.hpp"
#include "nvae/diagnostics.hpp"
#include "nvae/error.hpp"

using namespace nvae;
namespace fs = std::filesystem;

namespace {

Dataset small_data(std::size_t count = 40) {
  SyntheticSpec s;
  s.classes = 3;
  s.side = 4;
  s.count = count;
  s.seed = 9;
  s.shared = {{"intensity", 0.3, 1.0}, {"shift_x", -0.3, 0.3}};
  return make_synthetic(s);
}

ModelConfig small_model() {
  ModelConfig c;
  c.input_dims = 16;
  c.layout = {3, 2, 2};
  c.encoder_hidden = {8};
  c.decoder_hidden = {8};
  return c;
}

// Per-example, per-dim KL straight from the encoder, one example at a time.
std::vector<std::vector<double>> naive_kl(NvaeModel& model, const Dataset& d) {
  std::vector<std::vector<double>> out;
  for (std::size_t n = 0; n < d.size(); ++n) {
    Tape tape;
    const auto q = encode(model, tape, d.gather(std::vector<std::size_t>{n}));
    std::vector<double> row;
    for (std::size_t j = 0; j < model.layout().z_dims(); ++j) {
      const double m = q.z.mean.value()[j], lv = q.z.log_var.value()[j];
      row.push_back(0.5 * (m * m + std::exp(lv) - 1 - lv));
    }
    out.push_back(row);
  }
  return out;
}

}  // namespace

TEST(KlProfile, MatchesNaiveLoop) {
  NvaeModel model(small_model(), 4);
  const Dataset d = small_data();
  const auto p = kl_profile(model, d, 7);
  const auto kl = naive_kl(model, d);
  const auto& L = model.layout();
  ASSERT_EQ(p.count, d.size());
  for (std::size_t j = 0; j < L.shared_dims; ++j) {
    double s = 0;
    for (const auto& r : kl) s += r[L.class_block_dims() + j];
    EXPECT_NEAR(p.shared[j], s / d.size(), 1e-10);
  }
  for (std::size_t j = 0; j < L.class_block_dims(); ++j) {
    double s = 0;
    for (const auto& r : kl) s += r[j];
    EXPECT_NEAR(p.cls[j], s / d.size(), 1e-10);
  }
  for (std::size_t k = 0; k < L.class_dims; ++k) {
    double own = 0, off = 0;
    for (std::size_t n = 0; n < d.size(); ++n)
      for (std::size_t c = 0; c < L.classes; ++c) {
        const double v = kl[n][c * L.class_dims + k];
        if (c == d.labels[n]) own += v;
        else off += v / (L.classes - 1);
      }
    EXPECT_NEAR(p.true_class[k], own / d.size(), 1e-10);
    EXPECT_NEAR(p.off_class[k], off / d.size(), 1e-10);
  }

  const Tensor conf = class_kl_confusion(model, d, 9);
  for (std::size_t t = 0; t < L.classes; ++t)
    for (std::size_t b = 0; b < L.classes; ++b) {
      double s = 0;
      std::size_t cnt = 0;
      for (std::size_t n = 0; n < d.size(); ++n)
        if (d.labels[n] == t) {
          ++cnt;
          for (std::size_t k = 0; k < L.class_dims; ++k) s += kl[n][b * L.class_dims + k] / L.class_dims;
        }
      EXPECT_NEAR(conf.at(t, b), s / cnt, 1e-10);
    }
}

TEST(KlProfile, PriorMatchingEncoderGivesZeros) {
  NvaeModel model(small_model(), 4);
  for (const char* name : {"enc.mean.w", "enc.mean.b", "enc.logvar.w", "enc.logvar.b"}) {
    auto& e = model.encoder().entry(name);
    e.value = Tensor(e.value.shape(), 0.0);
  }
  const Dataset d = small_data();
  const auto p = kl_profile(model, d);
  EXPECT_EQ(p.mean_shared(), 0.0);
  EXPECT_EQ(p.mean_class(), 0.0);
  EXPECT_EQ(p.mean_true_class(), 0.0);
  const Tensor conf = class_kl_confusion(model, d);
  for (double v : conf.data()) EXPECT_EQ(v, 0.0);
  std::ostringstream s;
  write_kl_csv(s, p);
  EXPECT_EQ(s.str().substr(0, s.str().find('\n')), "group,class,dim,mean_kl");
  EXPECT_NE(s.str().find("class,2,1,0\n"), std::string::npos);
}

TEST(KlProfile, RejectsMismatchedData) {
  ModelConfig c = small_model();
  c.input_dims = 9;
  NvaeModel model(c, 1);
  EXPECT_THROW(kl_profile(model, small_data()), ShapeError);
}

TEST(SurrogateGap, MatchesDefinition) {
  NvaeModel model(small_model(), 6);
  const Dataset d = small_data(12);
  const auto gaps = surrogate_gaps(model, d, 5);
  ASSERT_EQ(gaps.size(), d.size());
  const auto& cfg = model.config();
  for (std::size_t n = 0; n < d.size(); ++n) {
    Tape tape;
    const auto q = encode(model, tape, d.gather(std::vector<std::size_t>{n}));
    std::vector<double> a(q.pi.alpha.value().data().begin(), q.pi.alpha.value().data().end());
    std::vector<double> p(cfg.layout.classes, cfg.alpha_p);
    p[d.labels[n]] += 1;
    // closed-form Dirichlet KL with the high-precision special functions
    double a0 = 0, p0 = 0, kl = 0;
    for (std::size_t j = 0; j < a.size(); ++j) a0 += a[j], p0 += p[j];
    kl = oracle::lgamma(a0) - oracle::lgamma(p0);
    for (std::size_t j = 0; j < a.size(); ++j)
      kl += oracle::lgamma(p[j]) - oracle::lgamma(a[j]) + (a[j] - p[j]) * (oracle::digamma(a[j]) - oracle::digamma(a0));
    const double log_qy = std::log(a[d.labels[n]] / a0);
    EXPECT_NEAR(gaps[n], kl + log_qy, 1e-9 * std::max(1.0, std::abs(kl)));
  }
  const auto s = summarize(gaps);
  EXPECT_EQ(s.count, gaps.size());
  EXPECT_LE(s.min, s.mean);
  EXPECT_LE(s.mean, s.max);
}

TEST(SurrogateGap, BoundEstimateCoversDraws) {
  ModelConfig cfg = small_model();
  const auto a = estimate_surrogate_bound(cfg, 2000, 3);
  const auto b = estimate_surrogate_bound(cfg, 2000, 3);
  EXPECT_EQ(a.k_hat, b.k_hat);
  EXPECT_GE(a.k_hat, a.sample_max);
  EXPECT_EQ(a.exceed, 0u);
  EXPECT_LE(a.validation_max, a.k_hat);
  // wider boxes allow larger concentrations and larger gaps
  EXPECT_GT(estimate_surrogate_bound(cfg, 2000, 3, 10.0).k_hat, a.k_hat);
}

TEST(BoundCheck, ElboBelowImportanceEstimate) {
  NvaeModel model(checks::tiny_config(), 8);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 3; ++i) {
    const Tensor x = oracle::uniform({1, 6}, 0, 1, rng);
    const auto b = importance_bound_check(model, x, i % 2, 5000, 10 + i, 700);
    EXPECT_LE(b.elbo, b.log_marginal + 3 * std::hypot(b.elbo_se, b.log_marginal_se));
    EXPECT_GT(b.elbo_se, 0.0);
  }
  EXPECT_THROW(importance_bound_check(model, Tensor({2, 6}), 0, 10, 1), ShapeError);
}

TEST(Images, TileAndPgmRoundTrip) {
  Tensor imgs({5, 6});
  for (std::size_t i = 0; i < imgs.size(); ++i) imgs[i] = static_cast<double>(i) / (imgs.size() - 1);
  const GrayImage g = tile_images(imgs, 2, 3, 2);
  EXPECT_EQ(g.width, 6u);
  EXPECT_EQ(g.height, 6u);
  EXPECT_EQ(g.pixels[0], 0);
  EXPECT_EQ(g.pixels[(4 * 6) + 0], std::lround(255.0 * 24 / 29));
  EXPECT_EQ(g.pixels.back(), 0);  // empty sixth cell
  const auto path = fs::temp_directory_path() / "nvae_tile.pgm";
  write_pgm(path, g);
  const GrayImage back = read_pgm(path);
  EXPECT_EQ(back.width, g.width);
  EXPECT_EQ(back.pixels, g.pixels);
  EXPECT_THROW(tile_images(imgs, 2, 2, 2), ShapeError);
}

TEST(Images, TraversalGridDimensions) {
  NvaeModel model(small_model(), 3);
  TraversalBase base;
  base.label = 1;
  const GrayImage g = traversal_grid(model, {LatentTarget::shared_dim(0), LatentTarget::shared_dim(1)}, 10, base, 4, 4);
  EXPECT_EQ(g.width, 40u);
  EXPECT_EQ(g.height, 8u);
  EXPECT_THROW(traversal_grid(model, {LatentTarget::shared_dim(0)}, 10, base, 3, 4), ShapeError);
}

TEST(Augmentation, ZeroSubstitutionMatchesBaseline) {
  NvaeModel model(small_model(), 3);
  const Dataset train = small_data(60), test = small_data(30);
  AugmentationConfig c;
  c.p_sub = 0.0;
  c.repetitions = 2;
  c.probe.hidden = 8;
  c.probe.epochs = 2;
  c.probe.batch_size = 16;
  const auto a = augmentation_experiment(model, train, test, c);
  const auto b = augmentation_baseline(train, test, c);
  ASSERT_EQ(a.errors.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(a.errors[i]), std::bit_cast<std::uint64_t>(b.errors[i]));
  EXPECT_EQ(a.seeds, b.seeds);
  EXPECT_EQ(b.sigma, 0.0);

  c.p_sub = 1.0;
  const auto full = augmentation_experiment(model, train, test, c);
  EXPECT_EQ(full.seeds, b.seeds);
  std::ostringstream s;
  write_augmentation_csv(s, {b, full});
  const std::string csv = s.str();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);

  c.p_sub = 1.5;
  EXPECT_THROW(augmentation_experiment(model, train, test, c), DomainError);
}

TEST(Augmentation, ProbeIsSeededAndLearns) {
  const Dataset train = small_data(90), test = small_data(30);
  ProbeConfig p;
  p.hidden = 16;
  p.epochs = 30;
  p.batch_size = 16;
  p.adam.lr = 0.01;
  const double e1 = probe_test_error(train, test, p, 5);
  EXPECT_EQ(e1, probe_test_error(train, test, p, 5));
  EXPECT_LT(e1, 0.5);
}
