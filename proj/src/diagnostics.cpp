#include "nvae/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "nvae/distributions.hpp"
#include "nvae/error.hpp"
#include "nvae/random.hpp"

namespace nvae {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double average(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void check_dataset(const NvaeModel& model, const Dataset& data) {
  if (data.dims() != model.config().input_dims || data.classes != model.layout().classes)
    throw ShapeError("dataset (" + std::to_string(data.dims()) + " dims, " + std::to_string(data.classes) +
                     " classes) does not match the model layout");
  if (data.size() == 0) throw DomainError("empty dataset");
}

// Calls fn(first_row, x_chunk, labels_chunk) over consecutive chunks.
template <typename Fn>
void for_chunks(const Dataset& data, std::size_t chunk, Fn fn) {
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    idx.resize(std::min(chunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    fn(start, data.gather(idx), data.gather_labels(idx));
  }
}

}  // namespace

double KlProfile::mean_shared() const { return average(shared); }
double KlProfile::mean_class() const { return average(cls); }
double KlProfile::mean_true_class() const { return average(true_class); }
double KlProfile::mean_off_class() const { return average(off_class); }

KlProfile kl_profile(NvaeModel& model, const Dataset& data, std::size_t chunk) {
  check_dataset(model, data);
  const LatentLayout& L = model.layout();
  const std::size_t dc = L.class_dims, cb = L.class_block_dims();
  KlProfile p;
  p.layout = L;
  p.count = data.size();
  p.shared.assign(L.shared_dims, 0.0);
  p.cls.assign(cb, 0.0);
  p.true_class.assign(dc, 0.0);
  p.off_class.assign(dc, 0.0);
  for_chunks(data, chunk, [&](std::size_t, const Tensor& x, const std::vector<std::size_t>& y) {
    Tape tape;
    const Tensor kl = gauss_kl_std(encode(model, tape, x).z).per_dim.value();
    for (std::size_t n = 0; n < y.size(); ++n) {
      auto row = kl.row_span(n);
      for (std::size_t j = 0; j < cb; ++j) p.cls[j] += row[j];
      for (std::size_t j = 0; j < L.shared_dims; ++j) p.shared[j] += row[cb + j];
      for (std::size_t i = 0; i < L.classes; ++i)
        for (std::size_t j = 0; j < dc; ++j) (i == y[n] ? p.true_class : p.off_class)[j] += row[i * dc + j];
    }
  });
  const double n = static_cast<double>(p.count);
  for (double& v : p.shared) v /= n;
  for (double& v : p.cls) v /= n;
  for (double& v : p.true_class) v /= n;
  for (double& v : p.off_class) v /= L.classes > 1 ? n * static_cast<double>(L.classes - 1) : n;
  if (L.classes == 1) std::fill(p.off_class.begin(), p.off_class.end(), 0.0);
  return p;
}

void write_kl_csv(std::ostream& out, const KlProfile& p) {
  out << "group,class,dim,mean_kl\n";
  for (std::size_t j = 0; j < p.shared.size(); ++j) out << "shared,," << j << ',' << fmt(p.shared[j]) << '\n';
  const std::size_t dc = p.layout.class_dims;
  for (std::size_t j = 0; j < p.cls.size(); ++j)
    out << "class," << j / dc << ',' << j % dc << ',' << fmt(p.cls[j]) << '\n';
  for (std::size_t j = 0; j < p.true_class.size(); ++j) out << "true_class,," << j << ',' << fmt(p.true_class[j]) << '\n';
  for (std::size_t j = 0; j < p.off_class.size(); ++j) out << "off_class,," << j << ',' << fmt(p.off_class[j]) << '\n';
}

Tensor class_kl_confusion(NvaeModel& model, const Dataset& data, std::size_t chunk) {
  check_dataset(model, data);
  const LatentLayout& L = model.layout();
  const std::size_t C = L.classes, dc = L.class_dims;
  Tensor m({C, C});
  std::vector<std::size_t> counts(C, 0);
  if (dc == 0) return m;
  for_chunks(data, chunk, [&](std::size_t, const Tensor& x, const std::vector<std::size_t>& y) {
    Tape tape;
    const Tensor kl = gauss_kl_std(encode(model, tape, x).z).per_dim.value();
    for (std::size_t n = 0; n < y.size(); ++n) {
      ++counts[y[n]];
      auto row = kl.row_span(n);
      for (std::size_t i = 0; i < C; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < dc; ++j) s += row[i * dc + j];
        m.at(y[n], i) += s / static_cast<double>(dc);
      }
    }
  });
  for (std::size_t t = 0; t < C; ++t)
    if (counts[t] > 0)
      for (std::size_t i = 0; i < C; ++i) m.at(t, i) /= static_cast<double>(counts[t]);
  return m;
}

void write_confusion_csv(std::ostream& out, const Tensor& m) {
  out << "true_class";
  for (std::size_t i = 0; i < m.cols(); ++i) out << ",block_" << i;
  out << '\n';
  for (std::size_t t = 0; t < m.rows(); ++t) {
    out << t;
    for (std::size_t i = 0; i < m.cols(); ++i) out << ',' << fmt(m.at(t, i));
    out << '\n';
  }
}

std::vector<double> surrogate_gaps(NvaeModel& model, const Dataset& data, std::size_t chunk) {
  check_dataset(model, data);
  const auto& cfg = model.config();
  std::vector<double> gaps(data.size());
  for_chunks(data, chunk, [&](std::size_t start, const Tensor& x, const std::vector<std::size_t>& y) {
    Tape tape;
    DirichletParams q = encode(model, tape, x).pi;
    Var prior = tape.constant(dirichlet_posterior(cfg.alpha_p, cfg.layout.classes, y));
    Var gap = dirichlet_kl(q, {prior}) + pick(class_log_prob_from_dirichlet(q), y);
    for (std::size_t n = 0; n < y.size(); ++n) gaps[start + n] = gap.value()[n];
  });
  return gaps;
}

GapStats summarize(const std::vector<double>& v) {
  GapStats s;
  s.count = v.size();
  if (v.empty()) return s;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  s.mean = average(v);
  return s;
}

void write_gap_csv(std::ostream& out, const GapStats& s) {
  out << "count,min,mean,max\n" << s.count << ',' << fmt(s.min) << ',' << fmt(s.mean) << ',' << fmt(s.max) << '\n';
}

Var surrogate_gap_from_logits(Var h, std::span<const std::size_t> labels, const ModelConfig& cfg) {
  Tape& tape = h.tape();
  DirichletParams q{cfg.alpha_q * (softplus(h) + cfg.concentration_floor)};
  Var prior = tape.constant(dirichlet_posterior(cfg.alpha_p, cfg.layout.classes, labels));
  return dirichlet_kl(q, {prior}) + pick(class_log_prob_from_dirichlet(q), labels);
}

namespace {

struct GapDraw {
  Tensor h;
  std::vector<std::size_t> labels;
};

GapDraw draw_logits(std::size_t n, std::size_t classes, double range, std::mt19937_64& rng) {
  GapDraw d{Tensor({n, classes}), std::vector<std::size_t>(n)};
  std::uniform_real_distribution<double> u(-range, range);
  std::uniform_int_distribution<std::size_t> label(0, classes - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < classes; ++j) d.h.at(i, j) = u(rng);
    d.labels[i] = label(rng);
  }
  return d;
}

std::vector<double> gap_values(const GapDraw& d, const ModelConfig& cfg) {
  Tape tape;
  const Tensor& g = surrogate_gap_from_logits(tape.constant(d.h), d.labels, cfg).value();
  return g.vector();
}

}  // namespace

SurrogateBound estimate_surrogate_bound(const ModelConfig& cfg, std::size_t samples, std::uint64_t seed,
                                        double range) {
  if (samples == 0) throw DomainError("surrogate bound needs samples");
  if (!(range > 0.0)) throw DomainError("surrogate bound range must be > 0");
  const std::size_t L = cfg.layout.classes;
  SurrogateBound out;
  out.samples = samples;

  std::mt19937_64 fit_rng(derive_seed(seed, {1}));
  GapDraw fit = draw_logits(samples, L, range, fit_rng);
  std::vector<double> g = gap_values(fit, cfg);
  out.sample_max = *std::max_element(g.begin(), g.end());

  // Candidate starting points: the best fitted samples plus every corner of the box.
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t top = std::min<std::size_t>(16, samples);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
  GapDraw start;
  std::vector<double> rows;
  std::vector<std::size_t> labels;
  for (std::size_t k = 0; k < top; ++k) {
    auto r = fit.h.row_span(order[k]);
    rows.insert(rows.end(), r.begin(), r.end());
    labels.push_back(fit.labels[order[k]]);
  }
  double best = out.sample_max;
  if (L <= 12) {
    GapDraw corners{Tensor({(std::size_t{1} << L) * L, L}), {}};
    std::size_t i = 0;
    for (std::size_t mask = 0; mask < (std::size_t{1} << L); ++mask)
      for (std::size_t y = 0; y < L; ++y, ++i) {
        for (std::size_t j = 0; j < L; ++j) corners.h.at(i, j) = (mask >> j) & 1 ? range : -range;
        corners.labels.push_back(y);
      }
    std::vector<double> cg = gap_values(corners, cfg);
    std::vector<std::size_t> corder(cg.size());
    std::iota(corder.begin(), corder.end(), std::size_t{0});
    const std::size_t ctop = std::min<std::size_t>(16, cg.size());
    std::partial_sort(corder.begin(), corder.begin() + static_cast<std::ptrdiff_t>(ctop), corder.end(),
                      [&](std::size_t a, std::size_t b) { return cg[a] > cg[b]; });
    best = std::max(best, cg[corder[0]]);
    for (std::size_t k = 0; k < ctop; ++k) {
      auto r = corners.h.row_span(corder[k]);
      rows.insert(rows.end(), r.begin(), r.end());
      labels.push_back(corners.labels[corder[k]]);
    }
  }

  // Projected gradient ascent from each start, rows independent.
  const std::size_t n = labels.size();
  Tensor h({n, L}, rows);
  const std::size_t steps = 400;
  for (std::size_t t = 0; t < steps; ++t) {
    Tape tape;
    Var hv = tape.variable(h);
    Var gap = surrogate_gap_from_logits(hv, labels, cfg);
    for (double v : gap.value().data()) best = std::max(best, v);
    tape.backward(sum(gap));
    const Tensor grad = tape.grad(hv);
    const double step = 0.2 * (1.0 - static_cast<double>(t) / steps) + 1e-3;
    for (std::size_t i = 0; i < n; ++i) {
      double norm = 0.0;
      for (std::size_t j = 0; j < L; ++j) norm += grad.at(i, j) * grad.at(i, j);
      norm = std::sqrt(norm);
      if (norm == 0.0) continue;
      for (std::size_t j = 0; j < L; ++j)
        h.at(i, j) = std::clamp(h.at(i, j) + step * grad.at(i, j) / norm, -range, range);
    }
  }
  {
    Tape tape;
    for (double v : surrogate_gap_from_logits(tape.constant(h), labels, cfg).value().data()) best = std::max(best, v);
  }
  out.k_hat = best;

  std::mt19937_64 val_rng(derive_seed(seed, {2}));
  std::vector<double> vg = gap_values(draw_logits(samples, L, range, val_rng), cfg);
  out.validation_max = *std::max_element(vg.begin(), vg.end());
  out.exceed = static_cast<std::size_t>(std::count_if(vg.begin(), vg.end(), [&](double v) { return v > out.k_hat; }));
  return out;
}

BoundCheck importance_bound_check(NvaeModel& model, const Tensor& x, std::size_t label, std::size_t samples,
                                  std::uint64_t seed, std::size_t chunk) {
  const auto& cfg = model.config();
  if (x.rows() != 1 || x.cols() != cfg.input_dims) throw ShapeError("bound check takes a single example");
  if (label >= cfg.layout.classes) throw DomainError("bound check label out of range");
  if (samples < 2) throw DomainError("bound check needs at least two samples");
  const std::size_t dz = cfg.layout.z_dims(), D = cfg.input_dims;

  Tensor mu, lv;
  double kl_z = 0.0, kl_pi = 0.0;
  {
    Tape tape;
    EncoderOutput q = encode(model, tape, x);
    mu = q.z.mean.value();
    lv = q.z.log_var.value();
    kl_z = gauss_kl_std(q.z).total.item();
    const std::size_t y[1] = {label};
    kl_pi = dirichlet_kl(q.pi, {tape.constant(dirichlet_posterior(cfg.alpha_p, cfg.layout.classes, y))}).item();
  }

  // log p(x | y, z) for z = mu + sigma * eps, one value per noise row.
  auto recon = [&](const Tensor& eps) {
    const std::size_t n = eps.rows();
    Tensor z({n, dz});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dz; ++j) z.at(i, j) = mu[j] + std::exp(0.5 * lv[j]) * eps.at(i, j);
    Tensor xs({n, D});
    for (std::size_t i = 0; i < n; ++i) std::copy(x.data().begin(), x.data().end(), xs.row_span(i).begin());
    std::vector<std::size_t> ys(n, label);
    Tape tape;
    return bernoulli_recon_ll(decode_latent(model, tape.constant(std::move(z)), ys), xs).value();
  };

  std::mt19937_64 is_rng(derive_seed(seed, {1}));
  std::mt19937_64 elbo_rng(derive_seed(seed, {2}));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> log_w, elbo;
  log_w.reserve(samples);
  elbo.reserve(samples);
  for (std::size_t start = 0; start < samples; start += chunk) {
    const std::size_t n = std::min(chunk, samples - start);
    Tensor eps({n, dz});
    for (double& v : eps.data()) v = normal(is_rng);
    const Tensor r = recon(eps);
    for (std::size_t i = 0; i < n; ++i) {
      // log N(z; 0, I) - log q(z | x); the 2 pi terms cancel.
      double lw = r[i];
      for (std::size_t j = 0; j < dz; ++j) {
        const double z = mu[j] + std::exp(0.5 * lv[j]) * eps.at(i, j);
        lw += -0.5 * z * z + 0.5 * (eps.at(i, j) * eps.at(i, j) + lv[j]);
      }
      log_w.push_back(lw);
    }
    for (double& v : eps.data()) v = normal(elbo_rng);
    const Tensor re = recon(eps);
    for (std::size_t i = 0; i < n; ++i) elbo.push_back(re[i] - kl_z - kl_pi);
  }

  BoundCheck b;
  const double n = static_cast<double>(samples);
  const double m = *std::max_element(log_w.begin(), log_w.end());
  double s1 = 0.0, s2 = 0.0;
  for (double lw : log_w) {
    const double w = std::exp(lw - m);
    s1 += w;
    s2 += w * w;
  }
  const double wbar = s1 / n;
  const double wvar = std::max(0.0, (s2 - n * wbar * wbar) / (n - 1.0));
  b.log_marginal = m + std::log(wbar);
  b.log_marginal_se = std::sqrt(wvar / n) / wbar;
  b.elbo = average(elbo);
  double ss = 0.0;
  for (double e : elbo) ss += (e - b.elbo) * (e - b.elbo);
  b.elbo_se = std::sqrt(ss / (n - 1.0) / n);
  return b;
}

GrayImage tile_images(const Tensor& images, std::size_t h, std::size_t w, std::size_t columns) {
  if (images.cols() != h * w) throw ShapeError("tile_images: rows of " + to_string(images.shape()) + " are not " +
                                               std::to_string(h) + "x" + std::to_string(w) + " images");
  if (columns == 0) throw DomainError("tile_images: zero columns");
  const std::size_t n = images.rows();
  const std::size_t grid_rows = (n + columns - 1) / columns;
  GrayImage g;
  g.width = columns * w;
  g.height = grid_rows * h;
  g.pixels.assign(g.width * g.height, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t gr = k / columns, gc = k % columns;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double v = std::clamp(images.at(k, i * w + j), 0.0, 1.0);
        g.pixels[(gr * h + i) * g.width + gc * w + j] = static_cast<std::uint8_t>(std::lround(255.0 * v));
      }
  }
  return g;
}

void write_pgm(const fs::path& path, const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height) throw ShapeError("write_pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

GrayImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  GrayImage g;
  int maxval = 0;
  if (!(in >> magic >> g.width >> g.height >> maxval) || magic != "P5" || maxval != 255)
    throw FormatError(path.string() + ": not an 8-bit binary PGM");
  in.get();
  g.pixels.resize(g.width * g.height);
  if (!in.read(reinterpret_cast<char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size())))
    throw FormatError(path.string() + ": truncated PGM");
  return g;
}

GrayImage traversal_grid(NvaeModel& model, const std::vector<LatentTarget>& targets, std::size_t steps,
                         const TraversalBase& base, std::size_t h, std::size_t w) {
  if (targets.empty()) throw DomainError("traversal grid needs at least one target");
  const std::size_t D = model.config().input_dims;
  if (h * w != D) throw ShapeError("traversal grid: " + std::to_string(h) + "x" + std::to_string(w) +
                                   " does not match " + std::to_string(D) + " model inputs");
  Tensor all({targets.size() * steps, D});
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const Tensor rows = traverse(model, base, targets[t], steps);
    std::copy(rows.data().begin(), rows.data().end(), all.data().begin() + static_cast<std::ptrdiff_t>(t * steps * D));
  }
  return tile_images(all, h, w, steps);
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

constexpr std::uint64_t kProbeStream = 1;
constexpr std::uint64_t kSubstituteStream = 2;
constexpr std::uint64_t kGenerateStream = 3;

Var probe_logits(Tape& tape, ParamStore& p, const Tensor& x) {
  Var h = relu(matmul(tape.constant(x), tape.param(p, "probe.0.w")) + tape.param(p, "probe.0.b"));
  return matmul(h, tape.param(p, "probe.1.w")) + tape.param(p, "probe.1.b");
}

Tensor glorot(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor t({in, out});
  for (double& v : t.data()) v = u(rng);
  return t;
}

double stddev(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::uint64_t probe_seed(const AugmentationConfig& c, std::size_t rep) {
  return derive_seed(c.seed, {rep, kProbeStream});
}

AugmentationResult finish(const AugmentationConfig& c, std::vector<std::uint64_t> seeds, std::vector<double> errors) {
  AugmentationResult r;
  r.p_sub = c.p_sub;
  r.sigma = c.sigma;
  r.seeds = std::move(seeds);
  r.errors = std::move(errors);
  r.mean = average(r.errors);
  r.stddev = stddev(r.errors, r.mean);
  r.probe = c.probe;
  return r;
}

}  // namespace

double probe_test_error(const Dataset& train, const Dataset& test, const ProbeConfig& c, std::uint64_t seed) {
  if (train.dims() != test.dims() || train.classes != test.classes)
    throw ShapeError("probe: train and test sets have different shapes");
  if (c.hidden == 0 || c.epochs == 0 || c.batch_size == 0) throw ConfigError("probe hidden, epochs and batch must be >= 1");
  std::mt19937_64 init(derive_seed(seed, {1}));
  ParamStore p;
  p.add("probe.0.w", glorot(train.dims(), c.hidden, init));
  p.add("probe.0.b", Tensor({1, c.hidden}));
  p.add("probe.1.w", glorot(c.hidden, train.classes, init));
  p.add("probe.1.b", Tensor({1, train.classes}));
  AdamState state = AdamState::for_store(p);
  BatchSchedule schedule(train.size(), c.batch_size, derive_seed(seed, {2}));
  for (std::size_t e = 0; e < c.epochs; ++e) {
    for (const auto& batch : schedule.epoch(e)) {
      const auto y = train.gather_labels(batch);
      Tape tape;
      Var loss = mean(categorical_nll(log_softmax(probe_logits(tape, p, train.gather(batch))), y));
      p.zero_grad();
      tape.backward(loss);
      adam_step(p, state, c.adam);
    }
  }
  std::size_t wrong = 0;
  for_chunks(test, 1000, [&](std::size_t, const Tensor& x, const std::vector<std::size_t>& y) {
    Tape tape;
    const Tensor logits = probe_logits(tape, p, x).value();
    for (std::size_t i = 0; i < y.size(); ++i) {
      auto row = logits.row_span(i);
      if (static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) != y[i]) ++wrong;
    }
  });
  return static_cast<double>(wrong) / static_cast<double>(test.size());
}

void AugmentationConfig::validate() const {
  if (!(p_sub >= 0.0 && p_sub <= 1.0)) throw DomainError("p_sub must lie in [0, 1]");
  if (!(sigma > 0.0)) throw DomainError("sigma must be > 0");
  if (repetitions < 1) throw DomainError("at least one repetition is required");
}

AugmentationResult augmentation_experiment(NvaeModel& model, const Dataset& train, const Dataset& test,
                                           const AugmentationConfig& c) {
  c.validate();
  check_dataset(model, train);
  std::vector<std::uint64_t> seeds;
  std::vector<double> errors;
  for (std::size_t rep = 0; rep < c.repetitions; ++rep) {
    std::mt19937_64 sub_rng(derive_seed(c.seed, {rep, kSubstituteStream}));
    std::mt19937_64 gen_rng(derive_seed(c.seed, {rep, kGenerateStream}));
    std::bernoulli_distribution coin(c.p_sub);
    std::vector<std::size_t> replaced;
    for (std::size_t i = 0; i < train.size(); ++i)
      if (coin(sub_rng)) replaced.push_back(i);

    Dataset augmented = train;
    const std::size_t D = train.dims();
    for (std::size_t start = 0; start < replaced.size(); start += 500) {
      const std::size_t n = std::min<std::size_t>(500, replaced.size() - start);
      std::vector<std::size_t> labels(n);
      for (std::size_t k = 0; k < n; ++k) labels[k] = train.labels[replaced[start + k]];
      const Tensor gen = generate(model, labels, c.sigma, gen_rng);
      for (std::size_t k = 0; k < n; ++k)
        std::copy_n(gen.data().data() + k * D, D, augmented.images.data().data() + replaced[start + k] * D);
    }
    seeds.push_back(probe_seed(c, rep));
    errors.push_back(probe_test_error(augmented, test, c.probe, seeds.back()));
  }
  return finish(c, std::move(seeds), std::move(errors));
}

AugmentationResult augmentation_baseline(const Dataset& train, const Dataset& test, const AugmentationConfig& c) {
  AugmentationConfig base = c;
  base.p_sub = 0.0;
  base.validate();
  std::vector<std::uint64_t> seeds;
  std::vector<double> errors;
  for (std::size_t rep = 0; rep < c.repetitions; ++rep) {
    seeds.push_back(probe_seed(c, rep));
    errors.push_back(probe_test_error(train, test, c.probe, seeds.back()));
  }
  AugmentationResult r = finish(base, std::move(seeds), std::move(errors));
  r.sigma = 0.0;  // nothing is generated
  return r;
}

void write_augmentation_csv(std::ostream& out, const std::vector<AugmentationResult>& results) {
  out << "p_sub,sigma,repetition,seed,test_error,mean_error,std_error,probe_hidden,probe_epochs,probe_batch\n";
  for (const auto& r : results)
    for (std::size_t i = 0; i < r.errors.size(); ++i)
      out << fmt(r.p_sub) << ',' << fmt(r.sigma) << ',' << i << ',' << r.seeds[i] << ',' << fmt(r.errors[i]) << ','
          << fmt(r.mean) << ',' << fmt(r.stddev) << ',' << r.probe.hidden << ',' << r.probe.epochs << ','
          << r.probe.batch_size << '\n';
}

}  // namespace nvae
