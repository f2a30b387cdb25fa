#include "nvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nvae/error.hpp"

namespace nvae {

void LatentLayout::validate() const {
  if (classes < 1) throw ConfigError("latent layout needs at least one class");
  if (shared_dims < 1) throw ConfigError("latent layout needs at least one shared dim");
}

void ModelConfig::validate() const {
  layout.validate();
  if (input_dims < 1) throw ConfigError("model input dimension must be positive");
  if (encoder_hidden.empty() || decoder_hidden.empty()) throw ConfigError("encoder and decoder need a hidden layer");
  for (auto h : encoder_hidden)
    if (h == 0) throw ConfigError("zero-width encoder layer");
  for (auto h : decoder_hidden)
    if (h == 0) throw ConfigError("zero-width decoder layer");
  if (!(alpha_p > 0.0)) throw ConfigError("alpha_p must be > 0");
  if (!(alpha_q > 0.0)) throw ConfigError("alpha_q must be > 0");
  if (!(concentration_floor >= 0.0)) throw ConfigError("concentration_floor must be >= 0");
}

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor w({fan_in, fan_out});
  for (double& v : w.data()) v = u(rng);
  return w;
}

void add_dense(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  store.add(name + ".w", glorot(in, out, rng));
  store.add(name + ".b", Tensor({1, out}));
}

Var dense(Tape& tape, ParamStore& store, const std::string& name, Var x) {
  return matmul(x, tape.param(store, name + ".w")) + tape.param(store, name + ".b");
}

std::string layer(const char* prefix, std::size_t i) { return std::string(prefix) + "." + std::to_string(i); }

void require_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows)
    throw ShapeError(std::to_string(labels.size()) + " labels for a batch of " + std::to_string(rows));
  for (auto y : labels)
    if (y >= classes)
      throw DomainError("class index " + std::to_string(y) + " out of range for " + std::to_string(classes) +
                        " classes");
}

}  // namespace

NvaeModel::NvaeModel(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(init_seed);
  const auto& L = config_.layout;

  std::size_t in = config_.input_dims;
  for (std::size_t i = 0; i < config_.encoder_hidden.size(); ++i) {
    add_dense(encoder_, layer("enc", i), in, config_.encoder_hidden[i], rng);
    in = config_.encoder_hidden[i];
  }
  add_dense(encoder_, "enc.mean", in, L.z_dims(), rng);
  add_dense(encoder_, "enc.logvar", in, L.z_dims(), rng);
  add_dense(encoder_, "enc.conc", in, L.classes, rng);

  in = L.decoder_input_dims(config_.class_bias);
  for (std::size_t i = 0; i < config_.decoder_hidden.size(); ++i) {
    add_dense(decoder_, layer("dec", i), in, config_.decoder_hidden[i], rng);
    in = config_.decoder_hidden[i];
  }
  add_dense(decoder_, "dec.out", in, config_.input_dims, rng);
}

EncoderOutput encode(NvaeModel& model, Tape& tape, const Tensor& x) {
  const auto& cfg = model.config();
  if (x.cols() != cfg.input_dims || x.rank() > 2)
    throw ShapeError("encode: input " + to_string(x.shape()) + " does not have " +
                     std::to_string(cfg.input_dims) + " columns");
  for (double v : x.data())
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("encode: input value " + std::to_string(v) + " outside [0, 1]");

  ParamStore& enc = model.encoder();
  Var h = tape.constant(x.reshaped({x.rows(), x.cols()}));
  for (std::size_t i = 0; i < cfg.encoder_hidden.size(); ++i) h = tanh(dense(tape, enc, layer("enc", i), h));
  Var mean = dense(tape, enc, "enc.mean", h);
  Var log_var = dense(tape, enc, "enc.logvar", h);
  Var alpha = cfg.alpha_q * (softplus(dense(tape, enc, "enc.conc", h)) + cfg.concentration_floor);
  return {{mean, log_var}, {alpha}};
}

Var mask_class_latents(Tape& tape, Var class_latents, std::span<const std::size_t> labels,
                       const LatentLayout& layout, bool class_bias) {
  const std::size_t L = layout.classes, dc = layout.class_dims;
  const std::size_t stride = dc + (class_bias ? 1 : 0);
  const std::size_t rows = class_latents.valid() ? class_latents.rows() : labels.size();
  if (stride == 0) throw ShapeError("mask_class_latents: z_cy has no columns (d_c = 0 without class bias)");
  require_labels(labels, rows, L);
  if (dc > 0) {
    if (!class_latents.valid()) throw ShapeError("mask_class_latents: missing class latents");
    if (class_latents.cols() != L * dc)
      throw ShapeError("mask_class_latents: class latents " + to_string(class_latents.shape()) + " need " +
                       std::to_string(L * dc) + " columns");
  }

  const std::size_t width = L * stride;
  const std::size_t offset = class_bias ? 1 : 0;
  std::vector<std::size_t> y(labels.begin(), labels.end());
  Tensor out({rows, width});
  for (std::size_t n = 0; n < rows; ++n) {
    double* row = out.data().data() + n * width + y[n] * stride;
    if (class_bias) row[0] = 1.0;
    if (dc > 0) {
      const double* z = class_latents.value().data().data() + n * L * dc + y[n] * dc;
      std::copy_n(z, dc, row + offset);
    }
  }
  if (dc == 0) return tape.constant(std::move(out));
  auto backward = [y, L, dc, stride, offset, width](const Tensor& g, std::span<Tensor* const> pg) {
    Tensor& gz = *pg[0];
    for (std::size_t n = 0; n < y.size(); ++n)
      for (std::size_t j = 0; j < dc; ++j) gz[n * L * dc + y[n] * dc + j] += g[n * width + y[n] * stride + offset + j];
  };
  return tape.record("mask_class_latents", std::move(out), {class_latents}, backward);
}

Var decode(NvaeModel& model, Var z_cy, Var z_s) {
  const auto& cfg = model.config();
  const auto& L = cfg.layout;
  const std::size_t masked = L.masked_dims(cfg.class_bias);
  if (z_s.cols() != L.shared_dims)
    throw ShapeError("decode: z_s " + to_string(z_s.shape()) + " needs " + std::to_string(L.shared_dims) + " columns");
  if (masked > 0 && (!z_cy.valid() || z_cy.cols() != masked))
    throw ShapeError("decode: z_cy needs " + std::to_string(masked) + " columns");
  if (masked == 0 && z_cy.valid()) throw ShapeError("decode: model takes no z_cy");

  Tape& tape = z_s.tape();
  ParamStore& dec = model.decoder();
  Var h = masked > 0 ? concat({z_cy, z_s}, 1) : z_s;
  for (std::size_t i = 0; i < cfg.decoder_hidden.size(); ++i) h = tanh(dense(tape, dec, layer("dec", i), h));
  return dense(tape, dec, "dec.out", h);
}

Var decode_latent(NvaeModel& model, Var z, std::span<const std::size_t> labels) {
  const auto& cfg = model.config();
  const auto& L = cfg.layout;
  if (z.cols() != L.z_dims())
    throw ShapeError("decode_latent: z " + to_string(z.shape()) + " needs " + std::to_string(L.z_dims()) + " columns");
  Tape& tape = z.tape();
  const std::size_t cb = L.class_block_dims();
  Var z_s = slice(z, 1, cb, L.z_dims());
  Var z_cy;
  if (L.masked_dims(cfg.class_bias) > 0) {
    Var z_c = cb > 0 ? slice(z, 1, 0, cb) : Var{};
    z_cy = mask_class_latents(tape, z_c, labels, L, cfg.class_bias);
  }
  return decode(model, z_cy, z_s);
}

namespace {

struct Weights {
  double beta_s = 1.0;
  double beta_c = 1.0;
  bool classify = true;
  bool exact = false;
};

ObjectiveTerms evaluate(NvaeModel& model, Tape& tape, const Tensor& x, std::span<const std::size_t> labels,
                        NoiseSamples noise, const Weights& w) {
  const auto& cfg = model.config();
  const auto& L = cfg.layout;
  require_labels(labels, x.rows(), L.classes);
  if (noise.empty()) throw std::invalid_argument("objective needs at least one noise sample");

  EncoderOutput q = encode(model, tape, x);
  Var recon;
  for (std::size_t s = 0; s < noise.size(); ++s) {
    Var z = gauss_sample(q.z, noise[s]);
    Var ll = bernoulli_recon_ll(decode_latent(model, z, labels), x);
    recon = s == 0 ? ll : recon + ll;
  }
  if (noise.size() > 1) recon = recon * (1.0 / static_cast<double>(noise.size()));

  ObjectiveTerms t;
  t.recon = recon;
  t.concentration = q.pi.alpha;
  GaussKl kl = gauss_kl_std(q.z);
  t.kl_per_dim = kl.per_dim;
  const std::size_t cb = L.class_block_dims();
  t.kl_shared = sum(slice(kl.per_dim, 1, cb, L.z_dims()), 1);
  t.kl_class = cb > 0 ? sum(slice(kl.per_dim, 1, 0, cb), 1) : tape.constant(Tensor({x.rows(), 1}));

  Var kl_term = w.beta_s == 1.0 ? t.kl_shared : t.kl_shared * w.beta_s;
  if (cb > 0) kl_term = kl_term + (w.beta_c == 1.0 ? t.kl_class : t.kl_class * w.beta_c);
  t.objective = recon - kl_term;

  if (w.exact) {
    Var prior = tape.constant(dirichlet_posterior(cfg.alpha_p, L.classes, labels));
    t.dirichlet_kl = dirichlet_kl(q.pi, {prior});
    t.objective = t.objective - t.dirichlet_kl;
  } else if (w.classify) {
    t.log_qy = pick(class_log_prob_from_dirichlet(q.pi), labels);
    t.objective = t.objective + t.log_qy;
  }
  return t;
}

}  // namespace

ObjectiveTerms objective_lobj(NvaeModel& model, Tape& tape, const Tensor& x, std::span<const std::size_t> labels,
                              NoiseSamples noise) {
  return evaluate(model, tape, x, labels, noise, {});
}

ObjectiveTerms objective_beta(NvaeModel& model, Tape& tape, const Tensor& x, std::span<const std::size_t> labels,
                              NoiseSamples noise, double beta_c) {
  if (!(beta_c >= 0.0)) throw DomainError("beta_c must be >= 0");
  Weights w;
  w.beta_c = beta_c;
  return evaluate(model, tape, x, labels, noise, w);
}

ObjectiveTerms objective_baseline(NvaeModel& model, Tape& tape, const Tensor& x, std::span<const std::size_t> labels,
                                  NoiseSamples noise, double beta_s) {
  const auto& cfg = model.config();
  if (cfg.layout.class_dims != 0 || cfg.class_bias)
    throw ConfigError("baseline objective needs class_dims = 0 and class_bias = false");
  if (!(beta_s >= 0.0)) throw DomainError("beta_s must be >= 0");
  Weights w;
  w.beta_s = beta_s;
  w.classify = false;
  return evaluate(model, tape, x, labels, noise, w);
}

ObjectiveTerms exact_elbo(NvaeModel& model, Tape& tape, const Tensor& x, std::span<const std::size_t> labels,
                          NoiseSamples noise) {
  Weights w;
  w.exact = true;
  return evaluate(model, tape, x, labels, noise, w);
}

std::vector<std::size_t> infer_label(NvaeModel& model, const Tensor& x) {
  Tape tape;
  EncoderOutput q = encode(model, tape, x);
  const Tensor& alpha = q.pi.alpha.value();
  std::vector<std::size_t> out(alpha.rows());
  for (std::size_t i = 0; i < alpha.rows(); ++i) {
    auto row = alpha.row_span(i);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Tensor generate(NvaeModel& model, std::span<const std::size_t> labels, double sigma, std::mt19937_64& rng) {
  if (!(sigma > 0.0)) throw DomainError("generate: sigma must be > 0");
  if (labels.empty()) throw DomainError("generate: no labels");
  const auto& L = model.layout();
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor z({labels.size(), L.z_dims()});
  for (double& v : z.data()) v = sigma * normal(rng);
  Tape tape;
  return sigmoid(decode_latent(model, tape.constant(std::move(z)), labels)).value();
}

std::vector<double> traversal_grid_values(std::size_t steps) {
  if (steps == 0) throw DomainError("traversal needs at least one step");
  std::vector<double> v(steps);
  for (std::size_t k = 0; k < steps; ++k)
    v[k] = -3.0 + 6.0 * (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
  return v;
}

Tensor traverse(NvaeModel& model, const TraversalBase& base, const LatentTarget& target, std::size_t steps) {
  const auto& L = model.layout();
  if (target.shared ? target.dim >= L.shared_dims : (target.cls >= L.classes || target.dim >= L.class_dims))
    throw DomainError("traverse: target " + std::string(target.shared ? "shared" : "class") + " dim out of range");
  const std::vector<double> grid = traversal_grid_values(steps);

  Tensor center({1, L.z_dims()});
  std::size_t label = 0;
  if (base.seed) {
    Tape tape;
    center = encode(model, tape, *base.seed).z.mean.value();
    if (center.rows() != 1) throw ShapeError("traverse: seed must be a single example");
    label = base.label ? *base.label : infer_label(model, *base.seed)[0];
  } else {
    if (!base.label) throw DomainError("traverse: need a seed input or a class label");
    label = *base.label;
  }
  if (label >= L.classes) throw DomainError("traverse: class " + std::to_string(label) + " out of range");

  const std::size_t col = target.shared ? L.class_block_dims() + target.dim : target.cls * L.class_dims + target.dim;
  Tensor z({steps, L.z_dims()});
  for (std::size_t k = 0; k < steps; ++k) {
    std::copy(center.data().begin(), center.data().end(), z.row_span(k).begin());
    z.at(k, col) = grid[k];
  }
  std::vector<std::size_t> labels(steps, label);
  Tape tape;
  return sigmoid(decode_latent(model, tape.constant(std::move(z)), labels)).value();
}

}  // namespace nvae
