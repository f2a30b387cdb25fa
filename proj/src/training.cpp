#include "nvae/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

#include "nvae/error.hpp"
#include "nvae/random.hpp"

namespace nvae {

namespace fs = std::filesystem;

namespace {

// Stream ids for derive_seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad number in checkpoint: " + s);
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad integer in checkpoint: " + s);
  return v;
}

bool store_finite(const ParamStore& store) {
  for (const auto& e : store.entries())
    if (!e.value.all_finite()) return false;
  return true;
}

}  // namespace

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::lobj: return "lobj";
    case ObjectiveKind::beta: return "beta";
    case ObjectiveKind::baseline: return "baseline";
  }
  return "?";
}

ObjectiveKind parse_objective_kind(const std::string& name) {
  if (name == "lobj") return ObjectiveKind::lobj;
  if (name == "beta") return ObjectiveKind::beta;
  if (name == "baseline") return ObjectiveKind::baseline;
  throw ConfigError("unknown objective '" + name + "' (expected lobj, beta or baseline)");
}

AdamState AdamState::for_store(const ParamStore& store) {
  AdamState s;
  for (const auto& e : store.entries()) {
    s.m.emplace_back(e.value.shape());
    s.v.emplace_back(e.value.shape());
  }
  return s;
}

void adam_step(ParamStore& store, AdamState& state, const AdamConfig& c) {
  if (state.m.size() != store.size() || state.v.size() != store.size())
    throw ShapeError("optimizer state has " + std::to_string(state.m.size()) + " slots for " +
                     std::to_string(store.size()) + " parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  std::size_t k = 0;
  for (auto& e : store.entries()) {
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    ++k;
    if (m.shape() != e.value.shape() || v.shape() != e.value.shape())
      throw ShapeError("optimizer state for " + e.name + " has shape " + to_string(m.shape()) + ", parameter has " +
                       to_string(e.value.shape()));
    auto w = e.value.data();
    auto g = e.grad.data();
    auto md = m.data();
    auto vd = v.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * g[i];
      vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * g[i] * g[i];
      w[i] -= c.lr * (md[i] / bc1) / (std::sqrt(vd[i] / bc2) + c.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (!(beta_c >= 0.0)) throw ConfigError("beta_c must be >= 0");
  if (!(beta_s >= 0.0)) throw ConfigError("beta_s must be >= 0");
  if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("moment decays must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam eps must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 1) throw ConfigError("epoch count must be >= 1");
  if (samples < 1) throw ConfigError("samples per step must be >= 1");
}

std::uint64_t init_seed(std::uint64_t seed) { return derive_seed(seed, {kInitStream}); }

void write_report_csv(std::ostream& out, const TrainReport& report, bool include_wall_time) {
  out << kReportHeader << '\n';
  for (const auto& r : report.epochs) {
    out << r.epoch << ',' << fmt(r.objective) << ',' << fmt(r.recon) << ',' << fmt(r.kl_shared) << ','
        << fmt(r.kl_class) << ',' << (r.class_nll ? fmt(*r.class_nll) : "") << ',' << fmt(r.train_accuracy) << ','
        << (r.test_accuracy ? fmt(*r.test_accuracy) : "") << ',' << (include_wall_time ? fmt(r.wall_seconds) : "")
        << '\n';
  }
}

void write_report_csv(const fs::path& path, const TrainReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_report_csv(out, report);
}

Trainer::Trainer(NvaeModel model, TrainConfig config)
    : model_(std::move(model)),
      config_(std::move(config)),
      enc_state_(AdamState::for_store(model_.encoder())),
      dec_state_(AdamState::for_store(model_.decoder())) {
  config_.validate();
  if (config_.objective == ObjectiveKind::baseline &&
      (model_.layout().class_dims != 0 || model_.config().class_bias))
    throw ConfigError("baseline objective needs class_dims = 0 and class_bias = false");
}

void Trainer::set_epochs(std::size_t epochs) {
  if (epochs < 1) throw ConfigError("epoch count must be >= 1");
  config_.epochs = epochs;
}

EpochRecord Trainer::run_epoch(const Dataset& train, const Dataset* test) {
  const auto start = std::chrono::steady_clock::now();
  if (train.dims() != model_.config().input_dims || train.classes != model_.layout().classes)
    throw ShapeError("dataset (" + std::to_string(train.dims()) + " dims, " + std::to_string(train.classes) +
                     " classes) does not match the model");
  const std::size_t epoch = epochs_done_;
  const std::size_t dz = model_.layout().z_dims();
  BatchSchedule schedule(train.size(), config_.batch_size, derive_seed(config_.seed, {kShuffleStream}));
  std::mt19937_64 noise_rng(derive_seed(config_.seed, {kNoiseStream, epoch}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const bool classify = config_.objective != ObjectiveKind::baseline;

  double sum_obj = 0, sum_recon = 0, sum_kls = 0, sum_klc = 0, sum_nll = 0;
  std::size_t correct = 0;
  for (const auto& batch : schedule.epoch(epoch)) {
    const Tensor x = train.gather(batch);
    const std::vector<std::size_t> y = train.gather_labels(batch);
    std::vector<Tensor> noise;
    for (std::size_t s = 0; s < config_.samples; ++s) {
      Tensor n({batch.size(), dz});
      for (double& v : n.data()) v = normal(noise_rng);
      noise.push_back(std::move(n));
    }

    Tape tape;
    ObjectiveTerms t;
    // blown-up parameters surface as non-finite or out-of-domain values
    try {
      switch (config_.objective) {
        case ObjectiveKind::lobj: t = objective_lobj(model_, tape, x, y, noise); break;
        case ObjectiveKind::beta: t = objective_beta(model_, tape, x, y, noise, config_.beta_c); break;
        case ObjectiveKind::baseline: t = objective_baseline(model_, tape, x, y, noise, config_.beta_s); break;
      }
    } catch (const NonFiniteError& e) {
      throw TrainingDiverged("epoch " + std::to_string(epoch + 1) + ": " + e.what(), {});
    } catch (const DomainError& e) {
      throw TrainingDiverged("epoch " + std::to_string(epoch + 1) + ": " + e.what(), {});
    }
    Var loss = -mean(t.objective);
    if (!std::isfinite(loss.item()))
      throw TrainingDiverged("non-finite objective in epoch " + std::to_string(epoch + 1), {});

    model_.encoder().zero_grad();
    model_.decoder().zero_grad();
    tape.backward(loss);
    adam_step(model_.encoder(), enc_state_, config_.adam);
    adam_step(model_.decoder(), dec_state_, config_.adam);
    if (!store_finite(model_.encoder()) || !store_finite(model_.decoder()))
      throw TrainingDiverged("non-finite parameters after a step in epoch " + std::to_string(epoch + 1), {});

    auto total = [](Var v) {
      double s = 0;
      for (double e : v.value().data()) s += e;
      return s;
    };
    sum_obj += total(t.objective);
    sum_recon += total(t.recon);
    sum_kls += total(t.kl_shared);
    sum_klc += total(t.kl_class);
    if (classify) sum_nll -= total(t.log_qy);
    const Tensor& alpha = t.concentration.value();
    for (std::size_t i = 0; i < y.size(); ++i) {
      auto row = alpha.row_span(i);
      if (static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == y[i]) ++correct;
    }
  }

  const double n = static_cast<double>(train.size());
  EpochRecord r;
  r.epoch = epoch + 1;
  r.objective = sum_obj / n;
  r.recon = sum_recon / n;
  r.kl_shared = sum_kls / n;
  r.kl_class = sum_klc / n;
  if (classify) r.class_nll = sum_nll / n;
  r.train_accuracy = static_cast<double>(correct) / n;
  if (test) r.test_accuracy = label_accuracy(model_, *test);
  ++epochs_done_;
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void Trainer::save(const fs::path& path) const {
  CheckpointFile file;
  store_model(file, model_);
  file.set("train.objective", to_string(config_.objective));
  file.set("train.beta_c", fmt(config_.beta_c));
  file.set("train.beta_s", fmt(config_.beta_s));
  file.set("train.lr", fmt(config_.adam.lr));
  file.set("train.beta1", fmt(config_.adam.beta1));
  file.set("train.beta2", fmt(config_.adam.beta2));
  file.set("train.eps", fmt(config_.adam.eps));
  file.set("train.batch_size", std::to_string(config_.batch_size));
  file.set("train.epochs", std::to_string(config_.epochs));
  file.set("train.seed", std::to_string(config_.seed));
  file.set("train.samples", std::to_string(config_.samples));
  file.set("train.epochs_done", std::to_string(epochs_done_));
  file.set("train.adam_step.encoder", std::to_string(enc_state_.step));
  file.set("train.adam_step.decoder", std::to_string(dec_state_.step));
  auto put = [&](const ParamStore& store, const AdamState& s, const std::string& prefix) {
    std::size_t k = 0;
    for (const auto& e : store.entries()) {
      file.tensors.emplace_back(prefix + "/m/" + e.name, s.m[k]);
      file.tensors.emplace_back(prefix + "/v/" + e.name, s.v[k]);
      ++k;
    }
  };
  put(model_.encoder(), enc_state_, "adam.encoder");
  put(model_.decoder(), dec_state_, "adam.decoder");
  write_checkpoint_file(path, file);
}

Trainer Trainer::load(const fs::path& path) {
  const CheckpointFile file = read_checkpoint_file(path);
  NvaeModel model = restore_model(file);
  TrainConfig c;
  c.objective = parse_objective_kind(file.require("train.objective"));
  c.beta_c = parse_double(file.require("train.beta_c"));
  c.beta_s = parse_double(file.require("train.beta_s"));
  c.adam.lr = parse_double(file.require("train.lr"));
  c.adam.beta1 = parse_double(file.require("train.beta1"));
  c.adam.beta2 = parse_double(file.require("train.beta2"));
  c.adam.eps = parse_double(file.require("train.eps"));
  c.batch_size = parse_u64(file.require("train.batch_size"));
  c.epochs = parse_u64(file.require("train.epochs"));
  c.seed = parse_u64(file.require("train.seed"));
  c.samples = parse_u64(file.require("train.samples"));
  Trainer t(std::move(model), c);
  t.epochs_done_ = parse_u64(file.require("train.epochs_done"));
  t.enc_state_.step = parse_u64(file.require("train.adam_step.encoder"));
  t.dec_state_.step = parse_u64(file.require("train.adam_step.decoder"));
  auto get = [&](const ParamStore& store, AdamState& s, const std::string& prefix) {
    std::size_t k = 0;
    for (const auto& e : store.entries()) {
      for (auto [slot, kind] : {std::pair{&s.m[k], "/m/"}, std::pair{&s.v[k], "/v/"}}) {
        const Tensor* src = file.tensor(prefix + kind + e.name);
        if (!src) throw FormatError(path.string() + ": missing optimizer tensor " + prefix + kind + e.name);
        if (src->shape() != e.value.shape()) throw FormatError(path.string() + ": bad shape for " + prefix + kind + e.name);
        *slot = *src;
      }
      ++k;
    }
  };
  get(t.model_.encoder(), t.enc_state_, "adam.encoder");
  get(t.model_.decoder(), t.dec_state_, "adam.decoder");
  return t;
}

TrainReport train(Trainer& trainer, const Dataset& train_set, const Dataset* test_set,
                  const std::optional<fs::path>& checkpoint_dir, std::ostream* log) {
  TrainReport report;
  fs::path last_good;
  if (checkpoint_dir) fs::create_directories(*checkpoint_dir);
  while (!trainer.finished()) {
    EpochRecord r;
    try {
      r = trainer.run_epoch(train_set, test_set);
    } catch (const TrainingDiverged& e) {
      throw TrainingDiverged(e.what(), last_good);
    }
    if (log) {
      *log << "epoch " << r.epoch << "/" << trainer.config().epochs << " objective " << r.objective << " recon "
           << r.recon << " kl_s " << r.kl_shared << " kl_c " << r.kl_class;
      if (r.class_nll) *log << " nll " << *r.class_nll;
      *log << " train_acc " << r.train_accuracy;
      if (r.test_accuracy) *log << " test_acc " << *r.test_accuracy;
      *log << " (" << r.wall_seconds << " s)\n" << std::flush;
    }
    report.epochs.push_back(r);
    if (checkpoint_dir) {
      last_good = *checkpoint_dir / "latest.ckpt";
      trainer.save(last_good);
    }
  }
  if (checkpoint_dir) save_model(*checkpoint_dir / "model.ckpt", trainer.model());
  return report;
}

double label_accuracy(NvaeModel& model, const Dataset& data, std::size_t chunk) {
  if (data.size() == 0) throw DomainError("accuracy of an empty dataset");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    idx.resize(std::min(chunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto pred = infer_label(model, data.gather(idx));
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (pred[i] == data.labels[idx[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace nvae
