#include "nvae/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "nvae/checkpoint.hpp"
#include "nvae/config.hpp"
#include "nvae/diagnostics.hpp"
#include "nvae/error.hpp"
#include "nvae/training.hpp"
#include "nvae/version.hpp"

namespace nvae {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput(path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string resume;
  std::optional<std::size_t> cls;
  std::optional<std::size_t> block;
  std::optional<std::size_t> index;
  bool shared = false;
  std::size_t steps = 10;
  std::size_t count = 64;
  std::size_t columns = 8;
  std::vector<double> sigmas;
  std::optional<double> p_sub;
  std::optional<std::size_t> reps;
  std::string split = "test";
  std::string kind;
  std::size_t bound_samples = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Collects the run's record and writes it atomically when the command finishes.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args, fs::path out_dir)
      : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["argv"] = args;
    doc_["library_version"] = std::string(kLibraryVersion);
    doc_["seed"] = nullptr;
    doc_["config"] = json::object();
    doc_["inputs"] = json::array();
    doc_["outputs"] = json::array();
  }

  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void config(const RunConfig& c) {
    for (const auto& [section, key, value] : c.entries) doc_["config"][section][key] = value;
  }
  void setting(const std::string& key, const json& value) { doc_["settings"][key] = value; }
  void input(const fs::path& p) { doc_["inputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}}); }
  void output(const fs::path& p) { outputs_.push_back(p); }

  fs::path write() {
    for (const auto& p : outputs_) doc_["outputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    doc_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const fs::path path = out_dir_ / ("manifest_" + doc_["command"].get<std::string>() + ".json");
    fs::path tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + tmp.string());
      out << doc_.dump(2) << '\n';
    }
    fs::rename(tmp, path);
    return path;
  }

 private:
  fs::path out_dir_;
  json doc_;
  std::vector<fs::path> outputs_;
  std::chrono::steady_clock::time_point start_;
};

fs::path resolve_out_dir(const Options& o) {
  fs::path dir = o.out_dir;
  if (dir.empty()) {
    const char* env = std::getenv(kOutDirEnv);
    dir = env && *env ? fs::path(env) : fs::path(".");
  }
  fs::create_directories(dir);
  return dir;
}

void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw ConfigError(std::string(flag) + " is required");
  if (!fs::exists(path)) throw MissingInput(path);
}

std::pair<std::size_t, std::size_t> image_shape(const Options& o, std::size_t dims) {
  if (o.height && o.width) {
    if (o.height * o.width != dims) throw ConfigError("--height x --width does not match the model input size");
    return {o.height, o.width};
  }
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dims))));
  if (side * side != dims) throw ConfigError("input size " + std::to_string(dims) + " is not square; pass --height and --width");
  return {side, side};
}

std::string num(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

template <typename Fn>
fs::path write_text(const fs::path& path, Fn fn) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  fn(out);
  if (!out) throw std::runtime_error("write failed for " + path.string());
  return path;
}

int cmd_train(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  require_file(o.config, "--config");
  RunConfig cfg = load_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  cfg.train.validate();
  const fs::path dir = resolve_out_dir(o);
  Manifest m("train", args, dir);
  m.config(cfg);
  m.input(o.config);

  LoadedData data = load_data(cfg.data, cfg.synthetic);
  for (const auto& f : data.files) m.input(f);
  out << "train: " << data.train.size() << " examples, test: " << data.test.size() << ", " << data.train.classes
      << " classes, " << data.train.dims() << " dims\n";

  std::optional<Trainer> trainer;
  if (!o.resume.empty()) {
    require_file(o.resume, "--resume");
    if (fs::exists(dir / "latest.ckpt") && fs::equivalent(o.resume, dir / "latest.ckpt"))
      throw ConfigError("--resume checkpoint would be overwritten; choose a different --out-dir");
    m.input(o.resume);
    trainer.emplace(Trainer::load(o.resume));
    if (o.epochs) trainer->set_epochs(*o.epochs);
    out << "resuming after epoch " << trainer->epochs_done() << '\n';
  } else {
    trainer.emplace(NvaeModel(model_for(cfg, data.train), init_seed(cfg.train.seed)), cfg.train);
  }
  m.seed(trainer->config().seed);

  const TrainReport report = train(*trainer, data.train, &data.test, dir, &out);
  const fs::path csv = dir / "report.csv";
  write_report_csv(csv, report);
  m.output(dir / "model.ckpt");
  m.output(dir / "latest.ckpt");
  m.output(csv);
  m.write();
  out << "wrote " << (dir / "model.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_traverse(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  require_file(o.checkpoint, "--checkpoint");
  NvaeModel model = load_model(o.checkpoint);
  const LatentLayout& L = model.layout();
  const fs::path dir = resolve_out_dir(o);
  Manifest m("traverse", args, dir);
  m.input(o.checkpoint);

  TraversalBase base;
  if (o.index) {
    require_file(o.config, "--config");
    RunConfig cfg = load_config(o.config);
    m.config(cfg);
    m.input(o.config);
    LoadedData data = load_data(cfg.data, cfg.synthetic);
    for (const auto& f : data.files) m.input(f);
    if (*o.index >= data.test.size()) throw ConfigError("--index is past the end of the test set");
    const std::size_t i[1] = {*o.index};
    base.seed = data.test.gather(i);
  }
  if (o.cls) base.label = *o.cls;
  if (!base.seed && !base.label) base.label = 0;

  std::vector<LatentTarget> targets;
  std::string name;
  if (o.shared) {
    for (std::size_t d = 0; d < L.shared_dims; ++d) targets.push_back(LatentTarget::shared_dim(d));
    name = "traverse_shared.pgm";
  } else {
    if (L.class_dims == 0) throw ConfigError("model has no class-dependent latents; use --shared");
    const std::size_t block = o.block ? *o.block : (o.cls ? *o.cls : 0);
    if (block >= L.classes) throw ConfigError("--block " + std::to_string(block) + " out of range");
    for (std::size_t d = 0; d < L.class_dims; ++d) targets.push_back(LatentTarget::class_dim(block, d));
    name = "traverse_block" + std::to_string(block) + ".pgm";
  }
  auto [h, w] = image_shape(o, model.config().input_dims);
  const GrayImage grid = traversal_grid(model, targets, o.steps, base, h, w);
  const fs::path path = dir / name;
  write_pgm(path, grid);
  m.setting("steps", o.steps);
  m.output(path);
  m.write();
  out << "wrote " << path.string() << " (" << targets.size() << " x " << o.steps << ")\n";
  return kExitOk;
}

int cmd_sample(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  require_file(o.checkpoint, "--checkpoint");
  if (!o.cls) throw ConfigError("--class is required");
  NvaeModel model = load_model(o.checkpoint);
  if (*o.cls >= model.layout().classes) throw ConfigError("--class " + std::to_string(*o.cls) + " out of range");
  if (o.count == 0) throw ConfigError("--count must be >= 1");
  const double sigma = o.sigmas.empty() ? 1.0 : o.sigmas.front();
  if (o.sigmas.size() > 1) throw ConfigError("sample takes a single --sigma");
  const std::uint64_t seed = o.seed.value_or(1);
  const fs::path dir = resolve_out_dir(o);
  Manifest m("sample", args, dir);
  m.input(o.checkpoint);
  m.seed(seed);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> labels(o.count, *o.cls);
  const Tensor images = generate(model, labels, sigma, rng);
  auto [h, w] = image_shape(o, model.config().input_dims);
  const fs::path path = dir / ("sample_class" + std::to_string(*o.cls) + "_sigma" + num(sigma) + ".pgm");
  write_pgm(path, tile_images(images, h, w, o.columns));
  m.setting("sigma", sigma);
  m.setting("count", o.count);
  m.output(path);
  m.write();
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_diagnose(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  require_file(o.checkpoint, "--checkpoint");
  require_file(o.config, "--config");
  NvaeModel model = load_model(o.checkpoint);
  RunConfig cfg = load_config(o.config);
  const fs::path dir = resolve_out_dir(o);
  Manifest m("diagnose_" + o.kind, args, dir);
  m.config(cfg);
  m.input(o.checkpoint);
  m.input(o.config);
  LoadedData data = load_data(cfg.data, cfg.synthetic);
  for (const auto& f : data.files) m.input(f);
  const Dataset& set = o.split == "train" ? data.train : data.test;
  m.setting("split", o.split);

  if (o.kind == "kl") {
    const KlProfile p = kl_profile(model, set);
    m.output(write_text(dir / "kl.csv", [&](std::ostream& s) { write_kl_csv(s, p); }));
    out << "mean kl: shared " << p.mean_shared() << ", class " << p.mean_class() << ", true class "
        << p.mean_true_class() << ", off class " << p.mean_off_class() << '\n';
  } else if (o.kind == "confusion") {
    const Tensor c = class_kl_confusion(model, set);
    m.output(write_text(dir / "confusion.csv", [&](std::ostream& s) { write_confusion_csv(s, c); }));
  } else {
    const GapStats g = summarize(surrogate_gaps(model, set));
    m.output(write_text(dir / "gap.csv", [&](std::ostream& s) { write_gap_csv(s, g); }));
    out << "gap over " << g.count << " examples: min " << g.min << ", mean " << g.mean << ", max " << g.max << '\n';
    if (o.bound_samples > 0) {
      const std::uint64_t seed = o.seed.value_or(1);
      m.seed(seed);
      const SurrogateBound b = estimate_surrogate_bound(model.config(), o.bound_samples, seed);
      m.output(write_text(dir / "gap_bound.csv", [&](std::ostream& s) {
        s << "samples,k_hat,sample_max,validation_max,exceed\n"
          << b.samples << ',' << num(b.k_hat) << ',' << num(b.sample_max) << ',' << num(b.validation_max) << ','
          << b.exceed << '\n';
      }));
      out << "k_hat " << b.k_hat << " (validation max " << b.validation_max << ", " << b.exceed << " above)\n";
    }
  }
  m.write();
  return kExitOk;
}

int cmd_augment(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  require_file(o.checkpoint, "--checkpoint");
  require_file(o.config, "--config");
  NvaeModel model = load_model(o.checkpoint);
  RunConfig cfg = load_config(o.config);
  AugmentationConfig ac = cfg.augment;
  if (o.p_sub) ac.p_sub = *o.p_sub;
  if (o.reps) ac.repetitions = *o.reps;
  if (o.seed) ac.seed = *o.seed;
  const std::vector<double> sigmas = o.sigmas.empty() ? cfg.augment_sigmas : o.sigmas;
  for (double s : sigmas) {
    ac.sigma = s;
    try {
      ac.validate();
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
  }
  const fs::path dir = resolve_out_dir(o);
  Manifest m("augment", args, dir);
  m.config(cfg);
  m.input(o.checkpoint);
  m.input(o.config);
  m.seed(ac.seed);
  LoadedData data = load_data(cfg.data, cfg.synthetic);
  for (const auto& f : data.files) m.input(f);

  std::vector<AugmentationResult> results{augmentation_baseline(data.train, data.test, ac)};
  out << "baseline error " << results[0].mean << " +- " << results[0].stddev << '\n';
  for (double s : sigmas) {
    ac.sigma = s;
    results.push_back(augmentation_experiment(model, data.train, data.test, ac));
    out << "p_sub " << ac.p_sub << " sigma " << s << " error " << results.back().mean << " +- "
        << results.back().stddev << '\n';
  }
  m.output(write_text(dir / "augment.csv", [&](std::ostream& s) { write_augmentation_csv(s, results); }));
  m.write();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Class-conditioned variational autoencoder: training and diagnostics", "nvae"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kLibraryVersion));
  Options o;

  auto add_out = [&](CLI::App* c) { c->add_option("--out-dir", o.out_dir, "Output directory (default $NVAE_OUT_DIR or .)"); };
  auto add_image = [&](CLI::App* c) {
    c->add_option("--height", o.height, "Image height (default: square images)");
    c->add_option("--width", o.width, "Image width");
  };

  CLI::App* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", o.config, "Config file")->required();
  train->add_option("--seed", o.seed, "Override [train] seed");
  train->add_option("--epochs", o.epochs, "Override [train] epochs");
  train->add_option("--resume", o.resume, "Continue from a latest.ckpt training checkpoint");
  add_out(train);

  CLI::App* traverse = app.add_subcommand("traverse", "Latent traversal grid over (-3, 3)");
  traverse->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  traverse->add_flag("--shared", o.shared, "Sweep the shared latents instead of a class block");
  traverse->add_option("--class", o.cls, "Class label used for masking");
  traverse->add_option("--block", o.block, "Class block to sweep (default: the --class block)");
  traverse->add_option("--steps", o.steps, "Grid points per row");
  traverse->add_option("--config", o.config, "Config whose test set supplies --index");
  traverse->add_option("--index", o.index, "Hold other latents at this test example's encoded mean");
  add_out(traverse);
  add_image(traverse);

  CLI::App* sample = app.add_subcommand("sample", "Generate images of one class with z ~ N(0, sigma^2 I)");
  sample->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  sample->add_option("--class", o.cls, "Class to generate")->required();
  sample->add_option("--sigma", o.sigmas, "Latent standard deviation (default 1)");
  sample->add_option("--count", o.count, "Number of images");
  sample->add_option("--columns", o.columns, "Images per grid row");
  sample->add_option("--seed", o.seed, "Sampling seed (default 1)");
  add_out(sample);
  add_image(sample);

  CLI::App* diagnose = app.add_subcommand("diagnose", "KL profile, class KL confusion or surrogate gap");
  diagnose->add_option("kind", o.kind, "kl | confusion | gap")->required()->check(CLI::IsMember({"kl", "confusion", "gap"}));
  diagnose->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  diagnose->add_option("--config", o.config, "Config naming the dataset")->required();
  diagnose->add_option("--split", o.split, "train | test")->check(CLI::IsMember({"train", "test"}));
  diagnose->add_option("--bound-samples", o.bound_samples, "gap: also estimate the bound constant from N random draws");
  diagnose->add_option("--seed", o.seed, "Seed for --bound-samples");
  add_out(diagnose);

  CLI::App* augment = app.add_subcommand("augment", "Probe classifier trained on partly generated data");
  augment->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  augment->add_option("--config", o.config, "Config naming the dataset")->required();
  augment->add_option("--p-sub", o.p_sub, "Substitution probability");
  augment->add_option("--sigma", o.sigmas, "Latent standard deviation(s)");
  augment->add_option("--reps", o.reps, "Repetitions");
  augment->add_option("--seed", o.seed, "Override [augment] seed");
  add_out(augment);

  std::vector<const char*> argv{"nvae"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(o, args, out);
    if (traverse->parsed()) return cmd_traverse(o, args, out);
    if (sample->parsed()) return cmd_sample(o, args, out);
    if (diagnose->parsed()) return cmd_diagnose(o, args, out);
    return cmd_augment(o, args, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const MissingInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const VersionMismatch& e) {
    err << "error: refusing checkpoint: " << e.what() << '\n';
    return kExitVersion;
  } catch (const TrainingDiverged& e) {
    err << "error: training diverged: " << e.what();
    if (!e.last_good.empty()) err << "; last good checkpoint " << e.last_good.string();
    err << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace nvae
