#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvae/autodiff.hpp"
#include "nvae/checkpoint.hpp"
#include "nvae/data.hpp"
#include "nvae/model.hpp"

namespace nvae {

enum class ObjectiveKind { lobj, beta, baseline };

std::string to_string(ObjectiveKind kind);
ObjectiveKind parse_objective_kind(const std::string& name);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for every entry of one ParamStore, in entry order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState for_store(const ParamStore& store);
};

/// One bias-corrected adaptive-moment update from the gradients held in `store`.
void adam_step(ParamStore& store, AdamState& state, const AdamConfig& config);

struct TrainConfig {
  ObjectiveKind objective = ObjectiveKind::beta;
  double beta_c = 2.0;
  double beta_s = 1.0;  // weight on kl(z_s), baseline mode only
  AdamConfig adam;
  std::size_t batch_size = 128;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  std::size_t samples = 1;  // reconstruction samples per step

  void validate() const;
};

/// Seed for the model's initial weights, derived from the training seed.
std::uint64_t init_seed(std::uint64_t seed);

/// Epoch means over training examples. Accuracy fields are fractions in [0, 1].
struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double objective = 0.0;
  double recon = 0.0;
  double kl_shared = 0.0;
  double kl_class = 0.0;
  std::optional<double> class_nll;  // absent in baseline mode
  double train_accuracy = 0.0;      // from the predictions made during the epoch's steps
  std::optional<double> test_accuracy;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
};

inline constexpr const char* kReportHeader =
    "epoch,objective,recon,kl_shared,kl_class,class_nll,train_accuracy,test_accuracy,wall_seconds";

/// One line per epoch under kReportHeader; absent values are empty fields.
void write_report_csv(std::ostream& out, const TrainReport& report, bool include_wall_time = true);
void write_report_csv(const std::filesystem::path& path, const TrainReport& report);

/// NaN or Inf appeared in the objective or the parameters.
struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(const std::string& what, std::filesystem::path last_good)
      : std::runtime_error(what), last_good(std::move(last_good)) {}
  std::filesystem::path last_good;  // empty when no checkpoint was written yet
};

/// Model, optimizer state and progress; everything needed to resume bit-identically.
class Trainer {
 public:
  Trainer(NvaeModel model, TrainConfig config);

  NvaeModel& model() noexcept { return model_; }
  const NvaeModel& model() const noexcept { return model_; }
  const TrainConfig& config() const noexcept { return config_; }
  /// Changes the total epoch count, e.g. to extend a resumed run.
  void set_epochs(std::size_t epochs);
  std::size_t epochs_done() const noexcept { return epochs_done_; }
  bool finished() const noexcept { return epochs_done_ >= config_.epochs; }

  /// Runs the next epoch. `test` (optional) is scored with infer_label afterwards.
  EpochRecord run_epoch(const Dataset& train, const Dataset* test = nullptr);

  void save(const std::filesystem::path& path) const;
  static Trainer load(const std::filesystem::path& path);

 private:
  NvaeModel model_;
  TrainConfig config_;
  AdamState enc_state_;
  AdamState dec_state_;
  std::size_t epochs_done_ = 0;
};

/// Runs the remaining epochs. With a checkpoint directory, `latest.ckpt` is rewritten
/// after every epoch and `model.ckpt` at the end. On divergence, throws TrainingDiverged
/// pointing at the last epoch checkpoint.
TrainReport train(Trainer& trainer, const Dataset& train_set, const Dataset* test_set,
                  const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt,
                  std::ostream* log = nullptr);

/// Fraction of rows where infer_label matches the label.
double label_accuracy(NvaeModel& model, const Dataset& data, std::size_t chunk = 500);

}  // namespace nvae
