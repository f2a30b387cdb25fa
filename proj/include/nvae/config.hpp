#pragma once

#include <filesystem>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "nvae/data.hpp"
#include "nvae/diagnostics.hpp"
#include "nvae/model.hpp"
#include "nvae/training.hpp"

namespace nvae {

/// Where the train/test data comes from.
struct DataConfig {
  std::string source = "idx";  // idx | synthetic
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t classes = 0;           // idx only; 0 infers from the labels
  double test_fraction = 0.2;        // synthetic only
  std::uint64_t split_seed = 7;      // synthetic only
};

/// Parsed run configuration. Sections: [data] [synthetic] [model] [train] [augment].
struct RunConfig {
  DataConfig data;
  SyntheticSpec synthetic;
  ModelConfig model;  // input_dims and classes are filled in from the data
  TrainConfig train;
  AugmentationConfig augment;
  std::vector<double> augment_sigmas{1.0, 1.5};
  /// Every key as written, in file order: (section, key, value).
  std::vector<std::tuple<std::string, std::string, std::string>> entries;
};

/// Parses `key = value` lines under `[section]` headers; '#' and ';' start comments.
/// Relative data paths resolve against `base_dir`. Errors carry the 1-based line.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// "kind:low:high" and "class:kind:low:high" factor lists, comma separated.
std::vector<FactorSpec> parse_factor_list(const std::string& value);
std::vector<ExclusiveFactorSpec> parse_exclusive_list(const std::string& value);

struct LoadedData {
  Dataset train;
  Dataset test;
  std::vector<std::filesystem::path> files;  // inputs read, for checksums
};

/// Loads or generates the data; throws MissingInput for an absent file.
LoadedData load_data(const DataConfig& data, const SyntheticSpec& synthetic);

/// Model config with input dims and class count taken from the data.
ModelConfig model_for(const RunConfig& config, const Dataset& data);

}  // namespace nvae
