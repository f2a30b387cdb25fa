#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nvae/model.hpp"
#include "nvae/tensor.hpp"

namespace nvae {

/// Checkpoint written by a different library version.
struct VersionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Self-describing container: a versioned header line, `key=value` metadata and
/// named tensors stored as little-endian 64-bit floats.
///
///   NVAE-CHECKPOINT 1
///   meta <count>
///   <key>=<value>            (count lines)
///   tensors <count>
///   <name> <rank> <d0> ...   followed by prod(d) * 8 raw bytes and '\n'
///   end
struct CheckpointFile {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void set(std::string key, std::string value);
  std::optional<std::string> get(std::string_view key) const;
  std::string require(std::string_view key) const;
  const Tensor* tensor(std::string_view name) const;
};

/// Writes to a sibling temporary and renames into place.
void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

/// Adds layout, hyperparameters, library version and every encoder/decoder tensor.
void store_model(CheckpointFile& file, const NvaeModel& model);
/// Rebuilds a model; throws VersionMismatch when the library version differs.
NvaeModel restore_model(const CheckpointFile& file);

void save_model(const std::filesystem::path& path, const NvaeModel& model);
NvaeModel load_model(const std::filesystem::path& path);

}  // namespace nvae
