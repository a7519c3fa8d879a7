#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "livesong/model.h"

namespace livesong {

constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;
  double val_loss = 0.0;
  nlohmann::json seeds = nlohmann::json::object();
  // Anything else the caller wants to keep (e.g. the training config).
  nlohmann::json extra = nlohmann::json::object();
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
  std::string id;  // content hash, stable for identical files
};

/// Container: "LSCK", u32 version, u64 manifest length, JSON manifest (format
/// version, config, config hash, parameter names/shapes/dtype/offsets, meta),
/// then one little-endian float32 blob per parameter. The file is written to
/// a temporary sibling and renamed into place.
void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& path);

/// Throws CheckpointError on a corrupt file, or when `expected` is given and
/// its architecture differs from the stored one (the message lists the
/// differing keys).
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace livesong
