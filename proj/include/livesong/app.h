#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "livesong/augmentation.h"
#include "livesong/manifest.h"
#include "livesong/model_config.h"
#include "livesong/training.h"

namespace livesong {

/// Exit codes shared by every command.
enum ExitCode : int { kExitOk = 0, kExitPartial = 1, kExitUsage = 2 };

/// Bad flags, unreadable inputs or invalid configuration; maps to exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AppConfig {
  std::filesystem::path manifest;
  std::filesystem::path db_manifest;
  std::filesystem::path query_manifest;
  // Noise recordings for the crowd method; noise entries of `manifest` are
  // used when empty.
  std::filesystem::path noise_manifest;
  std::filesystem::path cache_dir;
  std::filesystem::path out_dir;
  std::filesystem::path checkpoint;
  // Optional pre-built pair lists; built from `manifest` when empty.
  std::filesystem::path train_pairs;
  std::filesystem::path val_pairs;
  Method method = Method::kBasic;
  ModelConfig model = ModelConfig::reference();
  std::string model_preset = "reference";  // "reference", "compact" or "custom"
  TrainConfig train;
  MixPolicy mix_policy;
  int port = 8080;
  std::size_t max_payload_bytes = 100u * 1024u * 1024u;
  int service_threads = 4;
  // The JSON this config was parsed from, echoed verbatim by training runs.
  nlohmann::json source = nlohmann::json::object();
};

/// Parses a JSON config. Relative paths resolve against `base_dir`. Unknown
/// top-level keys are rejected. Throws UsageError.
AppConfig app_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
AppConfig load_app_config(const std::filesystem::path& path);
nlohmann::json to_json(const AppConfig& config);

/// `explicit_path` when given, else $LIVESONG_CONFIG, else nothing.
std::optional<std::filesystem::path> resolve_config_path(const std::filesystem::path& explicit_path);

struct ExtractOptions {
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  Method method = Method::kBasic;
};

struct ExtractReport {
  std::vector<std::string> written;
  std::vector<std::string> skipped;
  std::vector<std::pair<std::string, std::string>> failed;  // track id, reason
};

nlohmann::json to_json(const ExtractReport& report);

/// Writes one raw `.cqt` per manifest entry (full-length strips for noise
/// recordings). A file is up to date when it is intact, has the expected
/// shape and is newer than its audio.
ExtractReport extract_features_to_cache(const ExtractOptions& options);

struct BuildPairsOptions {
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  int cap = 25;
  double ratio = 0.8;
  int negative_ratio = 3;
};

/// Writes train_pairs.jsonl (positives), val_pairs.jsonl (positives plus
/// frozen negatives) and stats.json. Returns the stats.
nlohmann::json build_pairs(const BuildPairsOptions& options);

struct TrainCommandResult {
  TrainResult result;
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::filesystem::path config_echo;
};

/// Full training run from an AppConfig: loads features from the cache,
/// trains, and writes best.ckpt, train_log.jsonl (one line per epoch) and
/// config.json under out_dir. A partially written checkpoint is removed when
/// training aborts.
TrainCommandResult run_training(const AppConfig& config);

/// Command-line entry point. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace livesong
