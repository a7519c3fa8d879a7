#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "livesong/augmentation.h"
#include "livesong/feature_store.h"
#include "livesong/loss.h"
#include "livesong/manifest.h"
#include "livesong/model.h"

namespace livesong {

struct SongClique {
  std::string song_id;
  std::vector<std::string> track_ids;  // ascending
};

/// Groups non-noise entries by song_id; cliques come back ordered by song_id.
/// Throws ManifestError on a duplicate track_id.
std::vector<SongClique> build_cliques(const std::vector<TrackManifestEntry>& manifest);

struct TrackPair {
  std::string track_id_1;
  std::string track_id_2;
  int label = 0;
  std::string song_id_1;
  std::string song_id_2;

  bool operator==(const TrackPair&) const = default;
};

nlohmann::json to_json(const TrackPair& pair);
TrackPair track_pair_from_json(const nlohmann::json& j);
void write_pairs(const std::filesystem::path& path, const std::vector<TrackPair>& pairs);
std::vector<TrackPair> read_pairs(const std::filesystem::path& path);

/// All unordered pairs among the first `cap` track ids (ascending) of each
/// clique, labeled 1.
std::vector<TrackPair> make_positive_pairs(const std::vector<SongClique>& cliques, int cap = 25);

struct PairSplit {
  std::vector<TrackPair> train;
  std::vector<TrackPair> val;
  std::vector<std::string> train_songs;
  std::vector<std::string> val_songs;
};

class SplitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shuffles songs with `seed`, then assigns them to train until it holds
/// round(ratio * total) pairs; the rest go to validation. Both sides get at
/// least one song. Throws SplitError with fewer than two songs.
PairSplit split_by_song(const std::vector<TrackPair>& pairs, double ratio, std::uint64_t seed);

/// Cliques formed by the tracks that occur in `pairs`.
std::vector<SongClique> cliques_from_pairs(const std::vector<TrackPair>& pairs);

/// Uniform cross-clique pairs without duplicates (unordered). When fewer than
/// `count` exist, returns all of them and logs a warning.
std::vector<TrackPair> sample_negative_pairs(const std::vector<SongClique>& cliques, std::size_t count,
                                             std::mt19937_64& rng);

struct TrainConfig {
  int batch_size = 8;
  double lr = 0.001;
  double scheduler_factor = 0.1;
  int scheduler_patience = 5;
  int max_epochs = 50;
  int negative_ratio = 3;
  int cover_cap = 25;
  double split_ratio = 0.8;
  std::uint64_t seed = 0;
  std::string loss_reduction = "mean";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double bn_momentum = 0.1;
};

nlohmann::json to_json(const TrainConfig& config);
/// Unknown keys are rejected so that typos do not silently fall back to
/// defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);
void validate(const TrainConfig& config);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_time_s = 0.0;
};

nlohmann::json to_json(const EpochStats& stats);

struct ScoreHistogram {
  static constexpr int kBins = 10;
  std::array<int, kBins> positive{};
  std::array<int, kBins> negative{};
};

struct ValidationResult {
  double loss = 0.0;
  std::vector<double> scores;
  ScoreHistogram histogram;
};

/// Evaluation-mode mean loss over `pairs`, plus a per-label score histogram.
/// Deterministic across calls.
ValidationResult validate(const Model& model, const std::vector<TrackPair>& pairs, const FeatureStore& features,
                          const EpochAugmenter* augmenter = nullptr, Reduction reduction = Reduction::kMean,
                          int batch_size = 8);

struct TrainingSet {
  std::vector<TrackPair> train_positives;
  std::vector<SongClique> train_cliques;
  // Positives and frozen negatives.
  std::vector<TrackPair> val_pairs;
};

/// Positives -> song split -> frozen validation negatives (drawn once from a
/// seed derived from config.seed).
TrainingSet build_training_set(const std::vector<SongClique>& cliques, const TrainConfig& config);
/// Same, from already split pair lists (validation negatives included).
TrainingSet training_set_from_pairs(std::vector<TrackPair> train_pairs, std::vector<TrackPair> val_pairs);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  // Written whenever the validation loss reaches a new minimum; empty = keep
  // the best weights in memory only.
  std::filesystem::path checkpoint_path;
  std::function<void(const EpochStats&)> on_epoch;
  // Crowd-noise mixing for the crowd method; null = plain standardized input.
  std::shared_ptr<const NoiseBank> noise_bank;
  MixPolicy mix_policy;
  nlohmann::json checkpoint_extra = nlohmann::json::object();
};

struct TrainResult {
  std::vector<EpochStats> stats;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::filesystem::path best_checkpoint;
  double final_train_loss = 0.0;
};

/// AMSGrad + plateau schedule over up to max_epochs. Every epoch regenerates
/// the 1:ratio training negatives and reshuffles the batches from
/// epoch-derived seeds. On return the model holds the weights of the epoch
/// with the lowest validation loss. Throws TrainingError on a non-finite loss.
TrainResult train(Model& model, const TrainingSet& data, const FeatureStore& features, const TrainConfig& config,
                  const TrainOptions& options = {});

}  // namespace livesong
