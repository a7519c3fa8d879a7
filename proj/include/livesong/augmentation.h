#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "livesong/features.h"
#include "livesong/manifest.h"

namespace livesong {

class AugmentationConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unstandardized CQT strips of crowd-noise recordings (72 x L_i each).
class NoiseBank {
 public:
  NoiseBank() = default;
  /// Throws AugmentationConfigError on an empty list, a strip that is not
  /// 72 rows high, or a negative value.
  NoiseBank(std::vector<FeatureMatrix> strips, std::vector<std::string> ids, std::vector<double> durations_s);

  std::size_t size() const { return strips_.size(); }
  bool empty() const { return strips_.empty(); }
  const FeatureMatrix& strip(std::size_t i) const { return strips_.at(i); }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  double total_duration_s() const { return total_duration_s_; }

 private:
  std::vector<FeatureMatrix> strips_;
  std::vector<std::string> ids_;
  std::vector<double> durations_s_;
  double total_duration_s_ = 0.0;
};

/// Decodes every noise recording in full (no 120 s window).
NoiseBank build_noise_bank(const std::vector<TrackManifestEntry>& noise_entries);
/// Loads strips previously written to a feature cache directory.
NoiseBank load_noise_bank(const std::vector<TrackManifestEntry>& noise_entries, const std::filesystem::path& cache_dir);

struct MixPolicy {
  double apply_probability = 0.5;
  std::vector<double> gain_choices_db{-6.0, -9.0, -12.0};
  double delay_min_s = -15.0;
  double delay_max_s = 117.0;
  std::uint64_t master_seed = 0;
};

nlohmann::json to_json(const MixPolicy& policy);
MixPolicy mix_policy_from_json(const nlohmann::json& j);
void validate(const MixPolicy& policy);

struct MixParams {
  bool apply = false;
  double gain_db = 0.0;
  double delay_s = 0.0;
  std::size_t noise_index = 0;
  int noise_offset_frames = 0;
};

/// Stream seed for one feature instance; side is 0 or 1 within a pair.
std::uint64_t mix_seed(const MixPolicy& policy, std::uint64_t epoch, std::uint64_t item, std::uint64_t side);

/// apply ~ Bernoulli(p); gain uniform over the choices; delay uniform over
/// [min, max]; noise strip uniform; offset uniform over [0, max(0, L - 401)].
MixParams sample_mix_params(const MixPolicy& policy, const NoiseBank& bank, std::mt19937_64& rng);

/// Frame shift of a delay: round(delay_s / hop_s).
int delay_frames(double delay_s);

/// song + 10^(gain/20) * noise[:, t - o + offset] wherever that noise frame
/// exists; the input must be unstandardized.
FeatureMatrix mix_magnitudes(const FeatureMatrix& song, const NoiseBank& bank, const MixParams& params);

/// Mixes (when params.apply) and standardizes.
CQSpectrogram mix_crowd_noise(const CQSpectrogram& song, const NoiseBank& bank, const MixParams& params);

enum class Split { kTrain, kVal };

/// Per-epoch crowd-noise view over a dataset. Training items draw fresh
/// parameters every epoch; validation items always use epoch 0.
class EpochAugmenter {
 public:
  EpochAugmenter(std::shared_ptr<const NoiseBank> bank, MixPolicy policy, Split split);

  MixParams params(std::uint64_t epoch, std::uint64_t item, int side) const;
  CQSpectrogram augment(const CQSpectrogram& raw, std::uint64_t epoch, std::uint64_t item, int side) const;

  const MixPolicy& policy() const { return policy_; }
  Split split() const { return split_; }

 private:
  std::shared_ptr<const NoiseBank> bank_;
  MixPolicy policy_;
  Split split_;
};

}  // namespace livesong
