#include "livesong/augmentation.h"

#include <cmath>

#include "livesong/hash.h"

namespace livesong {

NoiseBank::NoiseBank(std::vector<FeatureMatrix> strips, std::vector<std::string> ids, std::vector<double> durations_s)
    : strips_(std::move(strips)), ids_(std::move(ids)), durations_s_(std::move(durations_s)) {
  if (strips_.empty()) throw AugmentationConfigError("crowd method requires at least one noise recording");
  if (ids_.size() != strips_.size() || durations_s_.size() != strips_.size())
    throw AugmentationConfigError("noise bank: ids/durations do not match strips");
  for (std::size_t i = 0; i < strips_.size(); ++i) {
    const auto& s = strips_[i];
    if (s.rows != kCqtBins) throw AugmentationConfigError("noise strip '" + ids_[i] + "' must have 72 rows");
    for (float v : s.values)
      if (!(v >= 0.0f)) throw AugmentationConfigError("noise strip '" + ids_[i] + "' has negative or NaN values");
    total_duration_s_ += durations_s_[i];
  }
}

NoiseBank build_noise_bank(const std::vector<TrackManifestEntry>& noise_entries) {
  if (noise_entries.empty()) throw AugmentationConfigError("crowd method requires at least one noise recording");
  std::vector<FeatureMatrix> strips;
  std::vector<std::string> ids;
  std::vector<double> durations;
  for (const auto& e : noise_entries) {
    if (e.role != Role::kNoise) throw AugmentationConfigError("entry '" + e.track_id + "' is not a noise recording");
    const AudioClip clip = load_audio(e.path, e.track_id);
    strips.push_back(cqt_magnitudes(clip.samples));
    ids.push_back(e.track_id);
    durations.push_back(clip.duration_s());
  }
  return NoiseBank(std::move(strips), std::move(ids), std::move(durations));
}

NoiseBank load_noise_bank(const std::vector<TrackManifestEntry>& noise_entries, const std::filesystem::path& cache_dir) {
  if (noise_entries.empty()) throw AugmentationConfigError("crowd method requires at least one noise recording");
  std::vector<FeatureMatrix> strips;
  std::vector<std::string> ids;
  std::vector<double> durations;
  for (const auto& e : noise_entries) {
    if (e.role != Role::kNoise) throw AugmentationConfigError("entry '" + e.track_id + "' is not a noise recording");
    strips.push_back(read_cqt(cache_path(cache_dir, e.track_id)));
    ids.push_back(e.track_id);
    durations.push_back(e.duration_s.value_or(strips.back().cols * kHopSeconds));
  }
  return NoiseBank(std::move(strips), std::move(ids), std::move(durations));
}

nlohmann::json to_json(const MixPolicy& p) {
  return {{"apply_probability", p.apply_probability},
          {"gain_choices_db", p.gain_choices_db},
          {"delay_min_s", p.delay_min_s},
          {"delay_max_s", p.delay_max_s},
          {"master_seed", p.master_seed}};
}

MixPolicy mix_policy_from_json(const nlohmann::json& j) {
  MixPolicy p;
  p.apply_probability = j.value("apply_probability", p.apply_probability);
  p.gain_choices_db = j.value("gain_choices_db", p.gain_choices_db);
  p.delay_min_s = j.value("delay_min_s", p.delay_min_s);
  p.delay_max_s = j.value("delay_max_s", p.delay_max_s);
  p.master_seed = j.value("master_seed", p.master_seed);
  validate(p);
  return p;
}

void validate(const MixPolicy& p) {
  if (!(p.apply_probability >= 0.0 && p.apply_probability <= 1.0))
    throw AugmentationConfigError("apply_probability must lie in [0, 1]");
  if (p.gain_choices_db.empty()) throw AugmentationConfigError("gain_choices_db must not be empty");
  if (!(p.delay_min_s <= p.delay_max_s)) throw AugmentationConfigError("delay_min_s must not exceed delay_max_s");
}

std::uint64_t mix_seed(const MixPolicy& policy, std::uint64_t epoch, std::uint64_t item, std::uint64_t side) {
  return derive_seed(policy.master_seed, {epoch, item, side});
}

MixParams sample_mix_params(const MixPolicy& policy, const NoiseBank& bank, std::mt19937_64& rng) {
  MixParams p;
  p.apply = std::bernoulli_distribution(policy.apply_probability)(rng);
  p.gain_db = policy.gain_choices_db[std::uniform_int_distribution<std::size_t>(0, policy.gain_choices_db.size() - 1)(rng)];
  p.delay_s = std::uniform_real_distribution<double>(policy.delay_min_s, policy.delay_max_s)(rng);
  if (!bank.empty()) {
    p.noise_index = std::uniform_int_distribution<std::size_t>(0, bank.size() - 1)(rng);
    const int spare = std::max(0, bank.strip(p.noise_index).cols - kFrames);
    p.noise_offset_frames = std::uniform_int_distribution<int>(0, spare)(rng);
  }
  return p;
}

int delay_frames(double delay_s) { return static_cast<int>(std::lround(delay_s / kHopSeconds)); }

FeatureMatrix mix_magnitudes(const FeatureMatrix& song, const NoiseBank& bank, const MixParams& params) {
  FeatureMatrix out = song;
  if (!params.apply || bank.empty()) return out;
  const FeatureMatrix& noise = bank.strip(params.noise_index);
  const float gain = static_cast<float>(std::pow(10.0, params.gain_db / 20.0));
  const int shift = params.noise_offset_frames - delay_frames(params.delay_s);
  for (int t = 0; t < song.cols; ++t) {
    const int nt = t + shift;
    if (nt < 0 || nt >= noise.cols) continue;
    for (int r = 0; r < song.rows; ++r) out.at(r, t) += gain * noise.at(r, nt);
  }
  return out;
}

CQSpectrogram mix_crowd_noise(const CQSpectrogram& song, const NoiseBank& bank, const MixParams& params) {
  if (song.standardized()) throw std::invalid_argument("mix_crowd_noise: song features must be unstandardized");
  const CQSpectrogram mixed(mix_magnitudes(song.matrix(), bank, params), song.track_id(), false, song.method());
  return standardize(mixed);
}

EpochAugmenter::EpochAugmenter(std::shared_ptr<const NoiseBank> bank, MixPolicy policy, Split split)
    : bank_(std::move(bank)), policy_(std::move(policy)), split_(split) {
  validate(policy_);
  if (!bank_) throw AugmentationConfigError("EpochAugmenter requires a noise bank");
}

MixParams EpochAugmenter::params(std::uint64_t epoch, std::uint64_t item, int side) const {
  const std::uint64_t e = split_ == Split::kVal ? 0 : epoch;
  std::mt19937_64 rng(mix_seed(policy_, e, item, static_cast<std::uint64_t>(side)));
  return sample_mix_params(policy_, *bank_, rng);
}

CQSpectrogram EpochAugmenter::augment(const CQSpectrogram& raw, std::uint64_t epoch, std::uint64_t item,
                                      int side) const {
  return mix_crowd_noise(raw, *bank_, params(epoch, item, side));
}

}  // namespace livesong
