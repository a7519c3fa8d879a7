#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "livesong/augmentation.h"
#include "support/temp_dir.h"

using namespace livesong;

namespace {

FeatureMatrix random_strip(int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.0f, 2.0f);
  FeatureMatrix m(kCqtBins, cols);
  for (auto& v : m.values) v = d(rng);
  return m;
}

CQSpectrogram raw_song(std::uint64_t seed) {
  return CQSpectrogram(random_strip(kFrames, seed), "song", false, Method::kCrowd);
}

NoiseBank bank_of(std::vector<FeatureMatrix> strips) {
  std::vector<std::string> ids;
  std::vector<double> durations;
  for (std::size_t i = 0; i < strips.size(); ++i) {
    ids.push_back("n" + std::to_string(i));
    durations.push_back(strips[i].cols * kHopSeconds);
  }
  return NoiseBank(std::move(strips), std::move(ids), std::move(durations));
}

TEST(NoiseBank, RejectsEmptyAndNegative) {
  EXPECT_THROW(NoiseBank({}, {}, {}), AugmentationConfigError);
  EXPECT_THROW(build_noise_bank({}), AugmentationConfigError);
  FeatureMatrix neg(kCqtBins, 3, 1.0f);
  neg.values[5] = -1.0f;
  EXPECT_THROW(bank_of({neg}), AugmentationConfigError);
  EXPECT_THROW(bank_of({FeatureMatrix(10, 3)}), AugmentationConfigError);
}

TEST(NoiseBank, FromAudioKeepsFullLengthAndSumsDurations) {
  test_support::TempDir dir;
  std::vector<TrackManifestEntry> entries;
  double expected = 0;
  for (int i = 0; i < 3; ++i) {
    RawAudio a;
    a.rate = kSampleRate;
    const double seconds = i == 0 ? kWindowSeconds : 20.0 + 7 * i;
    a.channels = {std::vector<float>(static_cast<std::size_t>(seconds * kSampleRate), 0.0f)};
    write_wav(dir / ("n" + std::to_string(i) + ".wav"), a);
    TrackManifestEntry e;
    e.track_id = "n" + std::to_string(i);
    e.role = Role::kNoise;
    e.path = dir / ("n" + std::to_string(i) + ".wav");
    entries.push_back(e);
    expected += seconds;
  }
  const auto bank = build_noise_bank(entries);
  ASSERT_EQ(bank.size(), 3u);
  EXPECT_EQ(bank.strip(0).cols, kFrames);
  for (float v : bank.strip(1).values) ASSERT_EQ(v, 0.0f);
  EXPECT_NEAR(bank.total_duration_s(), expected, 1e-6);

  entries[0].role = Role::kReference;
  entries[0].song_id = "s";
  EXPECT_THROW(build_noise_bank(entries), AugmentationConfigError);
}

TEST(NoiseBank, DurationBookkeepingAtBankScale) {
  // 25 recordings totalling 54 minutes of noise.
  std::vector<FeatureMatrix> strips;
  std::vector<std::string> ids;
  std::vector<double> durations;
  for (int i = 0; i < 25; ++i) {
    const double seconds = 3240.0 / 25;
    strips.emplace_back(kCqtBins, static_cast<int>(seconds * kSampleRate) / kCqtHop);
    ids.push_back(std::to_string(i));
    durations.push_back(seconds);
  }
  const NoiseBank bank(std::move(strips), ids, durations);
  EXPECT_NEAR(bank.total_duration_s(), 3240.0, 32.4);
}

TEST(MixParams, SamplingIsDeterministicPerSeed) {
  const auto bank = bank_of({random_strip(500, 1), random_strip(450, 2)});
  MixPolicy policy;
  policy.master_seed = 77;
  std::mt19937_64 a(mix_seed(policy, 3, 4, 0)), b(mix_seed(policy, 3, 4, 0));
  for (int i = 0; i < 50; ++i) {
    const auto pa = sample_mix_params(policy, bank, a), pb = sample_mix_params(policy, bank, b);
    EXPECT_EQ(pa.apply, pb.apply);
    EXPECT_EQ(pa.gain_db, pb.gain_db);
    EXPECT_EQ(pa.delay_s, pb.delay_s);
    EXPECT_EQ(pa.noise_index, pb.noise_index);
    EXPECT_EQ(pa.noise_offset_frames, pb.noise_offset_frames);
  }
}

TEST(MixParams, DistributionsMatchThePolicy) {
  const auto bank = bank_of({random_strip(600, 1), random_strip(401, 2), random_strip(100, 3)});
  MixPolicy policy;
  policy.master_seed = 2024;
  int applied = 0;
  std::map<double, int> gains;
  std::vector<int> picks(3, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(mix_seed(policy, 0, static_cast<std::uint64_t>(i), 0));
    const auto p = sample_mix_params(policy, bank, rng);
    ASSERT_GE(p.delay_s, -15.0);
    ASSERT_LE(p.delay_s, 117.0);
    ASSERT_TRUE(p.gain_db == -6.0 || p.gain_db == -9.0 || p.gain_db == -12.0);
    ASSERT_GE(p.noise_offset_frames, 0);
    ASSERT_LE(p.noise_offset_frames, std::max(0, bank.strip(p.noise_index).cols - kFrames));
    ++picks[p.noise_index];
    if (p.apply) {
      ++applied;
      ++gains[p.gain_db];
    }
  }
  const double rate = double(applied) / n;
  EXPECT_GE(rate, 0.47);
  EXPECT_LE(rate, 0.53);
  ASSERT_EQ(gains.size(), 3u);
  for (const auto& [g, c] : gains) {
    EXPECT_GE(double(c) / applied, 0.30) << g;
    EXPECT_LE(double(c) / applied, 0.37) << g;
  }
  for (int c : picks) EXPECT_GT(c, n / 4);
}

TEST(MixCrowdNoise, DisabledMixIsPlainStandardization) {
  const auto bank = bank_of({random_strip(401, 1)});
  const auto song = raw_song(5);
  MixParams p;
  p.apply = false;
  EXPECT_EQ(mix_crowd_noise(song, bank, p).matrix().values, standardize(song).matrix().values);
}

TEST(MixCrowdNoise, MinusSixDecibelsAddsHalfAmplitudeNoise) {
  const auto noise = random_strip(401, 11);
  const auto bank = bank_of({noise});
  const auto song = raw_song(12);
  MixParams p{true, -6.0, 0.0, 0, 0};
  const auto mixed = mix_magnitudes(song.matrix(), bank, p);
  const double g = std::pow(10.0, -6.0 / 20.0);
  EXPECT_NEAR(g, 0.501187, 1e-6);
  for (std::size_t i = 0; i < mixed.values.size(); ++i)
    ASSERT_NEAR(mixed.values[i] - song.matrix().values[i], g * noise.values[i], 1e-6);
}

TEST(MixCrowdNoise, LateDelayTouchesOnlyTheFinalFrames) {
  const auto bank = bank_of({random_strip(401, 1)});
  const auto song = raw_song(2);
  MixParams p{true, -9.0, 117.0, 0, 0};
  const auto mixed = mix_magnitudes(song.matrix(), bank, p);
  const int expected = static_cast<int>(std::ceil((kWindowSeconds - 117.0) / kHopSeconds));
  EXPECT_EQ(expected, 11);  // ceil(3 s / 0.299 s)
  int touched = 0;
  for (int t = 0; t < kFrames; ++t) {
    bool differs = false;
    for (int r = 0; r < kCqtBins; ++r) differs |= mixed.at(r, t) != song.matrix().at(r, t);
    if (differs) {
      ++touched;
      EXPECT_GE(t, kFrames - 11);
    }
  }
  EXPECT_GE(touched, 9);
  EXPECT_LE(touched, 11);
  EXPECT_EQ(touched, kFrames - delay_frames(117.0));
}

TEST(MixCrowdNoise, NegativeDelayDiscardsTheNoiseHead) {
  const auto noise = random_strip(500, 3);
  const auto bank = bank_of({noise});
  const auto song = raw_song(4);
  MixParams p{true, -12.0, -15.0, 0, 7};
  const auto mixed = mix_magnitudes(song.matrix(), bank, p);
  const int shift = 7 - delay_frames(-15.0);
  const float g = static_cast<float>(std::pow(10.0, -12.0 / 20.0));
  for (int t = 0; t < kFrames; ++t) {
    const int nt = t + shift;
    for (int r = 0; r < kCqtBins; r += 13) {
      const float expect = nt < noise.cols ? song.matrix().at(r, t) + g * noise.at(r, nt) : song.matrix().at(r, t);
      ASSERT_EQ(mixed.at(r, t), expect);
    }
  }
}

TEST(MixCrowdNoise, ShortNoiseContributesNothingPastItsEnd) {
  const auto bank = bank_of({random_strip(50, 3)});
  const auto song = raw_song(4);
  MixParams p{true, -6.0, 0.0, 0, 0};
  const auto mixed = mix_magnitudes(song.matrix(), bank, p);
  for (int t = 50; t < kFrames; ++t)
    for (int r = 0; r < kCqtBins; ++r) ASSERT_EQ(mixed.at(r, t), song.matrix().at(r, t));
}

TEST(MixCrowdNoise, OutputIsStandardizedAndShapePreserved) {
  const auto bank = bank_of({random_strip(800, 3)});
  MixPolicy policy;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto out = mix_crowd_noise(raw_song(i), bank, sample_mix_params(policy, bank, rng));
    EXPECT_TRUE(out.standardized());
    double mean = 0, var = 0;
    for (float v : out.values()) mean += v;
    mean /= out.values().size();
    for (float v : out.values()) var += (v - mean) * (v - mean);
    EXPECT_LT(std::abs(mean), 1e-5);
    EXPECT_LT(std::abs(std::sqrt(var / out.values().size()) - 1.0), 1e-4);
  }
  EXPECT_THROW(mix_crowd_noise(standardize(raw_song(1)), bank, MixParams{}), std::invalid_argument);
}

TEST(MixCrowdNoise, SilentBankMatchesBasicFeatures) {
  const auto bank = bank_of({FeatureMatrix(kCqtBins, 401), FeatureMatrix(kCqtBins, 900)});
  MixPolicy policy;
  policy.apply_probability = 1.0;
  const EpochAugmenter aug(std::make_shared<NoiseBank>(bank), policy, Split::kTrain);
  for (int item = 0; item < 10; ++item) {
    const auto song = raw_song(item);
    EXPECT_EQ(aug.augment(song, 3, item, 0).matrix().values, standardize(song).matrix().values);
  }
}

TEST(EpochAugmenter, ValidationIsFrozenAcrossEpochs) {
  auto bank = std::make_shared<NoiseBank>(bank_of({random_strip(700, 1), random_strip(420, 2)}));
  MixPolicy policy;
  policy.master_seed = 5;
  const EpochAugmenter val(bank, policy, Split::kVal);
  for (int item = 0; item < 20; ++item) {
    const auto song = raw_song(100 + item);
    EXPECT_EQ(val.augment(song, 3, item, 1).matrix().values, val.augment(song, 7, item, 1).matrix().values);
  }
}

TEST(EpochAugmenter, TrainingRedrawsEveryEpoch) {
  auto bank = std::make_shared<NoiseBank>(bank_of({random_strip(700, 1)}));
  MixPolicy policy;
  policy.master_seed = 5;
  const EpochAugmenter train(bank, policy, Split::kTrain);
  EXPECT_NE(mix_seed(policy, 3, 0, 0), mix_seed(policy, 7, 0, 0));
  EXPECT_NE(mix_seed(policy, 3, 0, 0), mix_seed(policy, 3, 0, 1));
  int differing = 0;
  for (int item = 0; item < 20; ++item) {
    const auto a = train.params(3, item, 0), b = train.params(7, item, 0);
    differing += a.delay_s != b.delay_s;
  }
  EXPECT_GT(differing, 15);
}

TEST(EpochAugmenter, ZeroApplyProbabilityIsBasic) {
  auto bank = std::make_shared<NoiseBank>(bank_of({random_strip(700, 1)}));
  MixPolicy policy;
  policy.apply_probability = 0.0;
  const EpochAugmenter train(bank, policy, Split::kTrain);
  for (int item = 0; item < 10; ++item) {
    const auto song = raw_song(item);
    EXPECT_EQ(train.augment(song, item, item, 0).matrix().values, standardize(song).matrix().values);
  }
}

TEST(MixPolicy, JsonRoundTripAndValidation) {
  MixPolicy p;
  p.master_seed = 99;
  p.apply_probability = 0.25;
  const auto back = mix_policy_from_json(to_json(p));
  EXPECT_EQ(back.master_seed, 99u);
  EXPECT_EQ(back.apply_probability, 0.25);
  EXPECT_EQ(back.gain_choices_db, p.gain_choices_db);
  EXPECT_THROW(mix_policy_from_json({{"apply_probability", 1.5}}), AugmentationConfigError);
}

}  // namespace
