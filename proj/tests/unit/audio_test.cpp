#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "livesong/audio.h"
#include "support/temp_dir.h"

using namespace livesong;
using livesong::test_support::TempDir;

namespace {

std::vector<float> tone(double freq, int rate, double seconds, double amp = 0.5) {
  std::vector<float> v(static_cast<std::size_t>(std::llround(seconds * rate)));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(amp * std::sin(2 * M_PI * freq * i / rate));
  return v;
}

double rms(std::span<const float> v, std::size_t skip = 0) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = skip; i + skip < v.size(); ++i, ++n) s += double(v[i]) * v[i];
  return std::sqrt(s / std::max<std::size_t>(n, 1));
}

TEST(Wav, Pcm16RoundTripWithinQuantization) {
  RawAudio a;
  a.rate = 22050;
  a.channels = {tone(440, 22050, 0.1), tone(220, 22050, 0.1)};
  const auto bytes = encode_wav(a);
  EXPECT_EQ(bytes.size(), 44u + a.channels[0].size() * 4);
  const auto b = decode_wav(bytes, "mem");
  ASSERT_EQ(b.channels.size(), 2u);
  EXPECT_EQ(b.rate, 22050);
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < a.channels[c].size(); ++i) ASSERT_NEAR(a.channels[c][i], b.channels[c][i], 1.0 / 32767);
}

TEST(Wav, Float32RoundTripIsExact) {
  TempDir dir;
  RawAudio a;
  a.rate = 44100;
  a.channels = {tone(1000, 44100, 0.05, 0.9)};
  write_wav(dir / "x.wav", a, WavSampleFormat::kFloat32);
  const auto b = read_wav(dir / "x.wav");
  EXPECT_EQ(b.rate, 44100);
  EXPECT_EQ(b.channels[0], a.channels[0]);
}

TEST(Wav, Decodes24BitExtensible) {
  // Hand-assembled WAVE_FORMAT_EXTENSIBLE header, mono 24-bit, 3 samples.
  std::vector<std::uint8_t> b;
  auto u32 = [&](std::uint32_t v) { for (int i = 0; i < 4; ++i) b.push_back(std::uint8_t(v >> (8 * i))); };
  auto u16 = [&](std::uint16_t v) { b.push_back(std::uint8_t(v)); b.push_back(std::uint8_t(v >> 8)); };
  auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  tag("RIFF"); u32(0); tag("WAVE");
  tag("fmt "); u32(40); u16(0xFFFE); u16(1); u32(8000); u32(24000); u16(3); u16(24);
  u16(22); u16(24); u32(4); u16(1);  // cbSize, valid bits, channel mask, subformat PCM
  for (int i = 0; i < 14; ++i) b.push_back(0);
  tag("data"); u32(9);
  const std::int32_t vals[3] = {0x400000, -0x800000, 1};
  for (std::int32_t v : vals) for (int i = 0; i < 3; ++i) b.push_back(std::uint8_t(v >> (8 * i)));
  const auto a = decode_wav(b, "ext");
  ASSERT_EQ(a.channels[0].size(), 3u);
  EXPECT_FLOAT_EQ(a.channels[0][0], 0.5f);
  EXPECT_FLOAT_EQ(a.channels[0][1], -1.0f);
  EXPECT_FLOAT_EQ(a.channels[0][2], static_cast<float>(1.0 / 8388608.0));
}

TEST(Wav, DecodeErrorsNameTheFile) {
  const std::vector<std::uint8_t> junk = {'n', 'o', 'p', 'e'};
  try {
    decode_wav(junk, "broken.wav");
    FAIL();
  } catch (const AudioDecodeError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.wav"), std::string::npos);
  }
  EXPECT_THROW(read_wav("/nonexistent/file.wav"), AudioDecodeError);

  RawAudio empty;
  empty.rate = 22050;
  empty.channels = {{}};
  try {
    normalize_audio(empty, "silent-track");
    FAIL();
  } catch (const AudioDecodeError& e) {
    EXPECT_NE(std::string(e.what()).find("silent-track"), std::string::npos);
  }
}

TEST(NormalizeAudio, OppositeChannelsCancel) {
  RawAudio a;
  a.rate = 22050;
  a.channels = {tone(300, 22050, 0.2)};
  a.channels.push_back(a.channels[0]);
  for (auto& x : a.channels[1]) x = -x;
  const auto clip = normalize_audio(a, "t");
  for (float v : clip.samples) ASSERT_EQ(v, 0.0f);
}

TEST(NormalizeAudio, MonoAtTargetRateIsIdentity) {
  RawAudio a;
  a.rate = kSampleRate;
  a.channels = {tone(123, kSampleRate, 0.3)};
  const auto clip = normalize_audio(a, "t");
  EXPECT_EQ(clip.samples, a.channels[0]);
  EXPECT_EQ(clip.rate, kSampleRate);
}

TEST(NormalizeAudio, HalvesLengthFrom44100) {
  RawAudio a;
  a.rate = 44100;
  a.channels = {tone(440, 44100, 10.0)};
  const auto clip = normalize_audio(a, "t");
  EXPECT_NEAR(static_cast<double>(clip.samples.size()), 220500.0, 1.0);
}

TEST(Resample, LengthIsCeilOfRatio) {
  for (auto [from, n] : std::vector<std::pair<int, std::size_t>>{{48000, 48001}, {16000, 1234}, {8000, 7}}) {
    const std::vector<float> x(n, 0.1f);
    const std::size_t expect = (n * 22050 + from - 1) / from;
    EXPECT_EQ(resample(x, from, 22050).size(), expect) << from;
  }
}

TEST(Resample, PassbandIsPreservedAndStopbandRejectedBy60dB) {
  const auto pass = tone(1000, 44100, 1.0);
  const auto out_pass = resample(pass, 44100, 22050);
  EXPECT_NEAR(rms(out_pass, 500) / rms(pass, 1000), 1.0, 0.01);

  // 15 kHz aliases into the 22050 Hz band unless filtered out.
  const auto stop = tone(15000, 44100, 1.0);
  const auto out_stop = resample(stop, 44100, 22050);
  EXPECT_LT(rms(out_stop, 500) / rms(stop, 1000), 1e-3);

  const auto stop48 = tone(13000, 48000, 1.0);
  EXPECT_LT(rms(resample(stop48, 48000, 22050), 500) / rms(stop48, 1000), 1e-3);
}

TEST(Resample, UpsamplingKeepsTheTone) {
  const auto x = tone(500, 8000, 1.0);
  const auto y = resample(x, 8000, 22050);
  // Compare against the analytic tone away from the edges.
  double err = 0;
  for (std::size_t i = 2000; i < y.size() - 2000; ++i)
    err = std::max(err, std::abs(y[i] - 0.5 * std::sin(2 * M_PI * 500 * double(i) / 22050)));
  EXPECT_LT(err, 5e-3);
}

TEST(SelectSegment, ShortClipIsZeroPadded) {
  AudioClip c;
  c.samples.assign(90 * kSampleRate, 0.25f);
  const auto s = select_segment(c, 0.0);
  ASSERT_EQ(s.samples.size(), kWindowSamples);
  for (std::size_t i = 0; i < 90u * kSampleRate; ++i) ASSERT_EQ(s.samples[i], 0.25f);
  for (std::size_t i = 90u * kSampleRate; i < kWindowSamples; ++i) ASSERT_EQ(s.samples[i], 0.0f);
}

TEST(SelectSegment, LongClipPrefixIsBitIdentical) {
  AudioClip c;
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> d(-1, 1);
  c.samples.resize(180 * kSampleRate);
  for (auto& x : c.samples) x = d(rng);
  const auto s = select_segment(c, 0.0);
  EXPECT_TRUE(std::equal(s.samples.begin(), s.samples.end(), c.samples.begin()));
}

TEST(SelectSegment, OffsetWindowCopiesThenPads) {
  AudioClip c;
  c.samples.resize(150 * kSampleRate);
  for (std::size_t i = 0; i < c.samples.size(); ++i) c.samples[i] = static_cast<float>(i % 1000) / 1000.f;
  const auto s = select_segment(c, 40.0);
  const std::size_t off = 40u * kSampleRate, live = 110u * kSampleRate;
  for (std::size_t i = 0; i < live; ++i) ASSERT_EQ(s.samples[i], c.samples[off + i]);
  for (std::size_t i = live; i < kWindowSamples; ++i) ASSERT_EQ(s.samples[i], 0.0f);
}

TEST(SelectSegment, StartPastTheEndThrows) {
  AudioClip c;
  c.samples.assign(10 * kSampleRate, 0.f);
  EXPECT_THROW(select_segment(c, 11.0), std::out_of_range);
  EXPECT_THROW(select_segment(c, -1.0), std::invalid_argument);
}

}  // namespace
