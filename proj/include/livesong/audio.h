#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace livesong {

constexpr int kSampleRate = 22050;
constexpr double kWindowSeconds = 120.0;
constexpr std::size_t kWindowSamples = 2'646'000;

class AudioDecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mono clip. After normalize_audio() the rate is always kSampleRate.
struct AudioClip {
  std::vector<float> samples;
  int rate = kSampleRate;
  std::string source_id;

  double duration_s() const { return rate > 0 ? static_cast<double>(samples.size()) / rate : 0.0; }
};

/// Decoded multi-channel audio at its native rate.
struct RawAudio {
  std::vector<std::vector<float>> channels;
  int rate = 0;
};

/// RIFF/WAVE decoding: PCM 8/16/24/32-bit, IEEE float 32/64-bit, plain or
/// WAVE_FORMAT_EXTENSIBLE. `name` appears in every error message.
RawAudio decode_wav(std::span<const std::uint8_t> bytes, const std::string& name);
RawAudio read_wav(const std::filesystem::path& path);

enum class WavSampleFormat { kPcm16, kFloat32 };

std::vector<std::uint8_t> encode_wav(const RawAudio& audio, WavSampleFormat format = WavSampleFormat::kPcm16);
void write_wav(const std::filesystem::path& path, const RawAudio& audio,
               WavSampleFormat format = WavSampleFormat::kPcm16);

/// Band-limited rational resampler (Kaiser-windowed sinc, polyphase).
/// Output length is ceil(n * to / from).
std::vector<float> resample(std::span<const float> input, int from_rate, int to_rate);

/// Channel mean, then resampling to kSampleRate. A clip already at the target
/// rate is passed through untouched.
AudioClip normalize_audio(const RawAudio& raw, const std::string& source_id);

/// read_wav + normalize_audio.
AudioClip load_audio(const std::filesystem::path& path, const std::string& source_id);

/// Exactly kWindowSamples samples starting at start_s, zero padded past the
/// clip end. Throws std::out_of_range if start_s lies beyond the clip.
AudioClip select_segment(const AudioClip& clip, double start_s);

}  // namespace livesong
