#include "livesong/audio.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

namespace livesong {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

std::uint16_t read_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

float decode_sample(const std::uint8_t* p, std::uint16_t format, int bits) {
  if (format == kFormatFloat) {
    if (bits == 32) {
      std::uint32_t u = read_u32(p);
      float f;
      std::memcpy(&f, &u, 4);
      return f;
    }
    std::uint64_t u = std::uint64_t(read_u32(p)) | std::uint64_t(read_u32(p + 4)) << 32;
    double d;
    std::memcpy(&d, &u, 8);
    return static_cast<float>(d);
  }
  switch (bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0f;
    case 16:
      return static_cast<std::int16_t>(read_u16(p)) / 32768.0f;
    case 24: {
      std::int32_t v = std::int32_t(p[0]) | std::int32_t(p[1]) << 8 | std::int32_t(p[2]) << 16;
      if (v & 0x800000) v -= 0x1000000;
      return static_cast<float>(v / 8388608.0);
    }
    default:
      return static_cast<float>(static_cast<std::int32_t>(read_u32(p)) / 2147483648.0);
  }
}

// Modified Bessel function of the first kind, order zero (power series).
double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200 && term > sum * 1e-17; ++k) {
    term *= q / (double(k) * k);
    sum += term;
  }
  return sum;
}

}  // namespace

RawAudio decode_wav(std::span<const std::uint8_t> bytes, const std::string& name) {
  const auto fail = [&](const std::string& why) -> AudioDecodeError {
    return AudioDecodeError("cannot decode audio '" + name + "': " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::size_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min(len, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("truncated fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible) {
        if (avail < 26) throw fail("truncated extensible fmt chunk");
        format = read_u16(chunk + 32);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = avail;  // tolerate streams whose header overstates the length
    }
    pos = body + len + (len & 1);
  }

  if (!have_fmt) throw fail("missing fmt chunk");
  if (!data) throw fail("missing data chunk");
  if (channels == 0) throw fail("zero channels");
  if (rate == 0) throw fail("zero sample rate");
  const bool pcm_ok = format == kFormatPcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  const bool float_ok = format == kFormatFloat && (bits == 32 || bits == 64);
  if (!pcm_ok && !float_ok)
    throw fail("unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) + " bits)");

  const std::size_t frame_bytes = std::size_t(channels) * (bits / 8);
  const std::size_t frames = data_len / frame_bytes;
  if (frames == 0) throw fail("no audio samples");

  RawAudio out;
  out.rate = static_cast<int>(rate);
  out.channels.assign(channels, std::vector<float>(frames));
  for (std::size_t f = 0; f < frames; ++f) {
    const std::uint8_t* frame = data + f * frame_bytes;
    for (std::size_t c = 0; c < channels; ++c) out.channels[c][f] = decode_sample(frame + c * (bits / 8), format, bits);
  }
  return out;
}

RawAudio read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioDecodeError("cannot decode audio '" + path.string() + "': unable to open file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.string());
}

std::vector<std::uint8_t> encode_wav(const RawAudio& audio, WavSampleFormat format) {
  if (audio.channels.empty()) throw std::invalid_argument("encode_wav: no channels");
  const std::size_t frames = audio.channels[0].size();
  for (const auto& c : audio.channels)
    if (c.size() != frames) throw std::invalid_argument("encode_wav: channels differ in length");
  const std::uint16_t channels = static_cast<std::uint16_t>(audio.channels.size());
  const std::uint16_t bits = format == WavSampleFormat::kPcm16 ? 16 : 32;
  const std::uint32_t data_len = static_cast<std::uint32_t>(frames * channels * (bits / 8));

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_len);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_len);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, format == WavSampleFormat::kPcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, channels);
  put_u32(out, static_cast<std::uint32_t>(audio.rate));
  put_u32(out, static_cast<std::uint32_t>(audio.rate) * channels * (bits / 8));
  put_u16(out, static_cast<std::uint16_t>(channels * (bits / 8)));
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_len);
  for (std::size_t f = 0; f < frames; ++f) {
    for (const auto& c : audio.channels) {
      if (format == WavSampleFormat::kPcm16) {
        const float v = std::clamp(c[f], -1.0f, 1.0f);
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lrint(v * 32767.0f))));
      } else {
        std::uint32_t u;
        std::memcpy(&u, &c[f], 4);
        put_u32(out, u);
      }
    }
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const RawAudio& audio, WavSampleFormat format) {
  const auto bytes = encode_wav(audio, format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to '" + path.string() + "'");
}

std::vector<float> resample(std::span<const float> input, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw std::invalid_argument("resample: rates must be positive");
  if (from_rate == to_rate) return {input.begin(), input.end()};
  const int g = std::gcd(from_rate, to_rate);
  const long long up = to_rate / g, down = from_rate / g;

  // Lowpass at 95% of the narrower Nyquist band; beta 8.6 gives ~86 dB of
  // stop-band attenuation.
  constexpr double kRolloff = 0.95;
  constexpr double kBeta = 8.6;
  constexpr int kZeroCrossings = 48;
  const double cutoff = kRolloff * std::min(1.0, double(up) / double(down));  // cycles per input sample * 2
  const int half = static_cast<int>(std::ceil(kZeroCrossings / cutoff));
  const int taps = 2 * half;
  const double i0_beta = bessel_i0(kBeta);

  // Phase p evaluates the filter at offsets (p / up) - i for input taps
  // i in [base - half + 1, base + half].
  std::vector<float> table(static_cast<std::size_t>(up) * taps);
  for (long long p = 0; p < up; ++p) {
    const double frac = double(p) / double(up);
    for (int t = 0; t < taps; ++t) {
      const double x = frac - (t - half + 1);
      const double r = x / half;
      const double window = std::abs(r) >= 1.0 ? 0.0 : bessel_i0(kBeta * std::sqrt(1.0 - r * r)) / i0_beta;
      const double arg = M_PI * cutoff * x;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
      table[p * taps + t] = static_cast<float>(cutoff * sinc * window);
    }
  }

  const long long n = static_cast<long long>(input.size());
  const long long out_n = (n * up + down - 1) / down;
  std::vector<float> out(static_cast<std::size_t>(out_n));
#pragma omp parallel for schedule(static)
  for (long long j = 0; j < out_n; ++j) {
    const long long pos = j * down;
    const long long base = pos / up;
    const float* h = table.data() + (pos % up) * taps;
    double acc = 0.0;
    const long long first = base - half + 1;
    const int t0 = static_cast<int>(std::max(0LL, -first));
    const int t1 = static_cast<int>(std::min<long long>(taps, n - first));
    for (int t = t0; t < t1; ++t) acc += double(h[t]) * input[static_cast<std::size_t>(first + t)];
    out[static_cast<std::size_t>(j)] = static_cast<float>(acc);
  }
  return out;
}

AudioClip normalize_audio(const RawAudio& raw, const std::string& source_id) {
  const auto fail = [&](const std::string& why) {
    return AudioDecodeError("cannot decode audio '" + source_id + "': " + why);
  };
  if (raw.channels.empty()) throw fail("no channels");
  if (raw.rate <= 0) throw fail("non-positive sample rate");
  const std::size_t n = raw.channels[0].size();
  if (n == 0) throw fail("no audio samples");
  for (const auto& c : raw.channels)
    if (c.size() != n) throw fail("channels differ in length");

  std::vector<float> mono;
  if (raw.channels.size() == 1) {
    mono = raw.channels[0];
  } else {
    mono.assign(n, 0.0f);
    const double inv = 1.0 / static_cast<double>(raw.channels.size());
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (const auto& c : raw.channels) s += c[i];
      mono[i] = static_cast<float>(s * inv);
    }
  }
  AudioClip clip;
  clip.samples = raw.rate == kSampleRate ? std::move(mono) : resample(mono, raw.rate, kSampleRate);
  clip.rate = kSampleRate;
  clip.source_id = source_id;
  return clip;
}

AudioClip load_audio(const std::filesystem::path& path, const std::string& source_id) {
  return normalize_audio(read_wav(path), source_id);
}

AudioClip select_segment(const AudioClip& clip, double start_s) {
  if (!(start_s >= 0.0)) throw std::invalid_argument("select_segment: start must be >= 0");
  if (start_s > clip.duration_s())
    throw std::out_of_range("select_segment: start " + std::to_string(start_s) + " s is beyond the end of '" +
                            clip.source_id + "' (" + std::to_string(clip.duration_s()) + " s)");
  const std::size_t start = static_cast<std::size_t>(std::llround(start_s * clip.rate));
  AudioClip out;
  out.rate = clip.rate;
  out.source_id = clip.source_id;
  out.samples.assign(kWindowSamples, 0.0f);
  if (start < clip.samples.size()) {
    const std::size_t take = std::min(kWindowSamples, clip.samples.size() - start);
    std::copy_n(clip.samples.begin() + static_cast<std::ptrdiff_t>(start), take, out.samples.begin());
  }
  return out;
}

}  // namespace livesong
