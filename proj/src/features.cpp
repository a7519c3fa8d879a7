#include "livesong/features.h"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace livesong {

namespace {

struct CqtKernel {
  int length = 0;
  std::vector<float> re;
  std::vector<float> im;
};

// Hann-windowed complex exponentials with Q = 1 / (2^(1/12) - 1), each
// normalized by its window sum so a unit sinusoid at a bin center reads 0.5.
const std::vector<CqtKernel>& cqt_kernels() {
  static const std::vector<CqtKernel> kernels = [] {
    const double q = 1.0 / (std::pow(2.0, 1.0 / kCqtBinsPerOctave) - 1.0);
    std::vector<CqtKernel> ks(kCqtBins);
    for (int k = 0; k < kCqtBins; ++k) {
      const double f = cqt_bin_frequency(k);
      auto& kernel = ks[static_cast<std::size_t>(k)];
      kernel.length = static_cast<int>(std::ceil(q * kSampleRate / f));
      kernel.re.resize(static_cast<std::size_t>(kernel.length));
      kernel.im.resize(static_cast<std::size_t>(kernel.length));
      double wsum = 0.0;
      std::vector<double> w(static_cast<std::size_t>(kernel.length));
      for (int n = 0; n < kernel.length; ++n) {
        w[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * (n + 0.5) / kernel.length);
        wsum += w[n];
      }
      const double center = 0.5 * kernel.length;
      for (int n = 0; n < kernel.length; ++n) {
        const double phase = 2.0 * M_PI * f * (n - center) / kSampleRate;
        kernel.re[n] = static_cast<float>(w[n] * std::cos(phase) / wsum);
        kernel.im[n] = static_cast<float>(-w[n] * std::sin(phase) / wsum);
      }
    }
    return ks;
  }();
  return kernels;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

}  // namespace

CQSpectrogram::CQSpectrogram(FeatureMatrix matrix, std::string track_id, bool standardized, Method method)
    : matrix_(std::move(matrix)), track_id_(std::move(track_id)), standardized_(standardized), method_(method) {
  if (matrix_.rows != kCqtBins || matrix_.cols != kFrames ||
      matrix_.values.size() != static_cast<std::size_t>(kCqtBins) * kFrames)
    throw std::invalid_argument("CQSpectrogram must be 72 x 401, got " + std::to_string(matrix_.rows) + " x " +
                                std::to_string(matrix_.cols));
}

double cqt_bin_frequency(int bin) { return kCqtFmin * std::pow(2.0, static_cast<double>(bin) / kCqtBinsPerOctave); }

FeatureMatrix cqt_magnitudes(std::span<const float> samples, int frames) {
  const auto& kernels = cqt_kernels();
  const int n = static_cast<int>(samples.size());
  if (frames < 0) frames = n / kCqtHop;
  FeatureMatrix out(kCqtBins, frames);
  if (frames == 0) return out;

  const int pad = kernels.front().length / 2 + 1;
  std::vector<float> padded(static_cast<std::size_t>(n) + 2 * static_cast<std::size_t>(pad), 0.0f);
  std::copy(samples.begin(), samples.end(), padded.begin() + pad);

#pragma omp parallel for schedule(dynamic, 4)
  for (int t = 0; t < frames; ++t) {
    const long long center = static_cast<long long>(t) * kCqtHop;
    for (int k = 0; k < kCqtBins; ++k) {
      const auto& kernel = kernels[static_cast<std::size_t>(k)];
      const long long start = center - kernel.length / 2 + pad;
      // Frames whose support leaves the padded buffer see zeros there.
      const long long lo = std::max(0LL, -start);
      const long long hi = std::min<long long>(kernel.length, static_cast<long long>(padded.size()) - start);
      float re = 0.0f, im = 0.0f;
      const float* x = padded.data() + start;
      const float* kr = kernel.re.data();
      const float* ki = kernel.im.data();
#pragma omp simd reduction(+ : re, im)
      for (long long i = lo; i < hi; ++i) {
        re += x[i] * kr[i];
        im += x[i] * ki[i];
      }
      out.at(k, t) = std::sqrt(re * re + im * im);
    }
  }
  return out;
}

CQSpectrogram compute_cqt(const AudioClip& clip, Method method) {
  if (clip.rate != kSampleRate || clip.samples.size() != kWindowSamples)
    throw std::invalid_argument("compute_cqt: expected a 120 s clip at 22050 Hz, got " +
                                std::to_string(clip.samples.size()) + " samples at " + std::to_string(clip.rate) +
                                " Hz");
  return CQSpectrogram(cqt_magnitudes(clip.samples, kFrames), clip.source_id, false, method);
}

FeatureMatrix standardize(const FeatureMatrix& m, bool* degenerate) {
  const std::size_t n = m.values.size();
  double mean = 0.0;
  for (float v : m.values) mean += v;
  mean /= n ? static_cast<double>(n) : 1.0;
  double var = 0.0;
  for (float v : m.values) var += (v - mean) * (v - mean);
  var /= n ? static_cast<double>(n) : 1.0;
  const double sd = std::sqrt(var);

  FeatureMatrix out(m.rows, m.cols);
  const bool flat = !(sd > 0.0) || !std::isfinite(sd);
  if (degenerate) *degenerate = flat;
  if (flat) {
    spdlog::warn("standardize: constant feature matrix (std = 0); emitting zeros");
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) out.values[i] = static_cast<float>((m.values[i] - mean) / sd);
  return out;
}

CQSpectrogram standardize(const CQSpectrogram& spec, bool* degenerate) {
  return CQSpectrogram(standardize(spec.matrix(), degenerate), spec.track_id(), true, spec.method());
}

CQSpectrogram compute_raw_features(const TrackManifestEntry& entry, Method method) {
  AudioClip clip = load_audio(entry.path, entry.track_id);
  TrackManifestEntry resolved = entry;
  if (!resolved.duration_s) resolved.duration_s = clip.duration_s();
  const AudioClip window = select_segment(clip, resolve_start(resolved, method));
  return compute_cqt(window, method);
}

CQSpectrogram extract_features(const TrackManifestEntry& entry, Method method, const NoiseHook& noise_hook) {
  CQSpectrogram raw = compute_raw_features(entry, method);
  if (method == Method::kCrowd) return noise_hook ? noise_hook(raw) : raw;
  return standardize(raw);
}

std::filesystem::path cache_path(const std::filesystem::path& dir, const std::string& track_id) {
  return dir / (track_id + ".cqt");
}

void write_cqt(const std::filesystem::path& path, const FeatureMatrix& m, bool standardized) {
  if (m.values.size() != static_cast<std::size_t>(m.rows) * m.cols)
    throw std::invalid_argument("write_cqt: matrix size does not match its shape");
  // Write to a sibling temp file and rename so readers never see a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FeatureCacheError("cannot write '" + tmp.string() + "'");
    out.write("CQT1", 4);
    put_u32(out, static_cast<std::uint32_t>(m.rows));
    put_u32(out, static_cast<std::uint32_t>(m.cols));
    put_u32(out, standardized ? kCqtFlagStandardized : 0u);
    for (float v : m.values) {
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      put_u32(out, u);
    }
    if (!out) throw FeatureCacheError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

FeatureMatrix read_cqt(const std::filesystem::path& path, bool* standardized) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureCacheError("missing feature file '" + path.string() + "'");
  unsigned char header[16];
  if (!in.read(reinterpret_cast<char*>(header), 16)) throw FeatureCacheError("truncated header in '" + path.string() + "'");
  if (std::memcmp(header, "CQT1", 4) != 0) throw FeatureCacheError("bad magic in '" + path.string() + "'");
  const std::uint32_t rows = get_u32(header + 4), cols = get_u32(header + 8), flags = get_u32(header + 12);
  if (rows == 0 || rows > 4096 || cols > (1u << 24))
    throw FeatureCacheError("implausible shape in '" + path.string() + "'");
  FeatureMatrix m(static_cast<int>(rows), static_cast<int>(cols));
  std::vector<unsigned char> raw(m.values.size() * 4);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw FeatureCacheError("truncated data in '" + path.string() + "'");
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const std::uint32_t u = get_u32(raw.data() + 4 * i);
    std::memcpy(&m.values[i], &u, 4);
  }
  if (standardized) *standardized = (flags & kCqtFlagStandardized) != 0;
  return m;
}

CQSpectrogram load_standardized(const std::filesystem::path& dir, const std::string& track_id) {
  bool stored_standardized = false;
  FeatureMatrix m = read_cqt(cache_path(dir, track_id), &stored_standardized);
  if (m.rows != kCqtBins || m.cols != kFrames)
    throw FeatureCacheError("feature file for '" + track_id + "' is " + std::to_string(m.rows) + " x " +
                            std::to_string(m.cols) + ", expected 72 x 401");
  CQSpectrogram spec(std::move(m), track_id, stored_standardized, Method::kBasic);
  return stored_standardized ? spec : standardize(spec);
}

}  // namespace livesong
