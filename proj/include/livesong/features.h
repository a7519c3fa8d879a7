#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "livesong/audio.h"
#include "livesong/manifest.h"

namespace livesong {

constexpr int kCqtBins = 72;
constexpr int kCqtBinsPerOctave = 12;
constexpr double kCqtFmin = 32.7;
constexpr int kCqtHop = 6592;
constexpr int kFrames = 401;
constexpr double kHopSeconds = static_cast<double>(kCqtHop) / kSampleRate;

/// Row-major bins x frames matrix.
struct FeatureMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> values;

  FeatureMatrix() = default;
  FeatureMatrix(int r, int c, float fill = 0.0f)
      : rows(r), cols(c), values(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

/// Model input: exactly 72 x 401. Unstandardized matrices hold CQT
/// magnitudes (>= 0).
class CQSpectrogram {
 public:
  CQSpectrogram() : matrix_(kCqtBins, kFrames) {}
  /// Throws std::invalid_argument unless the matrix is 72 x 401.
  CQSpectrogram(FeatureMatrix matrix, std::string track_id, bool standardized, Method method);

  const FeatureMatrix& matrix() const { return matrix_; }
  std::span<const float> values() const { return matrix_.values; }
  const std::string& track_id() const { return track_id_; }
  bool standardized() const { return standardized_; }
  Method method() const { return method_; }

 private:
  FeatureMatrix matrix_;
  std::string track_id_;
  bool standardized_ = false;
  Method method_ = Method::kBasic;
};

/// Center frequency of bin k: fmin * 2^(k/12).
double cqt_bin_frequency(int bin);

/// Constant-Q magnitudes of a mono 22050 Hz signal. Frame t is centered on
/// sample t * hop; the signal is zero outside its support. Returns 72 rows and
/// floor(n / hop) columns, or `frames` columns when frames >= 0.
FeatureMatrix cqt_magnitudes(std::span<const float> samples, int frames = -1);

/// 72 x 401 unstandardized spectrogram of a 120 s window.
CQSpectrogram compute_cqt(const AudioClip& clip, Method method = Method::kBasic);

/// (x - mean) / std over all entries, population std. A constant matrix maps
/// to all zeros, logs a warning and sets *degenerate.
FeatureMatrix standardize(const FeatureMatrix& m, bool* degenerate = nullptr);
CQSpectrogram standardize(const CQSpectrogram& spec, bool* degenerate = nullptr);

/// Decodes the entry's audio (filling duration_s when absent), selects the
/// window for `method` and returns the unstandardized spectrogram.
CQSpectrogram compute_raw_features(const TrackManifestEntry& entry, Method method);

/// Receives the raw spectrogram of a crowd-method track and returns the
/// standardized, noise-mixed result.
using NoiseHook = std::function<CQSpectrogram(const CQSpectrogram&)>;

/// basic/chorus: standardized spectrogram. crowd: the raw spectrogram, or
/// hook(raw) when a hook is supplied.
CQSpectrogram extract_features(const TrackManifestEntry& entry, Method method, const NoiseHook& noise_hook = {});

// Feature cache: `<dir>/<track_id>.cqt`, 16-byte header ("CQT1", u32 rows,
// u32 cols, u32 flags; bit0 = standardized) followed by little-endian f32
// values in row-major order.

constexpr std::uint32_t kCqtFlagStandardized = 1;

class FeatureCacheError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::filesystem::path cache_path(const std::filesystem::path& dir, const std::string& track_id);
void write_cqt(const std::filesystem::path& path, const FeatureMatrix& m, bool standardized);
/// Throws FeatureCacheError on a missing, truncated or malformed file.
FeatureMatrix read_cqt(const std::filesystem::path& path, bool* standardized = nullptr);

/// Loads a cached raw 72 x 401 feature and standardizes it.
CQSpectrogram load_standardized(const std::filesystem::path& dir, const std::string& track_id);

}  // namespace livesong
