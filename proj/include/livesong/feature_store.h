#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "livesong/features.h"

namespace livesong {

/// In-memory map of track id -> raw (unstandardized) and standardized
/// 72 x 401 features. Immutable once filled; safe for concurrent reads.
class FeatureStore {
 public:
  void insert(const std::string& track_id, FeatureMatrix raw);
  void insert(const CQSpectrogram& raw) { insert(raw.track_id(), raw.matrix()); }

  /// Reads `<dir>/<id>.cqt` for every id. Throws FeatureCacheError listing all
  /// missing ids at once.
  static FeatureStore load(const std::filesystem::path& cache_dir, const std::vector<std::string>& track_ids);

  bool contains(const std::string& track_id) const { return entries_.count(track_id) != 0; }
  std::size_t size() const { return entries_.size(); }

  /// Throws std::out_of_range for an unknown id.
  const CQSpectrogram& raw(const std::string& track_id) const;
  const CQSpectrogram& standardized(const std::string& track_id) const;

 private:
  struct Entry {
    CQSpectrogram raw;
    CQSpectrogram standardized;
  };
  const Entry& entry(const std::string& track_id) const;
  std::map<std::string, Entry> entries_;
};

}  // namespace livesong
