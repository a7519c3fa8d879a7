#include "livesong/feature_store.h"

namespace livesong {

void FeatureStore::insert(const std::string& track_id, FeatureMatrix raw) {
  CQSpectrogram spec(std::move(raw), track_id, false, Method::kBasic);
  auto standardized = standardize(spec);
  entries_.insert_or_assign(track_id, Entry{std::move(spec), std::move(standardized)});
}

FeatureStore FeatureStore::load(const std::filesystem::path& cache_dir, const std::vector<std::string>& track_ids) {
  FeatureStore store;
  std::vector<std::string> missing;
  for (const auto& id : track_ids) {
    const auto path = cache_path(cache_dir, id);
    if (!std::filesystem::exists(path)) {
      missing.push_back(id);
      continue;
    }
    bool standardized = false;
    FeatureMatrix m = read_cqt(path, &standardized);
    if (standardized) throw FeatureCacheError("cached feature for '" + id + "' is already standardized");
    if (m.rows != kCqtBins || m.cols != kFrames)
      throw FeatureCacheError("cached feature for '" + id + "' is not 72 x 401");
    store.insert(id, std::move(m));
  }
  if (!missing.empty()) {
    std::string msg = "missing feature files for " + std::to_string(missing.size()) + " track(s):";
    for (const auto& id : missing) msg += " " + id;
    throw FeatureCacheError(msg);
  }
  return store;
}

const FeatureStore::Entry& FeatureStore::entry(const std::string& track_id) const {
  const auto it = entries_.find(track_id);
  if (it == entries_.end()) throw std::out_of_range("no features for track '" + track_id + "'");
  return it->second;
}

const CQSpectrogram& FeatureStore::raw(const std::string& track_id) const { return entry(track_id).raw; }

const CQSpectrogram& FeatureStore::standardized(const std::string& track_id) const {
  return entry(track_id).standardized;
}

}  // namespace livesong
