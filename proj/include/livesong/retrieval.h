#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "livesong/features.h"
#include "livesong/manifest.h"
#include "livesong/model.h"

namespace livesong {

class RetrievalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReferenceEntry {
  std::string track_id;
  std::string song_id;
  nlohmann::json metadata = nlohmann::json::object();
  CQSpectrogram feature;  // standardized
};

/// Immutable set of reference tracks in ascending track_id order.
class ReferenceDB {
 public:
  /// Throws RetrievalError when empty, on duplicate ids, or on a feature that
  /// is not standardized.
  explicit ReferenceDB(std::vector<ReferenceEntry> entries);

  /// Non-noise manifest entries with raw features from `<cache_dir>/<id>.cqt`,
  /// standardized on load. Lists every missing feature file in one error.
  static ReferenceDB build(const std::vector<TrackManifestEntry>& manifest, const std::filesystem::path& cache_dir);

  std::size_t size() const { return entries_.size(); }
  const std::vector<ReferenceEntry>& entries() const { return entries_; }
  const ReferenceEntry& operator[](std::size_t i) const { return entries_[i]; }
  std::optional<std::size_t> find(const std::string& track_id) const;
  bool has_song(const std::string& song_id) const;

 private:
  std::vector<ReferenceEntry> entries_;
};

/// Scores of `query` against every DB entry (DB order), one full pair forward
/// each, in batches.
std::vector<double> score_query(const Model& model, const CQSpectrogram& query, const ReferenceDB& db,
                                int batch_size = 8);

/// Same scores, reusing branch outputs of the DB tracks computed once at
/// construction. The model and DB must outlive the scorer. Thread-safe.
class QueryScorer {
 public:
  QueryScorer(const Model& model, const ReferenceDB& db, int batch_size = 8);

  std::vector<double> score(const CQSpectrogram& query) const;
  const ReferenceDB& db() const { return db_; }
  const Model& model() const { return model_; }

 private:
  const Model& model_;
  const ReferenceDB& db_;
  int batch_size_;
  std::vector<DeepSequences<float>> cached_;  // one batch per chunk of the DB
};

struct ScoredTrack {
  std::string track_id;
  double score = 0.0;
};

struct RankedList {
  std::string query_id;
  std::vector<ScoredTrack> items;  // descending score, ties by ascending id

  /// 1-based rank of the first item satisfying `relevant`, or 0 if none.
  template <typename Pred>
  int first_rank(Pred relevant) const {
    for (std::size_t i = 0; i < items.size(); ++i)
      if (relevant(items[i])) return static_cast<int>(i) + 1;
    return 0;
  }
};

/// Throws RetrievalError on empty input or a NaN score.
RankedList rank(std::string query_id, std::vector<ScoredTrack> scores);
RankedList rank(std::string query_id, const ReferenceDB& db, std::span<const double> scores);

struct QueryOutcome {
  std::string query_id;
  std::string song_id;
  int rank = 0;  // of the first reference with the query's song_id
  std::string top_track_id;
  double top_score = 0.0;
};

struct MetricsReport {
  double p_at_10 = 0.0;
  double mr1 = 0.0;
  double map = 0.0;
  double top1_rate = 0.0;
  double top5_rate = 0.0;
  int num_queries = 0;
  std::vector<QueryOutcome> per_query;
  // Queries skipped because the DB holds no version of their song.
  std::vector<std::string> excluded;
};

/// P@10, MR1, MAP and top-1/top-5 rates from 1-based first-relevant ranks,
/// one relevant item per query. Throws RetrievalError on an empty set or a
/// rank below 1.
MetricsReport compute_metrics(std::span<const int> ranks);

nlohmann::json to_json(const MetricsReport& report);

struct Query {
  std::string query_id;
  std::string song_id;
  CQSpectrogram feature;  // standardized
};

MetricsReport evaluate(const QueryScorer& scorer, const std::vector<Query>& queries);

/// Query features come from the raw cache and are standardized on load.
MetricsReport evaluate(const QueryScorer& scorer, const std::vector<TrackManifestEntry>& query_manifest,
                       const std::filesystem::path& cache_dir);

}  // namespace livesong
