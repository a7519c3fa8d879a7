#include "livesong/retrieval.h"

#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

namespace livesong {

namespace {

Tensor<float> stack(const std::vector<const CQSpectrogram*>& specs) {
  Tensor<float> x({static_cast<int>(specs.size()), 1, kCqtBins, kFrames});
  const std::size_t per = static_cast<std::size_t>(kCqtBins) * kFrames;
  for (std::size_t i = 0; i < specs.size(); ++i)
    std::copy(specs[i]->values().begin(), specs[i]->values().end(), x.values().begin() + i * per);
  return x;
}

void require_standardized(const CQSpectrogram& q) {
  if (!q.standardized()) throw RetrievalError("query feature '" + q.track_id() + "' is not standardized");
}

}  // namespace

ReferenceDB::ReferenceDB(std::vector<ReferenceEntry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw RetrievalError("reference database is empty");
  std::sort(entries_.begin(), entries_.end(),
            [](const ReferenceEntry& a, const ReferenceEntry& b) { return a.track_id < b.track_id; });
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (i > 0 && entries_[i].track_id == entries_[i - 1].track_id)
      throw RetrievalError("duplicate reference track_id '" + entries_[i].track_id + "'");
    if (!entries_[i].feature.standardized())
      throw RetrievalError("reference feature '" + entries_[i].track_id + "' is not standardized");
  }
}

ReferenceDB ReferenceDB::build(const std::vector<TrackManifestEntry>& manifest, const std::filesystem::path& cache_dir) {
  std::vector<ReferenceEntry> entries;
  std::vector<std::string> missing;
  std::set<std::string> seen;
  for (const auto& e : manifest) {
    if (e.role == Role::kNoise) continue;
    if (!seen.insert(e.track_id).second) throw RetrievalError("duplicate reference track_id '" + e.track_id + "'");
    if (!std::filesystem::exists(cache_path(cache_dir, e.track_id))) {
      missing.push_back(e.track_id);
      continue;
    }
    entries.push_back({e.track_id, e.song_id, e.metadata, load_standardized(cache_dir, e.track_id)});
  }
  if (!missing.empty()) {
    std::string msg = "missing feature files for " + std::to_string(missing.size()) + " reference track(s):";
    for (const auto& id : missing) msg += " " + id;
    throw RetrievalError(msg);
  }
  return ReferenceDB(std::move(entries));
}

std::optional<std::size_t> ReferenceDB::find(const std::string& track_id) const {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), track_id,
                                   [](const ReferenceEntry& e, const std::string& id) { return e.track_id < id; });
  if (it == entries_.end() || it->track_id != track_id) return std::nullopt;
  return static_cast<std::size_t>(it - entries_.begin());
}

bool ReferenceDB::has_song(const std::string& song_id) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const ReferenceEntry& e) { return e.song_id == song_id; });
}

std::vector<double> score_query(const Model& model, const CQSpectrogram& query, const ReferenceDB& db,
                                int batch_size) {
  require_standardized(query);
  std::vector<double> scores;
  scores.reserve(db.size());
  for (std::size_t begin = 0; begin < db.size(); begin += batch_size) {
    const std::size_t end = std::min(db.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<const CQSpectrogram*> q(end - begin, &query), r;
    for (std::size_t i = begin; i < end; ++i) r.push_back(&db[i].feature);
    const auto out = model.forward(stack(q), stack(r));
    scores.insert(scores.end(), out.scores.begin(), out.scores.end());
  }
  return scores;
}

QueryScorer::QueryScorer(const Model& model, const ReferenceDB& db, int batch_size)
    : model_(model), db_(db), batch_size_(batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  for (std::size_t begin = 0; begin < db.size(); begin += batch_size) {
    const std::size_t end = std::min(db.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<const CQSpectrogram*> r;
    for (std::size_t i = begin; i < end; ++i) r.push_back(&db[i].feature);
    cached_.push_back(model.branch_forward(stack(r)));
  }
}

std::vector<double> QueryScorer::score(const CQSpectrogram& query) const {
  require_standardized(query);
  const auto q = model_.branch_forward(stack({&query}));
  std::vector<double> scores;
  scores.reserve(db_.size());
  for (const auto& refs : cached_) {
    const std::vector<DeepSequences<float>> copies(refs.batch(), q);
    const auto out = model_.similarity_head(compute_csms(DeepSequences<float>::concat(copies), refs));
    scores.insert(scores.end(), out.scores.begin(), out.scores.end());
  }
  return scores;
}

RankedList rank(std::string query_id, std::vector<ScoredTrack> scores) {
  if (scores.empty()) throw RetrievalError("cannot rank an empty score list");
  for (const auto& s : scores)
    if (std::isnan(s.score)) throw RetrievalError("NaN score for track '" + s.track_id + "'");
  std::sort(scores.begin(), scores.end(), [](const ScoredTrack& a, const ScoredTrack& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.track_id < b.track_id;
  });
  return RankedList{std::move(query_id), std::move(scores)};
}

RankedList rank(std::string query_id, const ReferenceDB& db, std::span<const double> scores) {
  if (scores.size() != db.size()) throw RetrievalError("score count does not match the database size");
  std::vector<ScoredTrack> items;
  items.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) items.push_back({db[i].track_id, scores[i]});
  return rank(std::move(query_id), std::move(items));
}

MetricsReport compute_metrics(std::span<const int> ranks) {
  if (ranks.empty()) throw RetrievalError("metrics need at least one query");
  MetricsReport r;
  double p10 = 0, mr = 0, ap = 0, top1 = 0, top5 = 0;
  for (const int k : ranks) {
    if (k < 1) throw RetrievalError("ranks are 1-based");
    p10 += k <= 10;
    mr += k;
    ap += 1.0 / k;
    top1 += k == 1;
    top5 += k <= 5;
  }
  const double n = static_cast<double>(ranks.size());
  r.p_at_10 = p10 / (10.0 * n);
  r.mr1 = mr / n;
  r.map = ap / n;
  r.top1_rate = top1 / n;
  r.top5_rate = top5 / n;
  r.num_queries = static_cast<int>(ranks.size());
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& q : r.per_query)
    per.push_back({{"query_id", q.query_id},
                   {"song_id", q.song_id},
                   {"rank", q.rank},
                   {"top_track_id", q.top_track_id},
                   {"top_score", q.top_score}});
  return {{"p_at_10", r.p_at_10}, {"mr1", r.mr1},     {"map", r.map},
          {"top1_rate", r.top1_rate}, {"top5_rate", r.top5_rate}, {"num_queries", r.num_queries},
          {"per_query", per},     {"excluded", r.excluded}};
}

MetricsReport evaluate(const QueryScorer& scorer, const std::vector<Query>& queries) {
  const auto& db = scorer.db();
  std::vector<int> ranks;
  std::vector<QueryOutcome> outcomes;
  std::vector<std::string> excluded;
  for (const auto& q : queries) {
    if (!db.has_song(q.song_id)) {
      spdlog::warn("query '{}': no reference for song '{}'; excluded", q.query_id, q.song_id);
      excluded.push_back(q.query_id);
      continue;
    }
    const auto scores = scorer.score(q.feature);
    const auto ranked = rank(q.query_id, db, scores);
    const int r = ranked.first_rank([&](const ScoredTrack& t) { return db[*db.find(t.track_id)].song_id == q.song_id; });
    ranks.push_back(r);
    outcomes.push_back({q.query_id, q.song_id, r, ranked.items[0].track_id, ranked.items[0].score});
  }
  if (ranks.empty()) throw RetrievalError("no evaluable queries (" + std::to_string(excluded.size()) + " excluded)");
  auto report = compute_metrics(ranks);
  report.per_query = std::move(outcomes);
  report.excluded = std::move(excluded);
  return report;
}

MetricsReport evaluate(const QueryScorer& scorer, const std::vector<TrackManifestEntry>& query_manifest,
                       const std::filesystem::path& cache_dir) {
  std::vector<Query> queries;
  for (const auto& e : query_manifest) {
    if (e.role == Role::kNoise) continue;
    queries.push_back({e.track_id, e.song_id, load_standardized(cache_dir, e.track_id)});
  }
  return evaluate(scorer, queries);
}

}  // namespace livesong
