#pragma once

// Scaled-down overfit experiment: 12 synthetic songs, one cover each.

#include <filesystem>
#include <random>

#include "livesong/checkpoint.h"
#include "livesong/hash.h"
#include "livesong/retrieval.h"
#include "livesong/synth.h"
#include "livesong/training.h"

namespace livesong::acceptance {

struct OverfitRun {
  DemoDataset dataset;
  std::filesystem::path cache_dir;
  std::filesystem::path checkpoint;
  TrainResult result;
  MetricsReport cover_queries;  // covers against the originals
  double final_train_loss = 0.0;
};

inline OverfitRun run_overfit(const std::filesystem::path& dir, const TrainConfig& config,
                              const ModelConfig& model_config, int songs = 12) {
  OverfitRun run;
  DemoDatasetOptions opts;
  opts.songs = songs;
  run.dataset = write_demo_dataset(dir / "data", opts);
  run.cache_dir = dir / "cache";
  std::filesystem::create_directories(run.cache_dir);

  FeatureStore store;
  std::vector<TrackManifestEntry> all = run.dataset.originals;
  all.insert(all.end(), run.dataset.covers.begin(), run.dataset.covers.end());
  for (const auto& e : all) {
    const auto raw = compute_raw_features(e, Method::kBasic);
    write_cqt(cache_path(run.cache_dir, e.track_id), raw.matrix(), false);
    store.insert(raw);
  }

  // Every song is seen in training; validation reuses the positives with a
  // frozen set of negatives.
  const auto cliques = build_cliques(all);
  const auto positives = make_positive_pairs(cliques, config.cover_cap);
  std::mt19937_64 rng(derive_seed(config.seed, {4}));
  auto val = positives;
  const auto negatives =
      sample_negative_pairs(cliques, positives.size() * static_cast<std::size_t>(config.negative_ratio), rng);
  val.insert(val.end(), negatives.begin(), negatives.end());
  const auto data = training_set_from_pairs(positives, val);

  Model model(model_config);
  TrainOptions topts;
  run.checkpoint = dir / "best.ckpt";
  topts.checkpoint_path = run.checkpoint;
  run.result = train(model, data, store, config, topts);
  run.final_train_loss = run.result.final_train_loss;

  const auto db = ReferenceDB::build(run.dataset.originals, run.cache_dir);
  const QueryScorer scorer(model, db);
  run.cover_queries = evaluate(scorer, run.dataset.covers, run.cache_dir);
  return run;
}

}  // namespace livesong::acceptance
