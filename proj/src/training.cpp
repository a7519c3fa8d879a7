#include "livesong/training.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "livesong/checkpoint.h"
#include "livesong/hash.h"
#include "livesong/optim.h"

namespace livesong {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kTagNegatives = 1;
constexpr std::uint64_t kTagShuffle = 2;
constexpr std::uint64_t kTagDropout = 3;
constexpr std::uint64_t kTagValNegatives = 4;
constexpr std::uint64_t kTagMix = 5;

TrackPair ordered_pair(const std::string& a, const std::string& sa, const std::string& b, const std::string& sb,
                       int label) {
  if (b < a) return {b, a, label, sb, sa};
  return {a, b, label, sa, sb};
}

std::uint64_t pair_item(const TrackPair& p) { return fnv1a64(p.track_id_1 + '\n' + p.track_id_2); }

const CQSpectrogram& model_input(const TrackPair& pair, int side, int epoch, const FeatureStore& features,
                                 const EpochAugmenter* augmenter, CQSpectrogram& scratch) {
  const std::string& id = side == 0 ? pair.track_id_1 : pair.track_id_2;
  if (!augmenter) return features.standardized(id);
  scratch = augmenter->augment(features.raw(id), static_cast<std::uint64_t>(epoch), pair_item(pair), side);
  return scratch;
}

// Stacks one side of pairs[begin, end) into [B, 1, 72, 401].
Tensor<float> stack_inputs(const std::vector<const TrackPair*>& batch, int side, int epoch,
                           const FeatureStore& features, const EpochAugmenter* augmenter) {
  const int b = static_cast<int>(batch.size());
  Tensor<float> x({b, 1, kCqtBins, kFrames});
  const std::size_t plane = static_cast<std::size_t>(kCqtBins) * kFrames;
  CQSpectrogram scratch;
  for (int i = 0; i < b; ++i) {
    const auto& spec = model_input(*batch[i], side, epoch, features, augmenter, scratch);
    std::copy(spec.values().begin(), spec.values().end(), x.data() + i * plane);
  }
  return x;
}

void check_finite_config(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("invalid training config: " + what);
}

}  // namespace

std::vector<SongClique> build_cliques(const std::vector<TrackManifestEntry>& manifest) {
  std::map<std::string, std::vector<std::string>> groups;
  std::set<std::string> seen;
  for (const auto& e : manifest) {
    if (!seen.insert(e.track_id).second) throw ManifestError("duplicate track_id '" + e.track_id + "'");
    if (e.role == Role::kNoise) continue;
    groups[e.song_id].push_back(e.track_id);
  }
  std::vector<SongClique> out;
  out.reserve(groups.size());
  for (auto& [song, tracks] : groups) {
    std::sort(tracks.begin(), tracks.end());
    out.push_back({song, std::move(tracks)});
  }
  return out;
}

nlohmann::json to_json(const TrackPair& p) {
  return {{"track_id_1", p.track_id_1},
          {"track_id_2", p.track_id_2},
          {"label", p.label},
          {"song_id_1", p.song_id_1},
          {"song_id_2", p.song_id_2}};
}

TrackPair track_pair_from_json(const nlohmann::json& j) {
  TrackPair p{j.at("track_id_1").get<std::string>(), j.at("track_id_2").get<std::string>(), j.at("label").get<int>(),
              j.at("song_id_1").get<std::string>(), j.at("song_id_2").get<std::string>()};
  if (p.label != 0 && p.label != 1) throw std::invalid_argument("pair label must be 0 or 1");
  if (p.track_id_1 == p.track_id_2) throw std::invalid_argument("pair joins track '" + p.track_id_1 + "' to itself");
  if ((p.label == 1) != (p.song_id_1 == p.song_id_2))
    throw std::invalid_argument("pair " + p.track_id_1 + "/" + p.track_id_2 + ": label contradicts song ids");
  return p;
}

void write_pairs(const std::filesystem::path& path, const std::vector<TrackPair>& pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  for (const auto& p : pairs) out << to_json(p).dump() << '\n';
}

std::vector<TrackPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pairs file '" + path.string() + "'");
  std::vector<TrackPair> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      pairs.push_back(track_pair_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

std::vector<TrackPair> make_positive_pairs(const std::vector<SongClique>& cliques, int cap) {
  if (cap < 2) throw std::invalid_argument("cover cap must be at least 2");
  std::vector<TrackPair> out;
  for (const auto& c : cliques) {
    auto ids = c.track_ids;
    std::sort(ids.begin(), ids.end());
    ids.resize(std::min(ids.size(), static_cast<std::size_t>(cap)));
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = i + 1; j < ids.size(); ++j) out.push_back({ids[i], ids[j], 1, c.song_id, c.song_id});
  }
  return out;
}

PairSplit split_by_song(const std::vector<TrackPair>& pairs, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw SplitError("split ratio must lie in (0, 1)");
  std::map<std::string, std::size_t> per_song;
  for (const auto& p : pairs) {
    if (p.label != 1 || p.song_id_1 != p.song_id_2) throw SplitError("split_by_song expects positive pairs only");
    ++per_song[p.song_id_1];
  }
  if (per_song.size() < 2)
    throw SplitError("cannot split " + std::to_string(per_song.size()) + " song(s); at least 2 are required");

  std::vector<std::string> songs;
  for (const auto& [s, n] : per_song) songs.push_back(s);
  std::mt19937_64 rng(seed);
  std::shuffle(songs.begin(), songs.end(), rng);

  const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(pairs.size())));
  std::set<std::string> train_songs;
  std::size_t train_count = 0;
  for (const auto& s : songs) {
    if (train_count >= target && !train_songs.empty()) break;
    train_songs.insert(s);
    train_count += per_song[s];
  }
  if (train_songs.size() == songs.size()) train_songs.erase(songs.back());

  PairSplit split;
  for (const auto& s : songs) (train_songs.count(s) ? split.train_songs : split.val_songs).push_back(s);
  for (const auto& p : pairs) (train_songs.count(p.song_id_1) ? split.train : split.val).push_back(p);
  return split;
}

std::vector<SongClique> cliques_from_pairs(const std::vector<TrackPair>& pairs) {
  std::map<std::string, std::set<std::string>> groups;
  for (const auto& p : pairs) {
    groups[p.song_id_1].insert(p.track_id_1);
    groups[p.song_id_2].insert(p.track_id_2);
  }
  std::vector<SongClique> out;
  for (auto& [song, ids] : groups) out.push_back({song, {ids.begin(), ids.end()}});
  return out;
}

std::vector<TrackPair> sample_negative_pairs(const std::vector<SongClique>& cliques, std::size_t count,
                                             std::mt19937_64& rng) {
  struct Track {
    const std::string* id;
    const std::string* song;
  };
  std::vector<Track> tracks;
  std::size_t same_song = 0;
  for (const auto& c : cliques) {
    for (const auto& id : c.track_ids) tracks.push_back({&id, &c.song_id});
    same_song += c.track_ids.size() * c.track_ids.size();
  }
  const std::size_t available = (tracks.size() * tracks.size() - same_song) / 2;
  if (count == 0) return {};

  std::vector<TrackPair> out;
  if (count * 2 > available) {
    // Dense regime: enumerate everything and take a uniform subset.
    for (std::size_t i = 0; i < tracks.size(); ++i)
      for (std::size_t j = i + 1; j < tracks.size(); ++j)
        if (*tracks[i].song != *tracks[j].song)
          out.push_back(ordered_pair(*tracks[i].id, *tracks[i].song, *tracks[j].id, *tracks[j].song, 0));
    std::shuffle(out.begin(), out.end(), rng);
    if (count > out.size()) {
      spdlog::warn("only {} distinct negative pairs exist; requested {}", out.size(), count);
    } else {
      out.resize(count);
    }
    return out;
  }

  std::set<std::pair<std::string, std::string>> seen;
  std::uniform_int_distribution<std::size_t> pick(0, tracks.size() - 1);
  while (out.size() < count) {
    const auto& a = tracks[pick(rng)];
    const auto& b = tracks[pick(rng)];
    if (*a.song == *b.song) continue;
    TrackPair p = ordered_pair(*a.id, *a.song, *b.id, *b.song, 0);
    if (!seen.emplace(p.track_id_1, p.track_id_2).second) continue;
    out.push_back(std::move(p));
  }
  return out;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr", c.lr},
          {"scheduler_factor", c.scheduler_factor},
          {"scheduler_patience", c.scheduler_patience},
          {"max_epochs", c.max_epochs},
          {"negative_ratio", c.negative_ratio},
          {"cover_cap", c.cover_cap},
          {"split_ratio", c.split_ratio},
          {"seed", c.seed},
          {"loss_reduction", c.loss_reduction},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"bn_momentum", c.bn_momentum}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("training config must be a JSON object");
  TrainConfig c;
  const auto defaults = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!defaults.contains(it.key())) throw std::invalid_argument("unknown training config key '" + it.key() + "'");
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.scheduler_factor = j.value("scheduler_factor", c.scheduler_factor);
  c.scheduler_patience = j.value("scheduler_patience", c.scheduler_patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.negative_ratio = j.value("negative_ratio", c.negative_ratio);
  c.cover_cap = j.value("cover_cap", c.cover_cap);
  c.split_ratio = j.value("split_ratio", c.split_ratio);
  c.seed = j.value("seed", c.seed);
  c.loss_reduction = j.value("loss_reduction", c.loss_reduction);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  validate(c);
  return c;
}

void validate(const TrainConfig& c) {
  check_finite_config(c.batch_size > 0, "batch_size must be positive");
  check_finite_config(c.lr > 0, "lr must be positive");
  check_finite_config(c.scheduler_factor > 0 && c.scheduler_factor < 1, "scheduler_factor must lie in (0, 1)");
  check_finite_config(c.scheduler_patience > 0, "scheduler_patience must be positive");
  check_finite_config(c.max_epochs > 0, "max_epochs must be positive");
  check_finite_config(c.negative_ratio > 0, "negative_ratio must be positive");
  check_finite_config(c.cover_cap >= 2, "cover_cap must be at least 2");
  check_finite_config(c.split_ratio > 0 && c.split_ratio < 1, "split_ratio must lie in (0, 1)");
  check_finite_config(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1, "betas must lie in [0, 1)");
  check_finite_config(c.eps > 0, "eps must be positive");
  check_finite_config(c.bn_momentum > 0 && c.bn_momentum <= 1, "bn_momentum must lie in (0, 1]");
  parse_reduction(c.loss_reduction);
}

nlohmann::json to_json(const EpochStats& s) {
  return {{"epoch", s.epoch},
          {"train_loss", s.train_loss},
          {"val_loss", s.val_loss},
          {"lr", s.lr},
          {"wall_time_s", s.wall_time_s}};
}

ValidationResult validate(const Model& model, const std::vector<TrackPair>& pairs, const FeatureStore& features,
                          const EpochAugmenter* augmenter, Reduction reduction, int batch_size) {
  ValidationResult result;
  std::vector<int> labels;
  for (std::size_t begin = 0; begin < pairs.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(pairs.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<const TrackPair*> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&pairs[i]);
    const auto r = model.forward(stack_inputs(batch, 0, 0, features, augmenter),
                                 stack_inputs(batch, 1, 0, features, augmenter));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double s = r.scores[i];
      result.scores.push_back(s);
      labels.push_back(batch[i]->label);
      const int bin = std::clamp(static_cast<int>(s * ScoreHistogram::kBins), 0, ScoreHistogram::kBins - 1);
      ++(batch[i]->label ? result.histogram.positive : result.histogram.negative)[static_cast<std::size_t>(bin)];
    }
  }
  result.loss = bce_batch_loss(result.scores, labels, reduction);
  return result;
}

TrainingSet build_training_set(const std::vector<SongClique>& cliques, const TrainConfig& config) {
  const auto positives = make_positive_pairs(cliques, config.cover_cap);
  auto split = split_by_song(positives, config.split_ratio, config.seed);
  TrainingSet set;
  set.train_cliques = cliques_from_pairs(split.train);
  set.train_positives = std::move(split.train);
  set.val_pairs = split.val;
  std::mt19937_64 rng(derive_seed(config.seed, {kTagValNegatives}));
  const auto negatives = sample_negative_pairs(cliques_from_pairs(split.val),
                                               split.val.size() * static_cast<std::size_t>(config.negative_ratio), rng);
  set.val_pairs.insert(set.val_pairs.end(), negatives.begin(), negatives.end());
  return set;
}

TrainingSet training_set_from_pairs(std::vector<TrackPair> train_pairs, std::vector<TrackPair> val_pairs) {
  TrainingSet set;
  for (auto& p : train_pairs)
    if (p.label == 1) set.train_positives.push_back(std::move(p));
  set.train_cliques = cliques_from_pairs(set.train_positives);
  set.val_pairs = std::move(val_pairs);
  return set;
}

TrainResult train(Model& model, const TrainingSet& data, const FeatureStore& features, const TrainConfig& config,
                  const TrainOptions& options) {
  validate(config);
  if (data.train_positives.empty()) throw TrainingError("no training positives");
  if (data.val_pairs.empty()) throw TrainingError("no validation pairs");
  const Reduction reduction = parse_reduction(config.loss_reduction);

  std::unique_ptr<EpochAugmenter> train_aug, val_aug;
  if (options.noise_bank) {
    MixPolicy policy = options.mix_policy;
    policy.master_seed = derive_seed(config.seed, {kTagMix, policy.master_seed});
    train_aug = std::make_unique<EpochAugmenter>(options.noise_bank, policy, Split::kTrain);
    val_aug = std::make_unique<EpochAugmenter>(options.noise_bank, policy, Split::kVal);
  }

  AmsGrad optimizer({config.lr, config.beta1, config.beta2, config.eps});
  PlateauScheduler scheduler(config.lr, config.scheduler_factor, config.scheduler_patience);
  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<Parameter<float>> best_params;

  const std::size_t negatives_per_epoch =
      data.train_positives.size() * static_cast<std::size_t>(config.negative_ratio);
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 neg_rng(derive_seed(config.seed, {kTagNegatives, static_cast<std::uint64_t>(epoch)}));
    std::vector<TrackPair> items = data.train_positives;
    const auto negatives = sample_negative_pairs(data.train_cliques, negatives_per_epoch, neg_rng);
    items.insert(items.end(), negatives.begin(), negatives.end());
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, {kTagShuffle, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(items.begin(), items.end(), shuffle_rng);

    const double lr = optimizer.lr();
    double loss_total = 0.0;
    int batch_index = 0;
    for (std::size_t begin = 0; begin < items.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(items.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<const TrackPair*> batch;
      std::vector<int> labels;
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(&items[i]);
        labels.push_back(items[i].label);
      }
      ForwardOptions<float> fo;
      fo.mode = Mode::kTrain;
      fo.dropout_seed = derive_seed(config.seed, {kTagDropout, static_cast<std::uint64_t>(epoch),
                                                  static_cast<std::uint64_t>(batch_index)});
      ForwardTape<float> tape;
      const auto r = model.forward(stack_inputs(batch, 0, epoch, features, train_aug.get()),
                                   stack_inputs(batch, 1, epoch, features, train_aug.get()), fo, &tape);
      const std::vector<double> scores(r.scores.begin(), r.scores.end());
      const double loss = bce_batch_loss(scores, labels, reduction);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << batch_index << " (lr " << lr
            << ", pairs";
        for (const auto* p : batch) msg << ' ' << p->track_id_1 << '/' << p->track_id_2;
        msg << ')';
        throw TrainingError(msg.str());
      }
      loss_total += reduction == Reduction::kMean ? loss * static_cast<double>(batch.size()) : loss;
      const auto g64 = bce_logit_gradient(scores, labels, reduction);
      const std::vector<float> g(g64.begin(), g64.end());
      const auto grads = model.backward(tape, g);
      optimizer.step(model.parameters(), grads);
      model.commit_batch_statistics(tape, config.bn_momentum);
      ++batch_index;
    }

    const auto val = validate(model, data.val_pairs, features, val_aug.get());
    if (!std::isfinite(val.loss))
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_total / static_cast<double>(items.size());
    stats.val_loss = val.loss;
    stats.lr = lr;

    if (val.loss < result.best_val_loss) {
      result.best_val_loss = val.loss;
      result.best_epoch = epoch;
      best_params = model.parameters();
      if (!options.checkpoint_path.empty()) {
        CheckpointMeta meta;
        meta.epoch = epoch;
        meta.val_loss = val.loss;
        meta.seeds = {{"train_seed", config.seed}, {"init_seed", model.config().init_seed}};
        meta.extra = options.checkpoint_extra;
        meta.extra["train_config"] = to_json(config);
        save_checkpoint(model, meta, options.checkpoint_path);
        result.best_checkpoint = options.checkpoint_path;
      }
    }
    if (scheduler.step(val.loss)) {
      optimizer.set_lr(scheduler.lr());
      spdlog::info("epoch {}: validation loss plateaued, lr -> {:g}", epoch, scheduler.lr());
    }
    stats.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.stats.push_back(stats);
    result.final_train_loss = stats.train_loss;
    spdlog::info("epoch {}: train {:.5f} val {:.5f} lr {:g} ({:.1f} s)", epoch, stats.train_loss, stats.val_loss,
                 stats.lr, stats.wall_time_s);
    if (options.on_epoch) options.on_epoch(stats);
  }

  if (!best_params.empty()) model.parameters() = std::move(best_params);
  return result;
}

}  // namespace livesong
