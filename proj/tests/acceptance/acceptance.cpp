// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "livesong/augmentation.h"
#include "livesong/loss.h"
#include "livesong/service.h"
#include "overfit.h"
#include "support/gradcheck.h"
#include "support/temp_dir.h"

using namespace livesong;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

Tensor<float> random_standardized_batch(int n, std::mt19937_64& rng) {
  std::gamma_distribution<float> g(2.0f, 0.5f);
  Tensor<float> x({n, 1, kCqtBins, kFrames});
  const std::size_t per = static_cast<std::size_t>(kCqtBins) * kFrames;
  for (int i = 0; i < n; ++i) {
    FeatureMatrix m(kCqtBins, kFrames);
    for (auto& v : m.values) v = g(rng);
    const auto s = standardize(m);
    std::copy(s.values.begin(), s.values.end(), x.values().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return x;
}

Outcome shape_contract() {
  const auto t0 = Clock::now();
  const Model model(ModelConfig::reference(), 1);
  const std::array<int, kNumLevels> widths = {194, 93, 43, 37};
  const std::array<int, kNumLevels> flat = {32768, 2048, 1024, 1024};
  std::mt19937_64 rng(11);
  bool ok = true;
  std::string bad;
  // 20 inputs: ten pairs in two batches of five.
  for (int batch = 0; batch < 2; ++batch) {
    const auto x1 = random_standardized_batch(5, rng), x2 = random_standardized_batch(5, rng);
    const auto seq = model.branch_forward(x1);
    for (int k = 0; k < kNumLevels; ++k)
      if (seq.levels[k].dim(2) != widths[k]) {
        ok = false;
        bad += " width" + std::to_string(k + 1) + "=" + std::to_string(seq.levels[k].dim(2));
      }
    ForwardOptions<float> fo;
    fo.csm_observer = [&](int level, const Tensor<float>& csm) {
      if (csm.dim(2) != widths[level] || csm.dim(3) != widths[level]) {
        ok = false;
        bad += " csm" + std::to_string(level + 1);
      }
    };
    ForwardTape<float> tape;
    model.forward(x1, x2, fo, &tape);
    const auto sizes = tape.flattened_sizes();
    for (int k = 0; k < kNumLevels; ++k)
      if (sizes[k] != flat[k]) {
        ok = false;
        bad += " flat" + std::to_string(k + 1) + "=" + std::to_string(sizes[k]);
      }
  }
  const double t = seconds_since(t0);
  const bool fast = t < 10.0;
  return {ok && fast, "widths (194,93,43,37), CSMs 194^2..37^2, flat (32768,2048,1024,1024) over 20 inputs" +
                          (ok ? std::string() : " MISMATCH:" + bad) + "; " + fmt(t, 3) + " s (limit 10 s)"};
}

Outcome csm_algebra() {
  // Hand example: A columns (1,0),(0,1); B columns (1,0),(1,1).
  DeepSequences<double> a, b;
  for (int k = 0; k < kNumLevels; ++k) {
    a.levels[k] = Tensor<double>({1, 2, 2});
    b.levels[k] = Tensor<double>({1, 2, 2});
    auto& A = a.levels[k];
    auto& B = b.levels[k];
    A[0] = 1, A[1] = 0, A[2] = 0, A[3] = 1;
    B[0] = 1, B[1] = 1, B[2] = 0, B[3] = 1;
  }
  const auto hand = compute_csms(a, b);
  bool hand_ok = true;
  for (int k = 0; k < kNumLevels; ++k)
    hand_ok = hand_ok && hand[k][0] == 0 && hand[k][1] == 1 && hand[k][2] == 2 && hand[k][3] == 1;

  // Deep sequences of real inputs through the compact network.
  const Model model(ModelConfig::compact(), 3);
  std::mt19937_64 rng(12);
  const auto sa = model.branch_forward(random_standardized_batch(3, rng));
  const auto sb = model.branch_forward(random_standardized_batch(3, rng));
  const auto self = compute_csms(sa, sa), ab = compute_csms(sa, sb), ba = compute_csms(sb, sa);
  double max_diag = 0, min_value = 0, max_transpose = 0;
  for (int k = 0; k < kNumLevels; ++k) {
    const int n = self[k].dim(0), t = self[k].dim(2);
    for (int p = 0; p < n; ++p)
      for (int i = 0; i < t; ++i) {
        const std::size_t base = static_cast<std::size_t>(p) * t * t;
        max_diag = std::max(max_diag, static_cast<double>(std::abs(self[k][base + i * t + i])));
        for (int j = 0; j < t; ++j) {
          min_value = std::min({min_value, static_cast<double>(ab[k][base + i * t + j]),
                                static_cast<double>(self[k][base + i * t + j])});
          max_transpose = std::max(max_transpose, static_cast<double>(std::abs(ab[k][base + i * t + j] -
                                                                               ba[k][base + j * t + i])));
        }
      }
  }
  const bool ok = hand_ok && max_diag <= 1e-5 && min_value >= 0 && max_transpose <= 1e-6;
  return {ok, std::string("hand example ") + (hand_ok ? "exact" : "WRONG") + "; max |C(i,i)| " + fmt(max_diag) +
                  " (<= 1e-5); min entry " + fmt(min_value) + " (>= 0); max |C(A,B) - C(B,A)^T| " +
                  fmt(max_transpose) + " (<= 1e-6)"};
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  const auto r = test_support::gradient_check(ModelConfig::tiny(), 7);
  const double t = seconds_since(t0);
  return {r.max_rel_error <= 1e-3 && t < 120.0,
          "max relative error " + fmt(r.max_rel_error, 3) + " over " + std::to_string(r.checked) +
              " parameters (worst " + r.worst_parameter + ", <= 1e-3); " + fmt(t, 3) + " s (limit 120 s)"};
}

double generic_average_precision(const std::vector<bool>& relevant) {
  double hits = 0, sum = 0;
  for (std::size_t i = 0; i < relevant.size(); ++i)
    if (relevant[i]) sum += ++hits / static_cast<double>(i + 1);
  return hits == 0 ? 0 : sum / hits;
}

Outcome metric_oracle() {
  const auto a = compute_metrics(std::vector<int>{1, 2, 4});
  const auto b = compute_metrics(std::vector<int>{11});
  const auto c = compute_metrics(std::vector<int>{1, 1, 1});
  bool ok = std::abs(a.map - 0.583333333333) <= 1e-9 && std::abs(a.mr1 - 2.333333333333) <= 1e-9 &&
            std::abs(a.p_at_10 - 0.1) <= 1e-12;
  ok = ok && std::abs(b.map - 1.0 / 11.0) <= 1e-12 && b.p_at_10 == 0.0 && b.mr1 == 11.0;
  ok = ok && std::abs(c.p_at_10 - 0.100) <= 1e-12 && c.mr1 == 1.0 && c.map == 1.0;
  std::mt19937_64 rng(13);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 500)(rng);
    const int r = std::uniform_int_distribution<int>(1, n)(rng);
    std::vector<bool> rel(static_cast<std::size_t>(n), false);
    rel[static_cast<std::size_t>(r - 1)] = true;
    if (compute_metrics(std::vector<int>{r}).map != generic_average_precision(rel)) ++mismatches;
  }
  return {ok && mismatches == 0, "[1,2,4] -> MAP " + fmt(a.map, 9) + ", MR1 " + fmt(a.mr1, 9) + ", P@10 " +
                                     fmt(a.p_at_10) + "; [11] -> MAP " + fmt(b.map) + ", P@10 " + fmt(b.p_at_10) +
                                     "; all-1 -> (" + fmt(c.p_at_10) + ", " + fmt(c.mr1) + ", " + fmt(c.map) +
                                     "); generic AP mismatches " + std::to_string(mismatches) + "/1000"};
}

Outcome loss_oracle() {
  const double l1 = bce_loss(0.5, 1), l2 = bce_loss(0.9, 0);
  bool finite = true;
  for (double s : {0.0, 1.0})
    for (int y : {0, 1}) finite = finite && std::isfinite(bce_loss(s, y));
  const bool ok = std::abs(l1 - std::log(2.0)) <= 1e-9 && std::abs(l2 - 2.302585) <= 1e-6 && finite;
  return {ok, "bce(0.5,1) " + fmt(l1, 12) + "; bce(0.9,0) " + fmt(l2, 9) + "; scores {0,1} " +
                  (finite ? "finite" : "NON-FINITE")};
}

Outcome augmentation_arithmetic() {
  std::mt19937_64 rng(14);
  std::gamma_distribution<float> g(2.0f, 0.5f);
  FeatureMatrix song(kCqtBins, kFrames), noise(kCqtBins, 900);
  for (auto& v : song.values) v = g(rng);
  for (auto& v : noise.values) v = g(rng);
  auto bank = std::make_shared<NoiseBank>(std::vector<FeatureMatrix>{noise}, std::vector<std::string>{"crowd"},
                                          std::vector<double>{900 * kHopSeconds});

  MixParams p;
  p.apply = true;
  p.gain_db = -6.0;
  p.delay_s = 0.0;
  p.noise_offset_frames = 37;
  const auto mixed = mix_magnitudes(song, *bank, p);
  // 0.501187 is 10^(-6/20) printed to six decimals; the comparison uses the
  // exact value and the printed one is checked separately.
  const double gain = std::pow(10.0, -6.0 / 20.0);
  const bool printed_gain = std::abs(gain - 0.501187) < 5e-7;
  double worst = 0;
  for (int r = 0; r < kCqtBins; ++r)
    for (int t = 0; t < kFrames; ++t) {
      const double diff = mixed.at(r, t) - song.at(r, t);
      worst = std::max(worst, std::abs(diff - gain * noise.at(r, t + 37)));
    }

  p.delay_s = 117.0;
  p.noise_offset_frames = 0;
  const auto late = mix_magnitudes(song, *bank, p);
  int first_changed = kFrames, changed = 0;
  for (int t = 0; t < kFrames; ++t) {
    bool any = false;
    for (int r = 0; r < kCqtBins; ++r) any = any || late.at(r, t) != song.at(r, t);
    if (any) {
      ++changed;
      first_changed = std::min(first_changed, t);
    }
  }

  MixPolicy policy;
  policy.master_seed = 99;
  const EpochAugmenter val(bank, policy, Split::kVal);
  const CQSpectrogram raw(song, "x", false, Method::kCrowd);
  bool stable = true;
  const auto ref = val.augment(raw, 1, 5, 0);
  for (std::uint64_t epoch = 2; epoch <= 10; ++epoch) {
    const auto again = val.augment(raw, epoch, 5, 0);
    stable = stable && std::equal(ref.values().begin(), ref.values().end(), again.values().begin());
  }

  int applied = 0;
  for (std::uint64_t item = 0; item < 10000; ++item) {
    std::mt19937_64 r(mix_seed(policy, 1, item, 0));
    applied += sample_mix_params(policy, *bank, r).apply;
  }
  const double rate = applied / 10000.0;
  const bool ok = printed_gain && worst <= 1e-6 && changed == kFrames - delay_frames(117.0) && changed <= 11 &&
                  first_changed >= kFrames - 11 && stable && rate >= 0.47 && rate <= 0.53;
  return {ok, "-6 dB gain " + fmt(gain, 9) + (printed_gain ? " (= 0.501187)" : " (!= 0.501187)") +
                  ", max deviation " + fmt(worst, 3) + " (<= 1e-6); 117 s delay changes " + std::to_string(changed) +
                  " frames from " + std::to_string(first_changed) + "; validation mix " +
                  (stable ? "bit-stable" : "UNSTABLE") + " over 10 epochs; apply rate " + fmt(rate, 4) +
                  " in [0.47, 0.53]"};
}

Outcome determinism_and_round_trip(const std::filesystem::path& work) {
  std::mt19937_64 rng(15);
  std::gamma_distribution<float> g(2.0f, 0.5f);
  FeatureStore store;
  std::vector<SongClique> cliques;
  for (int s = 0; s < 4; ++s) {
    FeatureMatrix base(kCqtBins, kFrames);
    for (auto& v : base.values) v = g(rng);
    SongClique c{"s" + std::to_string(s), {}};
    for (int v = 0; v < 2; ++v) {
      FeatureMatrix m = base;
      for (auto& x : m.values) x = std::max(0.0f, x + 0.3f * (g(rng) - 1.0f));
      const std::string id = c.song_id + "_v" + std::to_string(v);
      store.insert(id, m);
      c.track_ids.push_back(id);
    }
    cliques.push_back(c);
  }
  const auto positives = make_positive_pairs(cliques);
  std::mt19937_64 nrng(derive_seed(21, {4}));
  auto val = positives;
  const auto negatives = sample_negative_pairs(cliques, 3 * positives.size(), nrng);
  val.insert(val.end(), negatives.begin(), negatives.end());
  const auto data = training_set_from_pairs(positives, val);
  TrainConfig config;
  config.seed = 21;
  config.max_epochs = 3;

  Model m1(ModelConfig::compact(), 2), m2(ModelConfig::compact(), 2);
  const auto r1 = train(m1, data, store, config), r2 = train(m2, data, store, config);
  double stats_dev = r1.stats.size() == r2.stats.size() ? 0.0 : 1.0;
  for (std::size_t i = 0; i < std::min(r1.stats.size(), r2.stats.size()); ++i)
    stats_dev = std::max({stats_dev, std::abs(r1.stats[i].train_loss - r2.stats[i].train_loss),
                          std::abs(r1.stats[i].val_loss - r2.stats[i].val_loss),
                          std::abs(r1.stats[i].lr - r2.stats[i].lr)});

  save_checkpoint(m1, {}, work / "round_trip.ckpt");
  const auto loaded = load_checkpoint(work / "round_trip.ckpt", ModelConfig::compact());
  const auto x1 = random_standardized_batch(10, rng), x2 = random_standardized_batch(10, rng);
  const auto a = m1.forward(x1, x2), b = loaded.model.forward(x1, x2);
  double score_dev = 0;
  for (int i = 0; i < 10; ++i) score_dev = std::max(score_dev, static_cast<double>(std::abs(a.scores[i] - b.scores[i])));
  return {stats_dev <= 1e-6 && score_dev <= 1e-7,
          "EpochStats deviation " + fmt(stats_dev, 3) + " over " + std::to_string(r1.stats.size()) +
              " epochs (<= 1e-6); checkpoint score deviation " + fmt(score_dev, 3) + " over 10 pairs (<= 1e-7)"};
}

struct OverfitState {
  std::optional<acceptance::OverfitRun> run;
  double seconds = 0;
};

Outcome overfit_smoke(const std::filesystem::path& work, OverfitState& state) {
  const auto t0 = Clock::now();
  TrainConfig config;  // batch 8, lr 0.001, 50 epochs, 1:3 negatives
  config.seed = 1;
  state.run = acceptance::run_overfit(work / "overfit", config, ModelConfig::compact());
  state.seconds = seconds_since(t0);
  const auto& r = *state.run;
  const int top1 = static_cast<int>(std::lround(r.cover_queries.top1_rate * r.cover_queries.num_queries));
  const bool ok = r.final_train_loss < 0.1 && r.cover_queries.map >= 0.9 && top1 >= 10 &&
                  r.cover_queries.num_queries == 12;
  return {ok, "final train loss " + fmt(r.final_train_loss, 4) + " (< 0.1); cover->original MAP " +
                  fmt(r.cover_queries.map, 4) + " (>= 0.9); top-1 " + std::to_string(top1) + "/" +
                  std::to_string(r.cover_queries.num_queries) + " (>= 10); " + std::to_string(r.result.stats.size()) +
                  " epochs, best " + std::to_string(r.result.best_epoch) + "; " + fmt(state.seconds, 4) +
                  " s (compact config)"};
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

std::optional<std::string> run_command(const std::string& cmd) {
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) return std::nullopt;
  std::string out;
  char buf[4096];
  while (const std::size_t n = fread(buf, 1, sizeof buf, pipe.get())) out.append(buf, n);
  if (pclose(pipe.release()) != 0) return std::nullopt;
  return out;
}

Outcome self_retrieval(const OverfitState& state, const std::string& cli_path) {
  if (!state.run) return {false, "overfit model unavailable"};
  const auto& r = *state.run;
  ServiceOptions so;
  so.threads = 2;
  const auto service = Service::open(r.checkpoint, r.dataset.reference_manifest, r.cache_dir, so);
  HttpServer server(*service);
  const int port = server.bind("127.0.0.1", 0);
  std::thread loop([&] { server.listen(); });
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(300, 0);

  int cli_rank1 = 0, http_identical = 0;
  std::string failures;
  for (const auto& original : r.dataset.originals) {
    const auto out = run_command(quote(cli_path) + " --log-level warn identify --checkpoint " +
                                 quote(r.checkpoint.string()) + " --db " +
                                 quote(r.dataset.reference_manifest.string()) + " --cache-dir " +
                                 quote(r.cache_dir.string()) + " --audio " + quote(original.path.string()) +
                                 " --top-k 12 --format json");
    if (!out) {
      failures += " " + original.track_id + "(cli error)";
      continue;
    }
    const auto cli_json = nlohmann::json::parse(*out);
    if (cli_json["results"][0]["track_id"] == original.track_id)
      ++cli_rank1;
    else
      failures += " " + original.track_id + "->" + cli_json["results"][0]["track_id"].get<std::string>();

    std::ifstream in(original.path, std::ios::binary);
    const std::string wav{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    const auto res = client.Post("/identify?top_k=12", wav, "audio/wav");
    if (!res || res->status != 200) {
      failures += " " + original.track_id + "(http error)";
      continue;
    }
    const auto http_json = nlohmann::json::parse(res->body);
    if (http_json["results"] == cli_json["results"]) ++http_identical;
  }
  server.stop();
  loop.join();
  const int n = static_cast<int>(r.dataset.originals.size());
  return {cli_rank1 == n && http_identical == n,
          "CLI identify self at rank 1 for " + std::to_string(cli_rank1) + "/" + std::to_string(n) +
              "; HTTP ranking identical for " + std::to_string(http_identical) + "/" + std::to_string(n) +
              (failures.empty() ? "" : "; failures:" + failures)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string cli_path;
  std::vector<int> only;
  app.add_option("--cli", cli_path, "Path of the livesong executable")->required();
  app.add_option("--only", only, "Run only these criteria (1-9)");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  test_support::TempDir work;
  OverfitState overfit;
  const std::set<int> selected(only.begin(), only.end());
  const auto wanted = [&](int n) { return selected.empty() || selected.count(n) > 0; };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"shape contract", shape_contract},
      {"CSM algebra", csm_algebra},
      {"gradient check (tiny config)", gradient_check},
      {"metric oracle", metric_oracle},
      {"loss oracle", loss_oracle},
      {"overfit smoke experiment", [&] { return overfit_smoke(work.path(), overfit); }},
      {"augmentation arithmetic", augmentation_arithmetic},
      {"determinism and checkpoint round-trip", [&] { return determinism_and_round_trip(work.path()); }},
      {"end-to-end self-retrieval", [&] {
         if (!overfit.run) overfit_smoke(work.path(), overfit);
         return self_retrieval(overfit, cli_path);
       }}};

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wanted(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << n << ". " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
