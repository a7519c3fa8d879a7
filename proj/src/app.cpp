#include "livesong/app.h"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "livesong/audio.h"
#include "livesong/checkpoint.h"
#include "livesong/features.h"
#include "livesong/retrieval.h"
#include "livesong/service.h"
#include "livesong/synth.h"

namespace livesong {

namespace {

const std::set<std::string> kConfigKeys = {
    "manifest", "db_manifest", "query_manifest", "noise_manifest", "cache_dir",  "out_dir",
    "checkpoint", "train_pairs", "val_pairs",   "method",         "model",      "train",
    "mix_policy", "port",        "max_payload_bytes", "service_threads"};

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

// A cache file is reusable when it is complete, has the expected shape and
// is at least as new as its audio.
bool cache_up_to_date(const std::filesystem::path& cqt, const TrackManifestEntry& entry) {
  std::error_code ec;
  if (!std::filesystem::exists(cqt, ec)) return false;
  const auto audio_time = std::filesystem::last_write_time(entry.path, ec);
  if (ec) return false;
  if (std::filesystem::last_write_time(cqt, ec) < audio_time || ec) return false;
  std::ifstream in(cqt, std::ios::binary);
  unsigned char h[16];
  if (!in.read(reinterpret_cast<char*>(h), 16) || std::string(reinterpret_cast<char*>(h), 4) != "CQT1") return false;
  const auto u32 = [&](int off) {
    return static_cast<std::uint64_t>(h[off]) | static_cast<std::uint64_t>(h[off + 1]) << 8 |
           static_cast<std::uint64_t>(h[off + 2]) << 16 | static_cast<std::uint64_t>(h[off + 3]) << 24;
  };
  const std::uint64_t rows = u32(4), cols = u32(8), flags = u32(12);
  if (flags & kCqtFlagStandardized) return false;
  if (rows != kCqtBins) return false;
  if (entry.role != Role::kNoise && cols != static_cast<std::uint64_t>(kFrames)) return false;
  return std::filesystem::file_size(cqt, ec) == 16 + 4 * rows * cols && !ec;
}

std::string method_names() { return "basic, chorus or crowd"; }

Method parse_method_flag(const std::string& name) {
  try {
    return parse_method(name);
  } catch (const std::exception&) {
    throw UsageError("unknown method '" + name + "' (expected " + method_names() + ")");
  }
}

}  // namespace

AppConfig app_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!kConfigKeys.count(key)) throw UsageError("unknown config key '" + key + "'");
  AppConfig c;
  c.source = j;
  try {
    const auto path = [&](const char* key) { return resolve(j.value(key, std::string()), base_dir); };
    c.manifest = path("manifest");
    c.db_manifest = path("db_manifest");
    c.query_manifest = path("query_manifest");
    c.noise_manifest = path("noise_manifest");
    c.cache_dir = path("cache_dir");
    c.out_dir = path("out_dir");
    c.checkpoint = path("checkpoint");
    c.train_pairs = path("train_pairs");
    c.val_pairs = path("val_pairs");
    if (j.contains("method")) c.method = parse_method_flag(j.at("method").get<std::string>());
    if (j.contains("model")) {
      const auto& m = j.at("model");
      if (m.is_string()) {
        c.model_preset = m.get<std::string>();
        if (c.model_preset == "reference")
          c.model = ModelConfig::reference();
        else if (c.model_preset == "compact")
          c.model = ModelConfig::compact();
        else
          throw UsageError("unknown model preset '" + c.model_preset + "' (expected reference or compact)");
      } else {
        c.model_preset = "custom";
        c.model = model_config_from_json(m);
      }
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("mix_policy")) c.mix_policy = mix_policy_from_json(j.at("mix_policy"));
    c.port = j.value("port", c.port);
    c.max_payload_bytes = j.value("max_payload_bytes", c.max_payload_bytes);
    c.service_threads = j.value("service_threads", c.service_threads);
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) throw UsageError("port out of range");
  if (c.service_threads < 1) throw UsageError("service_threads must be at least 1");
  return c;
}

AppConfig load_app_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw UsageError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return app_config_from_json(j, path.parent_path());
}

nlohmann::json to_json(const AppConfig& c) {
  nlohmann::json j = {{"manifest", c.manifest.string()},
                      {"db_manifest", c.db_manifest.string()},
                      {"query_manifest", c.query_manifest.string()},
                      {"noise_manifest", c.noise_manifest.string()},
                      {"cache_dir", c.cache_dir.string()},
                      {"out_dir", c.out_dir.string()},
                      {"checkpoint", c.checkpoint.string()},
                      {"train_pairs", c.train_pairs.string()},
                      {"val_pairs", c.val_pairs.string()},
                      {"method", std::string(to_string(c.method))},
                      {"train", to_json(c.train)},
                      {"mix_policy", to_json(c.mix_policy)},
                      {"port", c.port},
                      {"max_payload_bytes", c.max_payload_bytes},
                      {"service_threads", c.service_threads}};
  if (c.model_preset == "custom")
    j["model"] = to_json(c.model);
  else
    j["model"] = c.model_preset;
  return j;
}

std::optional<std::filesystem::path> resolve_config_path(const std::filesystem::path& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  if (const char* env = std::getenv("LIVESONG_CONFIG"); env && *env) return std::filesystem::path(env);
  return std::nullopt;
}

nlohmann::json to_json(const ExtractReport& r) {
  nlohmann::json failed = nlohmann::json::array();
  for (const auto& [id, why] : r.failed) failed.push_back({{"track_id", id}, {"error", why}});
  return {{"written", r.written},
          {"skipped", r.skipped},
          {"failed", failed},
          {"counts", {{"written", r.written.size()}, {"skipped", r.skipped.size()}, {"failed", r.failed.size()}}}};
}

ExtractReport extract_features_to_cache(const ExtractOptions& options) {
  std::vector<TrackManifestEntry> entries;
  try {
    entries = read_manifest(options.manifest);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  std::filesystem::create_directories(options.out_dir);
  enum class Outcome { kWritten, kSkipped, kFailed };
  std::vector<Outcome> outcome(entries.size());
  std::vector<std::string> reason(entries.size());

#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto out = cache_path(options.out_dir, e.track_id);
    try {
      if (cache_up_to_date(out, e)) {
        outcome[i] = Outcome::kSkipped;
        continue;
      }
      if (e.role == Role::kNoise)
        write_cqt(out, cqt_magnitudes(load_audio(e.path, e.track_id).samples), false);
      else
        write_cqt(out, compute_raw_features(e, options.method).matrix(), false);
      outcome[i] = Outcome::kWritten;
    } catch (const std::exception& ex) {
      outcome[i] = Outcome::kFailed;
      reason[i] = ex.what();
    }
  }

  ExtractReport report;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    switch (outcome[i]) {
      case Outcome::kWritten: report.written.push_back(entries[i].track_id); break;
      case Outcome::kSkipped: report.skipped.push_back(entries[i].track_id); break;
      case Outcome::kFailed:
        spdlog::error("{}: {}", entries[i].track_id, reason[i]);
        report.failed.emplace_back(entries[i].track_id, reason[i]);
        break;
    }
  }
  return report;
}

nlohmann::json build_pairs(const BuildPairsOptions& o) {
  std::vector<TrackManifestEntry> entries;
  try {
    entries = read_manifest(o.manifest);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  TrainConfig tc;
  tc.seed = o.seed;
  tc.cover_cap = o.cap;
  tc.split_ratio = o.ratio;
  tc.negative_ratio = o.negative_ratio;
  validate(tc);
  const auto cliques = build_cliques(entries);
  const auto positives = make_positive_pairs(cliques, o.cap);
  const auto split = split_by_song(positives, o.ratio, o.seed);
  const auto set = build_training_set(cliques, tc);

  std::filesystem::create_directories(o.out_dir);
  write_pairs(o.out_dir / "train_pairs.jsonl", set.train_positives);
  write_pairs(o.out_dir / "val_pairs.jsonl", set.val_pairs);
  std::size_t tracks = 0;
  for (const auto& c : cliques) tracks += c.track_ids.size();
  const std::size_t val_pos = split.val.size();
  const nlohmann::json stats = {
      {"seed", o.seed},
      {"cap", o.cap},
      {"ratio", o.ratio},
      {"negative_ratio", o.negative_ratio},
      {"num_songs", cliques.size()},
      {"num_tracks", tracks},
      {"positive_pairs", positives.size()},
      {"train_pairs", set.train_positives.size()},
      {"val_positive_pairs", val_pos},
      {"val_negative_pairs", set.val_pairs.size() - val_pos},
      {"train_songs", split.train_songs.size()},
      {"val_songs", split.val_songs.size()},
      {"train_fraction", static_cast<double>(split.train.size()) / static_cast<double>(positives.size())}};
  write_json_file(o.out_dir / "stats.json", stats);
  return stats;
}

TrainCommandResult run_training(const AppConfig& config) {
  if (config.out_dir.empty()) throw UsageError("training needs out_dir");
  if (config.cache_dir.empty()) throw UsageError("training needs cache_dir");
  std::filesystem::create_directories(config.out_dir);

  TrainCommandResult out;
  out.checkpoint = config.checkpoint.empty() ? config.out_dir / "best.ckpt" : config.checkpoint;
  out.log = config.out_dir / "train_log.jsonl";
  out.config_echo = config.out_dir / "config.json";

  nlohmann::json echo = to_json(config);
  echo.merge_patch(config.source);
  write_json_file(out.config_echo, echo);

  std::vector<TrackManifestEntry> manifest;
  if (!config.manifest.empty()) manifest = read_manifest(config.manifest);
  TrainingSet data;
  if (!config.train_pairs.empty() || !config.val_pairs.empty()) {
    if (config.train_pairs.empty() || config.val_pairs.empty())
      throw UsageError("train_pairs and val_pairs must be given together");
    data = training_set_from_pairs(read_pairs(config.train_pairs), read_pairs(config.val_pairs));
  } else {
    if (manifest.empty()) throw UsageError("training needs a manifest or pair files");
    data = build_training_set(build_cliques(manifest), config.train);
  }

  std::set<std::string> ids;
  for (const auto& p : data.train_positives) ids.insert({p.track_id_1, p.track_id_2});
  for (const auto& c : data.train_cliques) ids.insert(c.track_ids.begin(), c.track_ids.end());
  for (const auto& p : data.val_pairs) ids.insert({p.track_id_1, p.track_id_2});
  const auto store = FeatureStore::load(config.cache_dir, {ids.begin(), ids.end()});

  TrainOptions options;
  options.checkpoint_path = out.checkpoint;
  options.checkpoint_extra = {{"method", std::string(to_string(config.method))}};
  if (config.method == Method::kCrowd) {
    auto noise_entries = config.noise_manifest.empty() ? manifest : read_manifest(config.noise_manifest);
    std::erase_if(noise_entries, [](const TrackManifestEntry& e) { return e.role != Role::kNoise; });
    options.noise_bank = std::make_shared<NoiseBank>(load_noise_bank(noise_entries, config.cache_dir));
    options.mix_policy = config.mix_policy;
  }
  std::ofstream log(out.log, std::ios::trunc);
  if (!log) throw UsageError("cannot write '" + out.log.string() + "'");
  options.on_epoch = [&log](const EpochStats& s) { log << to_json(s).dump() << '\n' << std::flush; };

  Model model(config.model);
  try {
    out.result = train(model, data, store, config.train, options);
  } catch (...) {
    auto partial = out.checkpoint;
    partial += ".partial";
    std::error_code ec;
    std::filesystem::remove(partial, ec);
    throw;
  }
  return out;
}

namespace {

struct CommonFlags {
  std::string config;
};

AppConfig config_or_default(const std::string& flag) {
  const auto path = resolve_config_path(flag);
  return path ? load_app_config(*path) : AppConfig{};
}

template <typename T>
void require(const T& value, const char* what) {
  if (value.empty()) throw UsageError(std::string("missing ") + what);
}

std::string format_table(const IdentifyResponse& r) {
  std::ostringstream s;
  s << "query " << r.query_id << " against " << r.db_size << " references (checkpoint " << r.checkpoint_id << ")\n";
  s << std::left << std::setw(6) << "rank" << std::setw(12) << "score" << std::setw(24) << "track_id" << std::setw(16)
    << "song_id" << "title\n";
  for (const auto& m : r.results)
    s << std::left << std::setw(6) << m.rank << std::setw(12) << std::fixed << std::setprecision(6) << m.score
      << std::setw(24) << m.track_id << std::setw(16) << m.song_id << m.title << '\n';
  return s.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Live song identification: features, training, evaluation and serving.", "livesong"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  // extract-features
  std::string x_config, x_manifest, x_out, x_method;
  auto* extract = app.add_subcommand("extract-features", "Compute raw CQT features for a manifest into a cache");
  extract->add_option("--config", x_config, "Config file (default $LIVESONG_CONFIG)");
  extract->add_option("--manifest", x_manifest, "Track manifest (JSON lines)");
  extract->add_option("--out-dir", x_out, "Feature cache directory");
  extract->add_option("--method", x_method, "basic, chorus or crowd");

  // build-pairs
  std::string p_config, p_manifest, p_out;
  std::optional<std::uint64_t> p_seed;
  std::optional<int> p_cap, p_neg;
  std::optional<double> p_ratio;
  auto* pairs = app.add_subcommand("build-pairs", "Build song-disjoint train/validation pair lists");
  pairs->add_option("--config", p_config, "Config file (default $LIVESONG_CONFIG)");
  pairs->add_option("--manifest", p_manifest, "Track manifest");
  pairs->add_option("--out", p_out, "Output directory");
  pairs->add_option("--seed", p_seed, "Split and sampling seed");
  pairs->add_option("--cap", p_cap, "Maximum versions per song");
  pairs->add_option("--ratio", p_ratio, "Training share of the positive pairs");
  pairs->add_option("--negative-ratio", p_neg, "Validation negatives per positive");

  // train
  std::string t_config, t_out;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", t_config, "Config file (default $LIVESONG_CONFIG)");
  train_cmd->add_option("--out-dir", t_out, "Overrides out_dir");

  // evaluate
  std::string e_config, e_ckpt, e_db, e_queries, e_cache, e_out;
  auto* eval = app.add_subcommand("evaluate", "P@10, MR1 and MAP of a query set against a reference DB");
  eval->add_option("--config", e_config, "Config file (default $LIVESONG_CONFIG)");
  eval->add_option("--checkpoint", e_ckpt, "Model checkpoint");
  eval->add_option("--db-manifest", e_db, "Reference manifest");
  eval->add_option("--query-manifest", e_queries, "Query manifest");
  eval->add_option("--cache-dir", e_cache, "Feature cache directory");
  eval->add_option("--out", e_out, "Also write the metrics JSON here");

  // identify
  std::string i_config, i_ckpt, i_db, i_cache, i_audio, i_format = "text";
  int i_top_k = 10;
  std::optional<double> i_chorus;
  auto* identify = app.add_subcommand("identify", "Rank the reference DB against one recording");
  identify->add_option("--config", i_config, "Config file (default $LIVESONG_CONFIG)");
  identify->add_option("--checkpoint", i_ckpt, "Model checkpoint");
  identify->add_option("--db", i_db, "Reference manifest");
  identify->add_option("--cache-dir", i_cache, "Feature cache of the references");
  identify->add_option("--audio", i_audio, "Query WAV file")->required();
  identify->add_option("--top-k", i_top_k, "Number of rows to print")->check(CLI::PositiveNumber);
  identify->add_option("--chorus-start", i_chorus, "Window start in seconds (default 0)");
  identify->add_option("--format", i_format, "text or json")->check(CLI::IsMember({"text", "json"}));

  // serve
  std::string s_config, s_ckpt, s_db, s_cache, s_host = "127.0.0.1";
  std::optional<int> s_port, s_threads;
  std::optional<double> s_max_mb;
  auto* serve = app.add_subcommand("serve", "HTTP identification service");
  serve->add_option("--config", s_config, "Config file (default $LIVESONG_CONFIG)");
  serve->add_option("--checkpoint", s_ckpt, "Model checkpoint");
  serve->add_option("--db", s_db, "Reference manifest");
  serve->add_option("--cache-dir", s_cache, "Feature cache of the references");
  serve->add_option("--host", s_host, "Bind address");
  serve->add_option("--port", s_port, "Port (0 picks a free one)");
  serve->add_option("--threads", s_threads, "Worker threads");
  serve->add_option("--max-payload-mb", s_max_mb, "Request size cap in MB");

  // synth-demo
  std::string d_out;
  DemoDatasetOptions d_opts;
  auto* demo = app.add_subcommand("synth-demo", "Write a synthetic song/cover dataset with manifests");
  demo->add_option("--out-dir", d_out, "Output directory")->required();
  demo->add_option("--songs", d_opts.songs, "Number of songs")->check(CLI::PositiveNumber);
  demo->add_option("--noise-tracks", d_opts.noise_tracks, "Crowd-noise recordings to add");
  demo->add_option("--seconds", d_opts.seconds, "Length of the originals");
  demo->add_option("--seed", d_opts.seed, "Noise seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << e.what() << '\n';
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front())
      err << sub->help();
    return kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (extract->parsed()) {
      const auto cfg = config_or_default(x_config);
      ExtractOptions o;
      o.manifest = x_manifest.empty() ? cfg.manifest : std::filesystem::path(x_manifest);
      o.out_dir = x_out.empty() ? cfg.cache_dir : std::filesystem::path(x_out);
      o.method = x_method.empty() ? cfg.method : parse_method_flag(x_method);
      require(o.manifest, "--manifest");
      require(o.out_dir, "--out-dir");
      const auto report = extract_features_to_cache(o);
      out << to_json(report).dump(2) << '\n';
      return report.failed.empty() ? kExitOk : kExitPartial;
    }
    if (pairs->parsed()) {
      const auto cfg = config_or_default(p_config);
      BuildPairsOptions o;
      o.manifest = p_manifest.empty() ? cfg.manifest : std::filesystem::path(p_manifest);
      o.out_dir = p_out.empty() ? cfg.out_dir : std::filesystem::path(p_out);
      o.seed = p_seed.value_or(cfg.train.seed);
      o.cap = p_cap.value_or(cfg.train.cover_cap);
      o.ratio = p_ratio.value_or(cfg.train.split_ratio);
      o.negative_ratio = p_neg.value_or(cfg.train.negative_ratio);
      require(o.manifest, "--manifest");
      require(o.out_dir, "--out");
      out << build_pairs(o).dump(2) << '\n';
      return kExitOk;
    }
    if (train_cmd->parsed()) {
      const auto path = resolve_config_path(t_config);
      if (!path) throw UsageError("train needs --config or LIVESONG_CONFIG");
      auto cfg = load_app_config(*path);
      if (!t_out.empty()) cfg.out_dir = t_out;
      const auto r = run_training(cfg);
      out << nlohmann::json{{"checkpoint", r.checkpoint.string()},
                            {"log", r.log.string()},
                            {"config", r.config_echo.string()},
                            {"epochs", r.result.stats.size()},
                            {"best_epoch", r.result.best_epoch},
                            {"best_val_loss", r.result.best_val_loss},
                            {"final_train_loss", r.result.final_train_loss}}
                 .dump(2)
          << '\n';
      return kExitOk;
    }
    if (eval->parsed()) {
      const auto cfg = config_or_default(e_config);
      const std::filesystem::path ckpt = e_ckpt.empty() ? cfg.checkpoint : std::filesystem::path(e_ckpt);
      const std::filesystem::path db_m = e_db.empty() ? cfg.db_manifest : std::filesystem::path(e_db);
      const std::filesystem::path q_m = e_queries.empty() ? cfg.query_manifest : std::filesystem::path(e_queries);
      const std::filesystem::path cache = e_cache.empty() ? cfg.cache_dir : std::filesystem::path(e_cache);
      require(ckpt, "--checkpoint");
      require(db_m, "--db-manifest");
      require(q_m, "--query-manifest");
      require(cache, "--cache-dir");
      const auto loaded = load_checkpoint(ckpt);
      const auto db = ReferenceDB::build(read_manifest(db_m), cache);
      const QueryScorer scorer(loaded.model, db);
      auto report = to_json(evaluate(scorer, read_manifest(q_m), cache));
      report["checkpoint_id"] = loaded.id;
      std::filesystem::path dest = e_out;
      if (dest.empty() && !cfg.out_dir.empty()) dest = cfg.out_dir / "metrics.json";
      if (!dest.empty()) write_json_file(dest, report);
      out << report.dump(2) << '\n';
      return kExitOk;
    }
    if (identify->parsed()) {
      const auto cfg = config_or_default(i_config);
      const std::filesystem::path ckpt = i_ckpt.empty() ? cfg.checkpoint : std::filesystem::path(i_ckpt);
      const std::filesystem::path db_m = i_db.empty() ? cfg.db_manifest : std::filesystem::path(i_db);
      const std::filesystem::path cache = i_cache.empty() ? cfg.cache_dir : std::filesystem::path(i_cache);
      require(ckpt, "--checkpoint");
      require(db_m, "--db");
      require(cache, "--cache-dir");
      const auto service = Service::open(ckpt, db_m, cache, ServiceOptions{1, cfg.max_payload_bytes});
      IdentifyRequest req;
      req.query_id = std::filesystem::path(i_audio).stem().string();
      req.top_k = i_top_k;
      req.chorus_start_s = i_chorus;
      const auto response = service->identify_file(i_audio, req);
      if (i_format == "json")
        out << to_json(response).dump(2) << '\n';
      else
        out << format_table(response);
      return kExitOk;
    }
    if (serve->parsed()) {
      const auto cfg = config_or_default(s_config);
      const std::filesystem::path ckpt = s_ckpt.empty() ? cfg.checkpoint : std::filesystem::path(s_ckpt);
      const std::filesystem::path db_m = s_db.empty() ? cfg.db_manifest : std::filesystem::path(s_db);
      const std::filesystem::path cache = s_cache.empty() ? cfg.cache_dir : std::filesystem::path(s_cache);
      require(ckpt, "--checkpoint");
      require(db_m, "--db");
      require(cache, "--cache-dir");
      ServiceOptions so;
      so.threads = s_threads.value_or(cfg.service_threads);
      so.max_payload_bytes = s_max_mb ? static_cast<std::size_t>(*s_max_mb * 1024 * 1024) : cfg.max_payload_bytes;
      const auto service = Service::open(ckpt, db_m, cache, so);
      HttpServer server(*service);
      const int port = server.bind(s_host, s_port.value_or(cfg.port));
      spdlog::info("serving {} references on http://{}:{}", service->db().size(), s_host, port);
      out << nlohmann::json{{"host", s_host}, {"port", port}}.dump() << '\n' << std::flush;
      server.listen();
      return kExitOk;
    }
    if (demo->parsed()) {
      const auto ds = write_demo_dataset(d_out, d_opts);
      out << nlohmann::json{{"references", ds.reference_manifest.string()},
                            {"queries", ds.query_manifest.string()},
                            {"manifest", ds.full_manifest.string()},
                            {"songs", ds.originals.size()},
                            {"noise_tracks", ds.noise.size()}}
                 .dump(2)
          << '\n';
      return kExitOk;
    }
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << '\n';
    return kExitPartial;
  } catch (const std::exception& e) {
    // Bad input of any kind: unreadable files, invalid manifests or configs,
    // missing features, undecodable audio.
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace livesong
