#include "livesong/service.h"

#include <algorithm>
#include <fstream>
#include <iterator>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "livesong/audio.h"

namespace livesong {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

nlohmann::json error_body(const std::string& reason, const std::string& detail) {
  return {{"error", reason}, {"detail", detail}};
}

}  // namespace

nlohmann::json to_json(const IdentifyResponse& r) {
  nlohmann::json results = nlohmann::json::array();
  for (const auto& m : r.results)
    results.push_back(
        {{"rank", m.rank}, {"track_id", m.track_id}, {"song_id", m.song_id}, {"title", m.title}, {"score", m.score}});
  return {{"query_id", r.query_id},
          {"results", results},
          {"checkpoint_id", r.checkpoint_id},
          {"db_size", r.db_size},
          {"timing_ms", {{"decode", r.decode_ms}, {"features", r.features_ms}, {"scoring", r.scoring_ms}}}};
}

Service::Service(LoadedCheckpoint checkpoint, ReferenceDB db, ServiceOptions options)
    : model_(std::make_unique<Model>(std::move(checkpoint.model))),
      db_(std::make_unique<ReferenceDB>(std::move(db))),
      checkpoint_id_(std::move(checkpoint.id)),
      options_(options) {
  if (options_.threads < 1) throw std::invalid_argument("service needs at least one worker thread");
  scorer_ = std::make_unique<QueryScorer>(*model_, *db_);
}

std::unique_ptr<Service> Service::open(const std::filesystem::path& checkpoint,
                                       const std::filesystem::path& db_manifest,
                                       const std::filesystem::path& cache_dir, ServiceOptions options) {
  auto ckpt = load_checkpoint(checkpoint);
  auto db = ReferenceDB::build(read_manifest(db_manifest), cache_dir);
  return std::make_unique<Service>(std::move(ckpt), std::move(db), options);
}

IdentifyResponse Service::identify_wav(std::span<const std::uint8_t> wav_bytes, const IdentifyRequest& request) const {
  if (request.top_k < 1) throw QueryError("invalid_top_k", "top_k must be at least 1");
  if (wav_bytes.empty()) throw QueryError("empty_payload", "request carries no audio");
  IdentifyResponse response;
  response.query_id = request.query_id;
  response.checkpoint_id = checkpoint_id_;
  response.db_size = db_->size();

  auto t0 = Clock::now();
  AudioClip clip;
  try {
    clip = normalize_audio(decode_wav(wav_bytes, request.query_id), request.query_id);
  } catch (const std::exception& e) {
    throw QueryError("malformed_audio", e.what());
  }
  response.decode_ms = ms_since(t0);

  t0 = Clock::now();
  const double start = request.chorus_start_s.value_or(0.0);
  if (start < 0.0 || start > clip.duration_s())
    throw QueryError("invalid_chorus_start", "chorus start lies outside the query audio");
  CQSpectrogram raw = compute_cqt(select_segment(clip, start), Method::kBasic);
  const CQSpectrogram query = standardize(
      CQSpectrogram(raw.matrix(), request.query_id, false, request.chorus_start_s ? Method::kChorus : Method::kBasic));
  response.features_ms = ms_since(t0);

  t0 = Clock::now();
  const auto ranked = rank(request.query_id, *db_, scorer_->score(query));
  response.scoring_ms = ms_since(t0);

  const std::size_t k = std::min(ranked.items.size(), static_cast<std::size_t>(request.top_k));
  for (std::size_t i = 0; i < k; ++i) {
    const auto& entry = (*db_)[*db_->find(ranked.items[i].track_id)];
    response.results.push_back({static_cast<int>(i) + 1, entry.track_id, entry.song_id,
                                entry.metadata.value("title", std::string()), ranked.items[i].score});
  }
  return response;
}

IdentifyResponse Service::identify_file(const std::filesystem::path& audio, const IdentifyRequest& request) const {
  std::ifstream in(audio, std::ios::binary);
  if (!in) throw QueryError("unreadable_audio", "cannot open '" + audio.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return identify_wav(bytes, request);
}

nlohmann::json Service::health() const {
  return {{"status", "ok"},
          {"db_size", db_->size()},
          {"checkpoint_id", checkpoint_id_},
          {"architecture", architecture_hash(model_->config())}};
}

struct HttpServer::Impl {
  explicit Impl(const Service& s) : service(s) {}
  const Service& service;
  httplib::Server server;
};

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& svr = impl_->server;
  const int threads = service.options().threads;
  svr.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  svr.set_payload_max_length(service.options().max_payload_bytes);

  svr.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(impl_->service.health().dump(), "application/json");
  });

  svr.Post("/identify", [this](const httplib::Request& req, httplib::Response& res) {
    const auto reply = [&](int status, const nlohmann::json& body) {
      res.status = status;
      res.set_content(body.dump(), "application/json");
    };
    IdentifyRequest request;
    try {
      if (req.has_param("top_k")) request.top_k = std::stoi(req.get_param_value("top_k"));
      if (req.has_param("chorus_start")) request.chorus_start_s = std::stod(req.get_param_value("chorus_start"));
      if (req.has_param("query_id")) request.query_id = req.get_param_value("query_id");
    } catch (const std::exception&) {
      return reply(400, error_body("invalid_parameter", "top_k and chorus_start must be numbers"));
    }
    const std::string* payload = &req.body;
    std::string part;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("audio"))
        return reply(400, error_body("missing_audio_field", "multipart body has no 'audio' field"));
      part = req.get_file_value("audio").content;
      payload = &part;
    }
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(payload->data());
    try {
      const auto response = impl_->service.identify_wav({bytes, payload->size()}, request);
      reply(200, to_json(response));
    } catch (const QueryError& e) {
      reply(400, error_body(e.reason(), e.what()));
    } catch (const std::exception& e) {
      spdlog::error("identify failed: {}", e.what());
      reply(500, error_body("internal_error", e.what()));
    }
  });

  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    std::string reason = "http_error";
    if (res.status == 413) reason = "payload_too_large";
    if (res.status == 404) reason = "not_found";
    if (res.status == 400) reason = "bad_request";
    res.set_content(error_body(reason, httplib::status_message(res.status)).dump(), "application/json");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& svr = impl_->server;
  if (port == 0) {
    const int bound = svr.bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("cannot bind " + host);
    return bound;
  }
  if (!svr.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace livesong
