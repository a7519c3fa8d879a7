#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "livesong/checkpoint.h"
#include "livesong/retrieval.h"

namespace livesong {

/// Query audio that could not be decoded or analysed (HTTP 400).
class QueryError : public std::runtime_error {
 public:
  QueryError(std::string reason, const std::string& detail)
      : std::runtime_error(detail), reason_(std::move(reason)) {}
  /// Machine-readable code, e.g. "malformed_audio".
  const std::string& reason() const { return reason_; }

 private:
  std::string reason_;
};

struct IdentifyRequest {
  std::string query_id = "query";
  int top_k = 10;
  // Analysis window start; identify always uses 0 s unless this is set.
  std::optional<double> chorus_start_s;
};

struct IdentifyMatch {
  int rank = 0;
  std::string track_id;
  std::string song_id;
  std::string title;
  double score = 0.0;
};

struct IdentifyResponse {
  std::string query_id;
  std::vector<IdentifyMatch> results;
  std::string checkpoint_id;
  std::size_t db_size = 0;
  double decode_ms = 0.0;
  double features_ms = 0.0;
  double scoring_ms = 0.0;
};

nlohmann::json to_json(const IdentifyResponse& response);

struct ServiceOptions {
  int threads = 4;
  std::size_t max_payload_bytes = 100u * 1024u * 1024u;
};

/// Identification over an immutable model and reference DB. All member
/// functions are const and may be called concurrently.
class Service {
 public:
  Service(LoadedCheckpoint checkpoint, ReferenceDB db, ServiceOptions options = {});

  /// Loads the checkpoint and every reference feature eagerly.
  static std::unique_ptr<Service> open(const std::filesystem::path& checkpoint,
                                       const std::filesystem::path& db_manifest,
                                       const std::filesystem::path& cache_dir, ServiceOptions options = {});

  /// decode -> mono 22050 Hz -> 120 s window -> CQT -> standardize -> score
  /// -> rank -> top-k. Throws QueryError on undecodable or invalid audio.
  IdentifyResponse identify_wav(std::span<const std::uint8_t> wav_bytes, const IdentifyRequest& request) const;
  IdentifyResponse identify_file(const std::filesystem::path& audio, const IdentifyRequest& request) const;

  nlohmann::json health() const;
  const ReferenceDB& db() const { return *db_; }
  const std::string& checkpoint_id() const { return checkpoint_id_; }
  const ServiceOptions& options() const { return options_; }

 private:
  std::unique_ptr<Model> model_;
  std::unique_ptr<ReferenceDB> db_;
  std::unique_ptr<QueryScorer> scorer_;
  std::string checkpoint_id_;
  ServiceOptions options_;
};

/// HTTP front end: `POST /identify` (raw WAV body or multipart field
/// "audio"; query parameters top_k, chorus_start, query_id) and
/// `GET /healthz`.
class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace livesong
