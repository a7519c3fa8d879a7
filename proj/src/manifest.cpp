#include "livesong/manifest.h"

#include <fstream>
#include <set>
#include <sstream>

#include "livesong/audio.h"

namespace livesong {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kReference: return "reference";
    case Role::kCover: return "cover";
    case Role::kLiveQuery: return "live_query";
    case Role::kNoise: return "noise";
  }
  return "?";
}

Role parse_role(std::string_view name) {
  if (name == "reference") return Role::kReference;
  if (name == "cover") return Role::kCover;
  if (name == "live_query") return Role::kLiveQuery;
  if (name == "noise") return Role::kNoise;
  throw ManifestError("unknown role '" + std::string(name) + "'");
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::kBasic: return "basic";
    case Method::kChorus: return "chorus";
    case Method::kCrowd: return "crowd";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  if (name == "basic") return Method::kBasic;
  if (name == "chorus") return Method::kChorus;
  if (name == "crowd") return Method::kCrowd;
  throw std::invalid_argument("unknown method '" + std::string(name) + "' (expected basic, chorus or crowd)");
}

std::vector<TrackManifestEntry> parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<TrackManifestEntry> entries;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fail = [&](const std::string& why) {
      return ManifestError("manifest line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw fail("expected a JSON object");
    TrackManifestEntry e;
    try {
      e.track_id = j.at("track_id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      e.role = parse_role(j.at("role").get<std::string>());
      if (j.contains("song_id") && !j["song_id"].is_null()) e.song_id = j["song_id"].get<std::string>();
      if (j.contains("chorus_start_s") && !j["chorus_start_s"].is_null())
        e.chorus_start_s = j["chorus_start_s"].get<double>();
      if (j.contains("duration_s") && !j["duration_s"].is_null()) e.duration_s = j["duration_s"].get<double>();
    } catch (const nlohmann::json::exception& ex) {
      throw fail(ex.what());
    } catch (const ManifestError& ex) {
      throw fail(ex.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      static const std::set<std::string> known{"track_id", "song_id", "path", "role", "chorus_start_s", "duration_s"};
      if (!known.count(it.key())) e.metadata[it.key()] = it.value();
    }
    if (e.track_id.empty()) throw fail("empty track_id");
    if (!seen.insert(e.track_id).second) throw fail("duplicate track_id '" + e.track_id + "'");
    if (e.role == Role::kNoise && !e.song_id.empty()) throw fail("noise entry '" + e.track_id + "' has a song_id");
    if (e.role != Role::kNoise && e.song_id.empty()) throw fail("entry '" + e.track_id + "' lacks a song_id");
    if (e.chorus_start_s && *e.chorus_start_s < 0) throw fail("negative chorus_start_s");
    if (e.duration_s && *e.duration_s < 0) throw fail("negative duration_s");
    if (e.path.is_relative() && !base_dir.empty()) e.path = base_dir / e.path;
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<TrackManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), path.parent_path());
}

nlohmann::json to_json(const TrackManifestEntry& e) {
  nlohmann::json j = e.metadata;
  j["track_id"] = e.track_id;
  if (!e.song_id.empty()) j["song_id"] = e.song_id;
  j["path"] = e.path.generic_string();
  j["role"] = to_string(e.role);
  if (e.chorus_start_s) j["chorus_start_s"] = *e.chorus_start_s;
  if (e.duration_s) j["duration_s"] = *e.duration_s;
  return j;
}

void write_manifest(const std::filesystem::path& path, const std::vector<TrackManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  for (const auto& e : entries) out << to_json(e).dump() << '\n';
}

double resolve_start(const TrackManifestEntry& entry, Method method) {
  if (method != Method::kChorus || !entry.chorus_start_s) return 0.0;
  const double chorus = *entry.chorus_start_s;
  if (!entry.duration_s) return chorus;
  const double duration = *entry.duration_s;
  if (duration - chorus >= kWindowSeconds) return chorus;
  return std::max(0.0, duration - kWindowSeconds);
}

}  // namespace livesong
