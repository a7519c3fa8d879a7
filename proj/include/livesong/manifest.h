#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace livesong {

enum class Role { kReference, kCover, kLiveQuery, kNoise };

std::string_view to_string(Role role);
Role parse_role(std::string_view name);

/// Analysis window selection.
enum class Method { kBasic, kChorus, kCrowd };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

struct TrackManifestEntry {
  std::string track_id;
  std::string song_id;  // empty for noise
  std::filesystem::path path;
  Role role = Role::kReference;
  std::optional<double> chorus_start_s;
  std::optional<double> duration_s;
  // Free-form display fields (e.g. "title") carried through to responses.
  nlohmann::json metadata = nlohmann::json::object();
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One JSON object per line. Relative paths resolve against `base_dir`.
/// Throws ManifestError with the line number on malformed input, duplicate
/// track ids, noise entries carrying a song_id, or other entries lacking one.
std::vector<TrackManifestEntry> parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {});
std::vector<TrackManifestEntry> read_manifest(const std::filesystem::path& path);

nlohmann::json to_json(const TrackManifestEntry& entry);
void write_manifest(const std::filesystem::path& path, const std::vector<TrackManifestEntry>& entries);

/// Start of the 120 s analysis window in seconds. basic/crowd: 0. chorus: the
/// annotated chorus start when a full window remains after it, otherwise the
/// last two minutes (max(0, duration - 120)); 0 without an annotation.
double resolve_start(const TrackManifestEntry& entry, Method method);

}  // namespace livesong
