#include "livesong/checkpoint.h"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "livesong/hash.h"

namespace livesong {

namespace {

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

}  // namespace

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["config"] = to_json(model.config());
  manifest["config_hash"] = architecture_hash(model.config());
  manifest["meta"] = {{"epoch", meta.epoch}, {"val_loss", meta.val_loss}, {"seeds", meta.seeds}, {"extra", meta.extra}};
  nlohmann::json params = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name},
                      {"shape", p.value.shape()},
                      {"dtype", "float32"},
                      {"offset", offset},
                      {"trainable", p.trainable}});
    offset += p.value.size() * 4;
  }
  manifest["parameters"] = params;
  manifest["blob_bytes"] = offset;

  const std::string json = manifest.dump();
  std::string bytes = "LSCK";
  put_le(bytes, kCheckpointVersion, 4);
  put_le(bytes, json.size(), 8);
  bytes += json;
  bytes.reserve(bytes.size() + offset);
  for (const auto& p : model.parameters()) {
    for (float v : p.value.values()) {
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      put_le(bytes, u, 4);
    }
  }

  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) { return CheckpointError("checkpoint '" + path.string() + "': " + why); };
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 16 || bytes.compare(0, 4, "LSCK") != 0) throw fail("not a checkpoint file");
  const auto version = get_le(raw + 4, 4);
  if (version != kCheckpointVersion) throw fail("unsupported format version " + std::to_string(version));
  const auto json_len = get_le(raw + 8, 8);
  if (json_len > bytes.size() - 16) throw fail("truncated manifest");

  nlohmann::json manifest;
  ModelConfig config;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, json_len));
    config = model_config_from_json(manifest.at("config"));
  } catch (const std::exception& e) {
    throw fail(std::string("malformed manifest: ") + e.what());
  }
  if (manifest.value("config_hash", "") != architecture_hash(config)) throw fail("config hash does not match its config");
  if (expected && architecture_hash(*expected) != architecture_hash(config)) {
    std::string msg = "config mismatch; differing keys:";
    for (const auto& d : config_diff(*expected, config)) msg += "\n  " + d;
    throw fail(msg);
  }

  const std::size_t blob_start = 16 + json_len;
  Model model(config, 0);
  const auto& entries = manifest.at("parameters");
  if (entries.size() != model.parameters().size()) throw fail("parameter count mismatch");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = model.parameters()[i];
    const auto& e = entries[i];
    if (e.at("name").get<std::string>() != p.name) throw fail("unexpected parameter '" + e.at("name").get<std::string>() + "'");
    if (e.at("shape").get<std::vector<int>>() != p.value.shape()) throw fail("shape mismatch for '" + p.name + "'");
    if (e.value("dtype", "") != "float32") throw fail("unsupported dtype for '" + p.name + "'");
    const std::size_t off = blob_start + e.at("offset").get<std::size_t>();
    if (off + p.value.size() * 4 > bytes.size()) throw fail("truncated blob for '" + p.name + "'");
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const auto u = static_cast<std::uint32_t>(get_le(raw + off + 4 * k, 4));
      std::memcpy(&p.value[k], &u, 4);
    }
  }

  CheckpointMeta meta;
  const auto& m = manifest.at("meta");
  meta.epoch = m.value("epoch", 0);
  meta.val_loss = m.value("val_loss", 0.0);
  meta.seeds = m.value("seeds", nlohmann::json::object());
  meta.extra = m.value("extra", nlohmann::json::object());
  return {std::move(model), std::move(meta), hex(fnv1a64(std::string_view(bytes)))};
}

}  // namespace livesong
