#include "livesong/model_config.h"

#include <cstdio>
#include <sstream>

#include "livesong/hash.h"

namespace livesong {

ModelConfig ModelConfig::reference() {
  ModelConfig c;
  c.branch = {BranchBlockConfig{32, 12, 13, 2, 2}, BranchBlockConfig{64, 7, 9, 2, 2},
              BranchBlockConfig{128, 5, 7, 2, 2}, BranchBlockConfig{128, 3, 7, 1, 1}};
  c.head[0] = {{32, 3, true}, {64, 3, true}, {128, 3, true}};
  c.head[1] = {{32, 3, true}, {64, 3, true}};
  c.level_grid = {16, 4, 4, 4};
  c.expected_widths = std::array<int, kNumLevels>{194, 93, 43, 37};
  c.expected_flat = std::array<int, kNumLevels>{32768, 2048, 1024, 1024};
  return c;
}

ModelConfig ModelConfig::compact() {
  ModelConfig c = reference();
  c.branch[0].channels = 8;
  c.branch[1].channels = 16;
  c.branch[2].channels = 16;
  c.branch[3].channels = 16;
  c.head[0] = {{4, 3, true}, {8, 3, true}, {8, 3, true}};
  c.head[1] = {{4, 3, true}, {8, 3, true}};
  c.expected_flat.reset();
  c.dropout = 0.1;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.input_bins = 8;
  c.input_frames = 32;
  c.branch = {BranchBlockConfig{2, 3, 5, 2, 2}, BranchBlockConfig{2, 2, 3, 1, 2}, BranchBlockConfig{2, 1, 3, 1, 1},
              BranchBlockConfig{2, 1, 3, 1, 1}};
  c.head[0] = {{2, 3, true}};
  c.head[1] = {{2, 3, false}};
  c.level_grid = {2, 2, 2, 2};
  c.expected_widths = std::array<int, kNumLevels>{14, 6, 4, 2};
  c.expected_flat = std::array<int, kNumLevels>{8, 8, 8, 8};
  c.dropout = 0.0;
  return c;
}

namespace {

[[noreturn]] void fail(const std::string& what) { throw ConfigError("invalid model config: " + what); }

}  // namespace

ShapeReport validate(const ModelConfig& config) {
  ShapeReport r;
  if (config.input_bins < 1 || config.input_frames < 1) fail("input shape must be positive");
  if (config.dropout < 0.0 || config.dropout >= 1.0) fail("dropout must lie in [0, 1)");

  int h = config.input_bins, w = config.input_frames;
  for (int k = 0; k < kNumLevels; ++k) {
    const auto& b = config.branch[k];
    const std::string name = "branch block " + std::to_string(k + 1);
    if (b.channels < 1) fail(name + " channels must be positive");
    if (b.kernel_h < 1 || b.kernel_w < 1 || b.pool_h < 1 || b.pool_w < 1)
      fail(name + " kernel and pool sizes must be positive");
    h = h - b.kernel_h + 1;
    w = w - b.kernel_w + 1;
    if (h < 1 || w < 1) fail(name + " kernel larger than its input");
    h /= b.pool_h;
    w /= b.pool_w;
    if (h < 1 || w < 1) fail(name + " pool larger than its input");
    r.channels[k] = b.channels;
    r.heights[k] = h;
    r.widths[k] = w;
    if (config.expected_widths && w != (*config.expected_widths)[k]) {
      fail("T" + std::to_string(k + 1) + " = " + std::to_string(w) + ", expected " +
           std::to_string((*config.expected_widths)[k]));
    }
  }

  for (int g = 0; g < 2; ++g) {
    if (config.head[g].empty()) fail("head group " + std::to_string(g) + " has no conv blocks");
    for (const auto& hb : config.head[g]) {
      if (hb.channels < 1) fail("head channels must be positive");
      if (hb.kernel < 1 || hb.kernel % 2 == 0) fail("head kernels must be odd and positive");
    }
  }

  for (int k = 0; k < kNumLevels; ++k) {
    const auto& blocks = config.head[ModelConfig::head_group(k)];
    int side = r.widths[k];
    for (const auto& hb : blocks) {
      if (hb.pool) side /= 2;
      if (side < 1) fail("head for level " + std::to_string(k + 1) + " pools below one pixel");
    }
    if (config.level_grid[k] < 1) fail("level grid must be positive");
    r.head_side[k] = side;
    r.flat[k] = blocks.back().channels * config.level_grid[k] * config.level_grid[k];
    if (config.expected_flat && r.flat[k] != (*config.expected_flat)[k]) {
      fail("flattened head size for level " + std::to_string(k + 1) + " = " + std::to_string(r.flat[k]) +
           ", expected " + std::to_string((*config.expected_flat)[k]));
    }
  }
  return r;
}

std::string describe(const ShapeReport& r) {
  std::ostringstream os;
  for (int k = 0; k < kNumLevels; ++k) {
    os << "level " << k + 1 << ": N=" << r.channels[k] << " H=" << r.heights[k] << " T=" << r.widths[k]
       << " CSM=" << r.widths[k] << "x" << r.widths[k] << " flat=" << r.flat[k] << "\n";
  }
  return os.str();
}

namespace {

nlohmann::json architecture_json(const ModelConfig& c) {
  nlohmann::json j;
  j["input_bins"] = c.input_bins;
  j["input_frames"] = c.input_frames;
  j["branch"] = nlohmann::json::array();
  for (const auto& b : c.branch) {
    j["branch"].push_back({{"channels", b.channels},
                           {"kernel_h", b.kernel_h},
                           {"kernel_w", b.kernel_w},
                           {"pool_h", b.pool_h},
                           {"pool_w", b.pool_w}});
  }
  j["head"] = nlohmann::json::array();
  for (const auto& group : c.head) {
    nlohmann::json g = nlohmann::json::array();
    for (const auto& hb : group) g.push_back({{"channels", hb.channels}, {"kernel", hb.kernel}, {"pool", hb.pool}});
    j["head"].push_back(g);
  }
  j["level_grid"] = c.level_grid;
  j["dropout"] = c.dropout;
  j["share_head_weights"] = c.share_head_weights;
  j["head_batch_norm"] = c.head_batch_norm;
  j["hidden_activation"] = c.hidden_activation == HiddenActivation::kRelu ? "relu" : "identity";
  return j;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j = architecture_json(c);
  j["expected_widths"] = c.expected_widths ? nlohmann::json(*c.expected_widths) : nlohmann::json(nullptr);
  j["expected_flat"] = c.expected_flat ? nlohmann::json(*c.expected_flat) : nlohmann::json(nullptr);
  j["init_seed"] = c.init_seed;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    if (j.contains("preset")) {
      const auto preset = j.at("preset").get<std::string>();
      if (preset == "reference") c = ModelConfig::reference();
      else if (preset == "compact") c = ModelConfig::compact();
      else if (preset == "tiny") c = ModelConfig::tiny();
      else fail("unknown preset '" + preset + "'");
    }
    c.input_bins = j.value("input_bins", c.input_bins);
    c.input_frames = j.value("input_frames", c.input_frames);
    if (j.contains("branch")) {
      const auto& arr = j.at("branch");
      if (arr.size() != kNumLevels) fail("branch must list exactly 4 blocks");
      for (int k = 0; k < kNumLevels; ++k) {
        const auto& b = arr.at(k);
        c.branch[k] = {b.at("channels").get<int>(), b.at("kernel_h").get<int>(), b.at("kernel_w").get<int>(),
                       b.at("pool_h").get<int>(), b.at("pool_w").get<int>()};
      }
    }
    if (j.contains("head")) {
      const auto& arr = j.at("head");
      if (arr.size() != 2) fail("head must list exactly 2 groups");
      for (int g = 0; g < 2; ++g) {
        c.head[g].clear();
        for (const auto& hb : arr.at(g))
          c.head[g].push_back({hb.at("channels").get<int>(), hb.at("kernel").get<int>(), hb.at("pool").get<bool>()});
      }
    }
    if (j.contains("level_grid")) c.level_grid = j.at("level_grid").get<std::array<int, kNumLevels>>();
    c.dropout = j.value("dropout", c.dropout);
    c.share_head_weights = j.value("share_head_weights", c.share_head_weights);
    c.head_batch_norm = j.value("head_batch_norm", c.head_batch_norm);
    if (j.contains("hidden_activation")) {
      const auto act = j.at("hidden_activation").get<std::string>();
      if (act == "relu") c.hidden_activation = HiddenActivation::kRelu;
      else if (act == "identity") c.hidden_activation = HiddenActivation::kIdentity;
      else fail("unknown hidden_activation '" + act + "'");
    }
    if (j.contains("expected_widths")) {
      if (j.at("expected_widths").is_null()) c.expected_widths.reset();
      else c.expected_widths = j.at("expected_widths").get<std::array<int, kNumLevels>>();
    }
    if (j.contains("expected_flat")) {
      if (j.at("expected_flat").is_null()) c.expected_flat.reset();
      else c.expected_flat = j.at("expected_flat").get<std::array<int, kNumLevels>>();
    }
    c.init_seed = j.value("init_seed", c.init_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

std::string architecture_hash(const ModelConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(architecture_json(config).dump())));
  return buf;
}

std::vector<std::string> config_diff(const ModelConfig& a, const ModelConfig& b) {
  const auto ja = architecture_json(a), jb = architecture_json(b);
  std::vector<std::string> out;
  for (const auto& op : nlohmann::json::diff(ja, jb)) {
    const auto path = op.at("path").get<std::string>();
    const auto ptr = nlohmann::json::json_pointer(path);
    const std::string lhs = ja.contains(ptr) ? ja.at(ptr).dump() : "<absent>";
    const std::string rhs = jb.contains(ptr) ? jb.at(ptr).dump() : "<absent>";
    out.push_back(path + ": " + lhs + " != " + rhs);
  }
  return out;
}

}  // namespace livesong
