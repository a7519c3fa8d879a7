#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace livesong {

constexpr int kNumLevels = 4;

/// One convolution + max-pool block of a Siamese branch. Convolutions are
/// unpadded with stride 1; the pool is non-overlapping (kernel == stride).
struct BranchBlockConfig {
  int channels = 1;
  int kernel_h = 1;  // frequency
  int kernel_w = 1;  // time
  int pool_h = 1;
  int pool_w = 1;
};

/// Size-preserving convolution (odd kernel, padding kernel/2) followed by an
/// optional 2x2 max pool.
struct HeadBlockConfig {
  int channels = 1;
  int kernel = 3;
  bool pool = true;
};

enum class HiddenActivation { kIdentity, kRelu };

struct ModelConfig {
  int input_bins = 72;
  int input_frames = 401;
  std::array<BranchBlockConfig, kNumLevels> branch{};
  // head[0] consumes levels 1 and 2, head[1] levels 3 and 4.
  std::array<std::vector<HeadBlockConfig>, 2> head{};
  // Side of the adaptive max-pool grid closing the head, per level.
  std::array<int, kNumLevels> level_grid{};
  double dropout = 0.2;
  bool share_head_weights = true;
  bool head_batch_norm = true;
  HiddenActivation hidden_activation = HiddenActivation::kIdentity;
  // When set, construction fails unless the geometry reproduces these.
  std::optional<std::array<int, kNumLevels>> expected_widths;
  std::optional<std::array<int, kNumLevels>> expected_flat;
  std::uint64_t init_seed = 0;

  /// Full-size network: widths (194, 93, 43, 37), head sizes
  /// (32768, 2048, 1024, 1024).
  static ModelConfig reference();
  /// Same geometry as reference() with narrow channels; used for desk-scale
  /// experiments.
  static ModelConfig compact();
  /// 8x32 input, two channels per block; used for gradient checks.
  static ModelConfig tiny();

  static int head_group(int level) { return level < 2 ? 0 : 1; }
};

struct ShapeReport {
  std::array<int, kNumLevels> channels{};  // N_k
  std::array<int, kNumLevels> heights{};   // H_k before the frequency max
  std::array<int, kNumLevels> widths{};    // T_k
  std::array<int, kNumLevels> head_side{};  // CSM side entering the adaptive pool
  std::array<int, kNumLevels> flat{};      // flattened head size per level
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Propagates shapes symbolically through the network. Throws ConfigError
/// naming the first violated constraint.
ShapeReport validate(const ModelConfig& config);

std::string describe(const ShapeReport& report);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Hash of the architecture (everything except the init seed). Two configs
/// with equal hashes accept each other's checkpoints.
std::string architecture_hash(const ModelConfig& config);

/// Human-readable list of differing architecture keys.
std::vector<std::string> config_diff(const ModelConfig& a, const ModelConfig& b);

}  // namespace livesong
