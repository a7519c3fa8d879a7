#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "livesong/model_config.h"
#include "livesong/tensor.h"

namespace livesong {

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  // Batch-norm running statistics are stored as non-trainable parameters so
  // that checkpoints carry them.
  bool trainable = true;
};

/// Multi-level deep sequences of a batch of tracks: level k is [N, N_k, T_k].
template <typename Real>
struct DeepSequences {
  std::array<Tensor<Real>, kNumLevels> levels;

  int batch() const { return levels[0].empty() ? 0 : levels[0].dim(0); }
  DeepSequences slice(int begin, int count) const;
  static DeepSequences concat(std::span<const DeepSequences> parts);
};

/// Cross-similarity matrices of a batch of pairs: level k is [B, 1, T_k, T_k].
template <typename Real>
using CSMSet = std::array<Tensor<Real>, kNumLevels>;

/// C_k(i, j) = ||a_i^k - b_j^k||^2 for every pair in the batch. Throws
/// std::invalid_argument on mismatched batch, channel or level counts.
template <typename Real>
CSMSet<Real> compute_csms(const DeepSequences<Real>& a, const DeepSequences<Real>& b);

enum class Mode { kEval, kTrain };

template <typename Real>
struct ForwardOptions {
  Mode mode = Mode::kEval;
  // Dropout masks are drawn from this seed in training mode.
  std::uint64_t dropout_seed = 0;
  // Called with each level's CSM batch as soon as it is computed.
  std::function<void(int level, const Tensor<Real>& csm)> csm_observer;
};

template <typename Real>
struct ForwardResult {
  std::vector<Real> logits;
  std::vector<Real> scores;
};

/// Activations recorded by a forward pass for the matching backward pass.
template <typename Real>
class ForwardTape {
 public:
  ForwardTape();
  ~ForwardTape();
  ForwardTape(ForwardTape&&) noexcept;
  ForwardTape& operator=(ForwardTape&&) noexcept;

  /// Fingerprint of every piecewise-linear decision in the recorded pass
  /// (ReLU masks and max-pool winners). Two passes with equal fingerprints
  /// lie on the same linear piece of the network.
  std::uint64_t activation_pattern() const;

  /// Per-level length of the flattened head output in the recorded pass.
  std::array<int, kNumLevels> flattened_sizes() const;

  struct Impl;
  Impl& impl() { return *impl_; }
  const Impl& impl() const { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

/// Siamese branch -> per-level CSMs -> two head CNNs -> per-level FC -> 4->1
/// output -> sigmoid. Immutable during inference: every forward entry point is
/// const and safe to call from concurrent threads.
template <typename Real>
class SimilarityModel {
 public:
  /// Validates the geometry (throws ConfigError) and initializes parameters
  /// deterministically from `seed`.
  SimilarityModel(const ModelConfig& config, std::uint64_t seed);
  explicit SimilarityModel(const ModelConfig& config) : SimilarityModel(config, config.init_seed) {}

  const ModelConfig& config() const { return config_; }
  const ShapeReport& shapes() const { return shapes_; }

  std::vector<Parameter<Real>>& parameters() { return params_; }
  const std::vector<Parameter<Real>>& parameters() const { return params_; }
  Parameter<Real>& parameter(std::string_view name);
  const Parameter<Real>& parameter(std::string_view name) const;

  /// Evaluation-mode branch. x: [N, 1, bins, frames].
  DeepSequences<Real> branch_forward(const Tensor<Real>& x) const;

  /// Evaluation-mode head over a batch of CSMs.
  ForwardResult<Real> similarity_head(const CSMSet<Real>& csms) const;

  /// Scores B pairs; x1, x2: [B, 1, bins, frames]. Pass a tape to record
  /// activations for backward().
  ForwardResult<Real> forward(const Tensor<Real>& x1, const Tensor<Real>& x2, const ForwardOptions<Real>& options = {},
                              ForwardTape<Real>* tape = nullptr) const;

  /// Gradients of sum_b grad_logits[b] * logit[b] w.r.t. every parameter, in
  /// parameters() order. Non-trainable entries come back as zeros.
  std::vector<Tensor<Real>> backward(const ForwardTape<Real>& tape, std::span<const Real> grad_logits) const;

  /// Folds the batch statistics of a training-mode forward into the
  /// batch-norm running estimates.
  void commit_batch_statistics(const ForwardTape<Real>& tape, double momentum = 0.1);

  /// Same config and parameter values, converted element-wise.
  template <typename Other>
  SimilarityModel<Other> converted() const {
    SimilarityModel<Other> out(config_, 0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& dst = out.parameters()[i].value;
      for (std::size_t e = 0; e < dst.size(); ++e) dst[e] = static_cast<Other>(params_[i].value[e]);
    }
    return out;
  }

 private:
  struct Slots;

  ModelConfig config_;
  ShapeReport shapes_;
  std::vector<Parameter<Real>> params_;
  std::shared_ptr<const Slots> slots_;
};

using Model = SimilarityModel<float>;

}  // namespace livesong
