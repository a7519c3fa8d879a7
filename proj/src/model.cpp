#include "livesong/model.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "livesong/hash.h"
#include "livesong/kernels.h"

namespace livesong {

namespace kp = kernels::parallel;
using kernels::Index;

constexpr double kBatchNormEps = 1e-5;

// ---------------------------------------------------------------------------
// DeepSequences / CSMs

template <typename Real>
DeepSequences<Real> DeepSequences<Real>::slice(int begin, int count) const {
  DeepSequences out;
  for (int k = 0; k < kNumLevels; ++k) {
    const auto& src = levels[k];
    const std::size_t row = src.size() / static_cast<std::size_t>(src.dim(0));
    out.levels[k] = Tensor<Real>({count, src.dim(1), src.dim(2)});
    std::copy_n(src.data() + row * begin, row * count, out.levels[k].data());
  }
  return out;
}

template <typename Real>
DeepSequences<Real> DeepSequences<Real>::concat(std::span<const DeepSequences> parts) {
  DeepSequences out;
  if (parts.empty()) return out;
  for (int k = 0; k < kNumLevels; ++k) {
    int total = 0;
    for (const auto& p : parts) total += p.levels[k].dim(0);
    const auto& first = parts.front().levels[k];
    out.levels[k] = Tensor<Real>({total, first.dim(1), first.dim(2)});
    Real* dst = out.levels[k].data();
    for (const auto& p : parts) {
      if (p.levels[k].dim(1) != first.dim(1) || p.levels[k].dim(2) != first.dim(2))
        throw std::invalid_argument("DeepSequences::concat: level shape mismatch");
      dst = std::copy_n(p.levels[k].data(), p.levels[k].size(), dst);
    }
  }
  return out;
}

template <typename Real>
CSMSet<Real> compute_csms(const DeepSequences<Real>& a, const DeepSequences<Real>& b) {
  CSMSet<Real> out;
  for (int k = 0; k < kNumLevels; ++k) {
    const auto& ak = a.levels[k];
    const auto& bk = b.levels[k];
    if (ak.rank() != 3 || bk.rank() != 3 || ak.dim(0) != bk.dim(0) || ak.dim(1) != bk.dim(1)) {
      throw std::invalid_argument("compute_csms: level " + std::to_string(k + 1) + " shapes " +
                                  shape_string(ak.shape()) + " and " + shape_string(bk.shape()) + " are incompatible");
    }
    out[k] = Tensor<Real>({ak.dim(0), 1, ak.dim(2), bk.dim(2)});
    kp::csm_forward(ak.dim(0), ak.dim(1), ak.dim(2), bk.dim(2), ak.data(), bk.data(), out[k].data());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape

namespace {

template <typename Real>
struct BranchBlockTape {
  kernels::ConvShape conv;
  kernels::PoolShape pool;
  Tensor<Real> activation;  // ReLU(conv)
  std::vector<Index> pool_argmax;
  std::vector<Real> dropout_scale;  // empty when dropout is inactive
  Tensor<Real> output;              // pooled, after dropout
  std::vector<Index> height_argmax;
};

template <typename Real>
struct HeadBlockTape {
  kernels::ConvShape conv;
  kernels::PoolShape pool;
  bool pooled = false;
  Tensor<Real> normalized;  // batch-norm x-hat, or the raw conv output without batch norm
  std::vector<Real> inv_std;
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // unbiased
  Tensor<Real> activation;
  std::vector<Index> pool_argmax;
  Tensor<Real> output;
};

template <typename Real>
struct LevelTape {
  std::vector<HeadBlockTape<Real>> blocks;
  kernels::AdaptivePoolShape adaptive;
  std::vector<Index> adaptive_argmax;
  Tensor<Real> flat;          // [B, flat]
  std::vector<Real> hidden;   // pre-activation
  std::vector<Real> hidden_out;
};

}  // namespace

template <typename Real>
struct ForwardTape<Real>::Impl {
  Mode mode = Mode::kEval;
  int batch = 0;
  Tensor<Real> input;  // [2B, 1, bins, frames]
  std::array<BranchBlockTape<Real>, kNumLevels> branch;
  DeepSequences<Real> sequences;  // 2B rows: first B from x1, last B from x2
  CSMSet<Real> csms;
  std::array<LevelTape<Real>, kNumLevels> levels;
  std::vector<Real> logits;
};

template <typename Real>
ForwardTape<Real>::ForwardTape() : impl_(std::make_unique<Impl>()) {}
template <typename Real>
ForwardTape<Real>::~ForwardTape() = default;
template <typename Real>
ForwardTape<Real>::ForwardTape(ForwardTape&&) noexcept = default;
template <typename Real>
ForwardTape<Real>& ForwardTape<Real>::operator=(ForwardTape&&) noexcept = default;

template <typename Real>
std::array<int, kNumLevels> ForwardTape<Real>::flattened_sizes() const {
  std::array<int, kNumLevels> out{};
  for (int k = 0; k < kNumLevels; ++k) out[k] = impl_->levels[k].flat.empty() ? 0 : impl_->levels[k].flat.dim(1);
  return out;
}

namespace {

template <typename T>
void mix_indices(std::uint64_t& h, const std::vector<T>& v) {
  for (const auto& x : v) h = splitmix64(h ^ static_cast<std::uint64_t>(x));
}

template <typename Real>
void mix_mask(std::uint64_t& h, std::span<const Real> v) {
  std::uint64_t word = 0;
  int bits = 0;
  for (const Real x : v) {
    word = (word << 1) | (x > Real(0) ? 1u : 0u);
    if (++bits == 64) {
      h = splitmix64(h ^ word);
      word = 0;
      bits = 0;
    }
  }
  h = splitmix64(h ^ word ^ static_cast<std::uint64_t>(bits));
}

}  // namespace

template <typename Real>
std::uint64_t ForwardTape<Real>::activation_pattern() const {
  std::uint64_t h = 0;
  for (const auto& bt : impl_->branch) {
    mix_mask(h, bt.activation.values());
    mix_indices(h, bt.pool_argmax);
    mix_indices(h, bt.height_argmax);
  }
  for (const auto& lt : impl_->levels) {
    for (const auto& ht : lt.blocks) {
      mix_mask(h, ht.activation.values());
      mix_indices(h, ht.pool_argmax);
    }
    mix_indices(h, lt.adaptive_argmax);
    mix_mask(h, std::span<const Real>(lt.hidden));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Parameter layout

template <typename Real>
struct SimilarityModel<Real>::Slots {
  std::array<int, kNumLevels> branch_w{}, branch_b{};
  std::array<std::vector<int>, kNumLevels> head_w, head_b, bn_gamma, bn_beta, bn_mean, bn_var;
  std::array<int, kNumLevels> fc_w{}, fc_b{};
  int out_w = 0, out_b = 0;
};

namespace {

template <typename Real>
int add_param(std::vector<Parameter<Real>>& params, std::string name, std::vector<int> shape, bool trainable = true) {
  params.push_back({std::move(name), Tensor<Real>(std::move(shape)), trainable});
  return static_cast<int>(params.size()) - 1;
}

template <typename Real>
void fill_uniform(Tensor<Real>& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
}

}  // namespace

template <typename Real>
SimilarityModel<Real>::SimilarityModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), shapes_(validate(config)) {
  auto slots = std::make_shared<Slots>();
  std::mt19937_64 rng(splitmix64(seed));

  int in_ch = 1;
  for (int k = 0; k < kNumLevels; ++k) {
    const auto& b = config_.branch[k];
    const std::string p = "branch." + std::to_string(k + 1);
    slots->branch_w[k] = add_param(params_, p + ".weight", {b.channels, in_ch, b.kernel_h, b.kernel_w});
    slots->branch_b[k] = add_param(params_, p + ".bias", {b.channels});
    fill_uniform(params_[slots->branch_w[k]].value, std::sqrt(6.0 / (in_ch * b.kernel_h * b.kernel_w)), rng);
    in_ch = b.channels;
  }

  for (int k = 0; k < kNumLevels; ++k) {
    const int g = ModelConfig::head_group(k);
    const auto& blocks = config_.head[g];
    const bool owner = !config_.share_head_weights || k == 0 || k == 2;
    int ch = 1;
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      const auto& hb = blocks[j];
      if (owner) {
        const std::string p = config_.share_head_weights
                                  ? "head.group" + std::to_string(g + 1) + "." + std::to_string(j + 1)
                                  : "head.level" + std::to_string(k + 1) + "." + std::to_string(j + 1);
        slots->head_w[k].push_back(add_param(params_, p + ".weight", {hb.channels, ch, hb.kernel, hb.kernel}));
        slots->head_b[k].push_back(add_param(params_, p + ".bias", {hb.channels}));
        fill_uniform(params_[slots->head_w[k].back()].value, std::sqrt(6.0 / (ch * hb.kernel * hb.kernel)), rng);
      } else {
        slots->head_w[k].push_back(slots->head_w[k - 1][j]);
        slots->head_b[k].push_back(slots->head_b[k - 1][j]);
      }
      if (config_.head_batch_norm) {
        const std::string p = "head.level" + std::to_string(k + 1) + "." + std::to_string(j + 1) + ".bn";
        slots->bn_gamma[k].push_back(add_param(params_, p + ".gamma", {hb.channels}));
        slots->bn_beta[k].push_back(add_param(params_, p + ".beta", {hb.channels}));
        slots->bn_mean[k].push_back(add_param(params_, p + ".running_mean", {hb.channels}, false));
        slots->bn_var[k].push_back(add_param(params_, p + ".running_var", {hb.channels}, false));
        params_[slots->bn_gamma[k].back()].value.fill(Real(1));
        params_[slots->bn_var[k].back()].value.fill(Real(1));
      }
      ch = hb.channels;
    }
  }

  for (int k = 0; k < kNumLevels; ++k) {
    const std::string p = "fc.level" + std::to_string(k + 1);
    slots->fc_w[k] = add_param(params_, p + ".weight", {shapes_.flat[k]});
    slots->fc_b[k] = add_param(params_, p + ".bias", {1});
    fill_uniform(params_[slots->fc_w[k]].value, 1.0 / std::sqrt(static_cast<double>(shapes_.flat[k])), rng);
  }
  slots->out_w = add_param(params_, "output.weight", {kNumLevels});
  slots->out_b = add_param(params_, "output.bias", {1});
  fill_uniform(params_[slots->out_w].value, 1.0 / std::sqrt(static_cast<double>(kNumLevels)), rng);

  slots_ = std::move(slots);
}

template <typename Real>
Parameter<Real>& SimilarityModel<Real>::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename Real>
const Parameter<Real>& SimilarityModel<Real>::parameter(std::string_view name) const {
  return const_cast<SimilarityModel*>(this)->parameter(name);
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename Real>
Real sigmoid(Real z) {
  if (z >= 0) return Real(1) / (Real(1) + std::exp(-z));
  const Real e = std::exp(z);
  return e / (Real(1) + e);
}

template <typename Real>
void relu_inplace(Tensor<Real>& t) {
  Real* d = t.data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(t.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) d[i] = d[i] > Real(0) ? d[i] : Real(0);
}

// grad *= [activation > 0]
template <typename Real>
void relu_backward_inplace(const Tensor<Real>& activation, Tensor<Real>& grad) {
  const Real* a = activation.data();
  Real* g = grad.data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(grad.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) g[i] = a[i] > Real(0) ? g[i] : Real(0);
}

}  // namespace

template <typename Real>
ForwardResult<Real> SimilarityModel<Real>::forward(const Tensor<Real>& x1, const Tensor<Real>& x2,
                                                   const ForwardOptions<Real>& options, ForwardTape<Real>* tape) const {
  const auto check = [&](const Tensor<Real>& x, const char* name) {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != config_.input_bins || x.dim(3) != config_.input_frames) {
      throw std::invalid_argument(std::string("forward: ") + name + " has shape " + shape_string(x.shape()) +
                                  ", expected (B, 1, " + std::to_string(config_.input_bins) + ", " +
                                  std::to_string(config_.input_frames) + ")");
    }
  };
  check(x1, "x1");
  check(x2, "x2");
  if (x1.dim(0) != x2.dim(0)) throw std::invalid_argument("forward: batch sizes differ");

  ForwardTape<Real> local;
  auto& t = (tape ? *tape : local).impl();
  const Slots& s = *slots_;
  const int batch = x1.dim(0);
  const bool train = options.mode == Mode::kTrain;
  t = {};
  t.mode = options.mode;
  t.batch = batch;

  // Both sides of every pair go through the branch as one batch of 2B tracks.
  t.input = Tensor<Real>({2 * batch, 1, config_.input_bins, config_.input_frames});
  std::copy_n(x1.data(), x1.size(), t.input.data());
  std::copy_n(x2.data(), x2.size(), t.input.data() + x1.size());

  const Tensor<Real>* in = &t.input;
  for (int k = 0; k < kNumLevels; ++k) {
    auto& bt = t.branch[k];
    const auto& bc = config_.branch[k];
    bt.conv = {2 * batch, in->dim(1), in->dim(2), in->dim(3), bc.channels, bc.kernel_h, bc.kernel_w, 0, 0};
    bt.activation = Tensor<Real>({2 * batch, bc.channels, bt.conv.out_h(), bt.conv.out_w()});
    kp::conv2d_forward(bt.conv, in->data(), params_[s.branch_w[k]].value.data(), params_[s.branch_b[k]].value.data(),
                       bt.activation.data());
    relu_inplace(bt.activation);

    bt.pool = {2 * batch, bc.channels, bt.conv.out_h(), bt.conv.out_w(), bc.pool_h, bc.pool_w};
    bt.output = Tensor<Real>({2 * batch, bc.channels, bt.pool.out_h(), bt.pool.out_w()});
    bt.pool_argmax.resize(bt.output.size());
    kp::maxpool2d_forward(bt.pool, bt.activation.data(), bt.output.data(), bt.pool_argmax.data());

    if (train && config_.dropout > 0.0) {
      std::mt19937_64 rng(derive_seed(options.dropout_seed, {static_cast<std::uint64_t>(k)}));
      std::bernoulli_distribution keep(1.0 - config_.dropout);
      const Real scale = static_cast<Real>(1.0 / (1.0 - config_.dropout));
      bt.dropout_scale.resize(bt.output.size());
      for (std::size_t i = 0; i < bt.output.size(); ++i) {
        bt.dropout_scale[i] = keep(rng) ? scale : Real(0);
        bt.output[i] *= bt.dropout_scale[i];
      }
    }

    const int h = bt.pool.out_h(), w = bt.pool.out_w();
    t.sequences.levels[k] = Tensor<Real>({2 * batch, bc.channels, w});
    bt.height_argmax.resize(t.sequences.levels[k].size());
    kp::height_max_forward(2 * batch, bc.channels, h, w, bt.output.data(), t.sequences.levels[k].data(),
                           bt.height_argmax.data());
    in = &bt.output;
  }

  t.csms = compute_csms(t.sequences.slice(0, batch), t.sequences.slice(batch, batch));
  if (options.csm_observer)
    for (int k = 0; k < kNumLevels; ++k) options.csm_observer(k, t.csms[k]);

  t.logits.assign(batch, params_[s.out_b].value[0]);
  for (int k = 0; k < kNumLevels; ++k) {
    auto& lt = t.levels[k];
    const auto& blocks = config_.head[ModelConfig::head_group(k)];
    lt.blocks.resize(blocks.size());
    const Tensor<Real>* hin = &t.csms[k];
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      auto& ht = lt.blocks[j];
      const auto& hb = blocks[j];
      const int pad = hb.kernel / 2;
      ht.conv = {batch, hin->dim(1), hin->dim(2), hin->dim(3), hb.channels, hb.kernel, hb.kernel, pad, pad};
      ht.normalized = Tensor<Real>({batch, hb.channels, ht.conv.out_h(), ht.conv.out_w()});
      kp::conv2d_forward(ht.conv, hin->data(), params_[s.head_w[k][j]].value.data(),
                         params_[s.head_b[k][j]].value.data(), ht.normalized.data());

      ht.activation = ht.normalized;
      if (config_.head_batch_norm) {
        const int C = hb.channels;
        const std::size_t plane = static_cast<std::size_t>(ht.conv.out_h()) * ht.conv.out_w();
        const std::size_t m = plane * batch;
        const Real* gamma = params_[s.bn_gamma[k][j]].value.data();
        const Real* beta = params_[s.bn_beta[k][j]].value.data();
        const Real* rmean = params_[s.bn_mean[k][j]].value.data();
        const Real* rvar = params_[s.bn_var[k][j]].value.data();
        ht.inv_std.assign(C, Real(0));
        ht.batch_mean.assign(C, 0.0);
        ht.batch_var.assign(C, 0.0);
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c) {
          double mean, var;
          if (train) {
            double sum = 0.0;
            for (int n = 0; n < batch; ++n) {
              const Real* z = ht.normalized.data() + (static_cast<std::size_t>(n) * C + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) sum += z[i];
            }
            mean = sum / static_cast<double>(m);
            double sq = 0.0;
            for (int n = 0; n < batch; ++n) {
              const Real* z = ht.normalized.data() + (static_cast<std::size_t>(n) * C + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) sq += (z[i] - mean) * (z[i] - mean);
            }
            var = sq / static_cast<double>(m);
            ht.batch_mean[c] = mean;
            ht.batch_var[c] = m > 1 ? sq / static_cast<double>(m - 1) : var;
          } else {
            mean = rmean[c];
            var = rvar[c];
          }
          const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
          ht.inv_std[c] = static_cast<Real>(inv);
          for (int n = 0; n < batch; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            Real* z = ht.normalized.data() + off;
            Real* y = ht.activation.data() + off;
            for (std::size_t i = 0; i < plane; ++i) {
              z[i] = static_cast<Real>((z[i] - mean) * inv);
              y[i] = gamma[c] * z[i] + beta[c];
            }
          }
        }
      }
      relu_inplace(ht.activation);

      ht.pooled = hb.pool;
      if (hb.pool) {
        ht.pool = {batch, hb.channels, ht.conv.out_h(), ht.conv.out_w(), 2, 2};
        ht.output = Tensor<Real>({batch, hb.channels, ht.pool.out_h(), ht.pool.out_w()});
        ht.pool_argmax.resize(ht.output.size());
        kp::maxpool2d_forward(ht.pool, ht.activation.data(), ht.output.data(), ht.pool_argmax.data());
      } else {
        ht.output = ht.activation;
      }
      hin = &ht.output;
    }

    const int grid = config_.level_grid[k];
    lt.adaptive = {batch, hin->dim(1), hin->dim(2), hin->dim(3), grid, grid};
    const int flat = hin->dim(1) * grid * grid;
    lt.flat = Tensor<Real>({batch, flat});
    lt.adaptive_argmax.resize(lt.flat.size());
    kp::adaptive_maxpool2d_forward(lt.adaptive, hin->data(), lt.flat.data(), lt.adaptive_argmax.data());

    const Real* w = params_[s.fc_w[k]].value.data();
    const Real b = params_[s.fc_b[k]].value[0];
    const Real v = params_[s.out_w].value[k];
    lt.hidden.resize(batch);
    lt.hidden_out.resize(batch);
    for (int n = 0; n < batch; ++n) {
      const Real* f = lt.flat.data() + static_cast<std::size_t>(n) * flat;
      Real acc = 0;
      for (int i = 0; i < flat; ++i) acc += w[i] * f[i];
      lt.hidden[n] = acc + b;
      lt.hidden_out[n] = config_.hidden_activation == HiddenActivation::kRelu ? std::max(lt.hidden[n], Real(0))
                                                                              : lt.hidden[n];
      t.logits[n] += v * lt.hidden_out[n];
    }
  }

  ForwardResult<Real> result;
  result.logits = t.logits;
  result.scores.resize(batch);
  for (int n = 0; n < batch; ++n) result.scores[n] = sigmoid(t.logits[n]);
  return result;
}

template <typename Real>
DeepSequences<Real> SimilarityModel<Real>::branch_forward(const Tensor<Real>& x) const {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != config_.input_bins || x.dim(3) != config_.input_frames) {
    throw std::invalid_argument("branch_forward: input shape " + shape_string(x.shape()) + ", expected (N, 1, " +
                                std::to_string(config_.input_bins) + ", " + std::to_string(config_.input_frames) +
                                ")");
  }
  const Slots& s = *slots_;
  const int n = x.dim(0);
  DeepSequences<Real> out;
  Tensor<Real> cur = x;
  for (int k = 0; k < kNumLevels; ++k) {
    const auto& bc = config_.branch[k];
    const kernels::ConvShape conv{n, cur.dim(1), cur.dim(2), cur.dim(3), bc.channels, bc.kernel_h, bc.kernel_w, 0, 0};
    Tensor<Real> act({n, bc.channels, conv.out_h(), conv.out_w()});
    kp::conv2d_forward(conv, cur.data(), params_[s.branch_w[k]].value.data(), params_[s.branch_b[k]].value.data(),
                       act.data());
    relu_inplace(act);
    const kernels::PoolShape pool{n, bc.channels, conv.out_h(), conv.out_w(), bc.pool_h, bc.pool_w};
    Tensor<Real> pooled({n, bc.channels, pool.out_h(), pool.out_w()});
    std::vector<Index> argmax(pooled.size());
    kp::maxpool2d_forward(pool, act.data(), pooled.data(), argmax.data());
    out.levels[k] = Tensor<Real>({n, bc.channels, pool.out_w()});
    std::vector<Index> hargmax(out.levels[k].size());
    kp::height_max_forward(n, bc.channels, pool.out_h(), pool.out_w(), pooled.data(), out.levels[k].data(),
                           hargmax.data());
    cur = std::move(pooled);
  }
  return out;
}

template <typename Real>
ForwardResult<Real> SimilarityModel<Real>::similarity_head(const CSMSet<Real>& csms) const {
  const Slots& s = *slots_;
  const int batch = csms[0].dim(0);
  for (int k = 0; k < kNumLevels; ++k) {
    const auto& c = csms[k];
    if (c.rank() != 4 || c.dim(0) != batch || c.dim(1) != 1 || c.dim(2) != shapes_.widths[k] ||
        c.dim(3) != shapes_.widths[k]) {
      throw std::invalid_argument("similarity_head: level " + std::to_string(k + 1) + " CSM has shape " +
                                  shape_string(c.shape()));
    }
  }
  ForwardResult<Real> result;
  result.logits.assign(batch, params_[s.out_b].value[0]);
  for (int k = 0; k < kNumLevels; ++k) {
    const auto& blocks = config_.head[ModelConfig::head_group(k)];
    Tensor<Real> cur = csms[k];
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      const auto& hb = blocks[j];
      const int pad = hb.kernel / 2;
      const kernels::ConvShape conv{batch, cur.dim(1), cur.dim(2), cur.dim(3), hb.channels, hb.kernel, hb.kernel, pad, pad};
      Tensor<Real> act({batch, hb.channels, conv.out_h(), conv.out_w()});
      kp::conv2d_forward(conv, cur.data(), params_[s.head_w[k][j]].value.data(), params_[s.head_b[k][j]].value.data(),
                         act.data());
      if (config_.head_batch_norm) {
        const std::size_t plane = static_cast<std::size_t>(conv.out_h()) * conv.out_w();
        const Real* gamma = params_[s.bn_gamma[k][j]].value.data();
        const Real* beta = params_[s.bn_beta[k][j]].value.data();
        const Real* rmean = params_[s.bn_mean[k][j]].value.data();
        const Real* rvar = params_[s.bn_var[k][j]].value.data();
        for (int n = 0; n < batch; ++n)
          for (int c = 0; c < hb.channels; ++c) {
            const double mean = rmean[c];
            const double inv = 1.0 / std::sqrt(static_cast<double>(rvar[c]) + kBatchNormEps);
            Real* z = act.data() + (static_cast<std::size_t>(n) * hb.channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const Real xhat = static_cast<Real>((z[i] - mean) * inv);
              z[i] = gamma[c] * xhat + beta[c];
            }
          }
      }
      relu_inplace(act);
      if (hb.pool) {
        const kernels::PoolShape pool{batch, hb.channels, conv.out_h(), conv.out_w(), 2, 2};
        Tensor<Real> pooled({batch, hb.channels, pool.out_h(), pool.out_w()});
        std::vector<Index> argmax(pooled.size());
        kp::maxpool2d_forward(pool, act.data(), pooled.data(), argmax.data());
        cur = std::move(pooled);
      } else {
        cur = std::move(act);
      }
    }
    const int grid = config_.level_grid[k];
    const kernels::AdaptivePoolShape adaptive{batch, cur.dim(1), cur.dim(2), cur.dim(3), grid, grid};
    const int flat = cur.dim(1) * grid * grid;
    Tensor<Real> f({batch, flat});
    std::vector<Index> argmax(f.size());
    kp::adaptive_maxpool2d_forward(adaptive, cur.data(), f.data(), argmax.data());
    const Real* w = params_[s.fc_w[k]].value.data();
    const Real b = params_[s.fc_b[k]].value[0];
    const Real v = params_[s.out_w].value[k];
    for (int n = 0; n < batch; ++n) {
      const Real* row = f.data() + static_cast<std::size_t>(n) * flat;
      Real acc = 0;
      for (int i = 0; i < flat; ++i) acc += w[i] * row[i];
      Real h = acc + b;
      if (config_.hidden_activation == HiddenActivation::kRelu) h = std::max(h, Real(0));
      result.logits[n] += v * h;
    }
  }
  result.scores.resize(batch);
  for (int n = 0; n < batch; ++n) result.scores[n] = sigmoid(result.logits[n]);
  return result;
}

// ---------------------------------------------------------------------------
// Backward

template <typename Real>
std::vector<Tensor<Real>> SimilarityModel<Real>::backward(const ForwardTape<Real>& tape,
                                                          std::span<const Real> grad_logits) const {
  const auto& t = tape.impl();
  const Slots& s = *slots_;
  const int batch = t.batch;
  if (static_cast<int>(grad_logits.size()) != batch) throw std::invalid_argument("backward: grad_logits size mismatch");
  const bool train = t.mode == Mode::kTrain;

  std::vector<Tensor<Real>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.emplace_back(p.value.shape());

  // Output layer.
  for (int n = 0; n < batch; ++n) grads[s.out_b][0] += grad_logits[n];

  std::array<Tensor<Real>, kNumLevels> grad_csm;
  for (int k = 0; k < kNumLevels; ++k) {
    const auto& lt = t.levels[k];
    const auto& blocks = config_.head[ModelConfig::head_group(k)];
    const Real v = params_[s.out_w].value[k];
    const int flat = lt.flat.dim(1);

    Tensor<Real> grad_flat({batch, flat});
    const Real* w = params_[s.fc_w[k]].value.data();
    for (int n = 0; n < batch; ++n) {
      grads[s.out_w][k] += grad_logits[n] * lt.hidden_out[n];
      Real gh = grad_logits[n] * v;
      if (config_.hidden_activation == HiddenActivation::kRelu && lt.hidden[n] <= Real(0)) gh = 0;
      grads[s.fc_b[k]][0] += gh;
      const Real* f = lt.flat.data() + static_cast<std::size_t>(n) * flat;
      Real* gw = grads[s.fc_w[k]].data();
      Real* gf = grad_flat.data() + static_cast<std::size_t>(n) * flat;
      for (int i = 0; i < flat; ++i) {
        gw[i] += gh * f[i];
        gf[i] = gh * w[i];
      }
    }

    const auto& last = lt.blocks.back().output;
    Tensor<Real> grad_out(last.shape());
    kp::adaptive_maxpool2d_backward(lt.adaptive, grad_flat.data(), lt.adaptive_argmax.data(), grad_out.data());

    for (int j = static_cast<int>(blocks.size()) - 1; j >= 0; --j) {
      const auto& ht = lt.blocks[j];
      Tensor<Real> grad_act;
      if (ht.pooled) {
        grad_act = Tensor<Real>(ht.activation.shape());
        kp::maxpool2d_backward(ht.pool, grad_out.data(), ht.pool_argmax.data(), grad_act.data());
      } else {
        grad_act = std::move(grad_out);
      }
      relu_backward_inplace(ht.activation, grad_act);

      Tensor<Real> grad_z = std::move(grad_act);
      if (config_.head_batch_norm) {
        const int C = ht.conv.out_channels;
        const std::size_t plane = static_cast<std::size_t>(ht.conv.out_h()) * ht.conv.out_w();
        const double m = static_cast<double>(plane * batch);
        const Real* gamma = params_[s.bn_gamma[k][j]].value.data();
        Real* g_gamma = grads[s.bn_gamma[k][j]].data();
        Real* g_beta = grads[s.bn_beta[k][j]].data();
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int n = 0; n < batch; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            const Real* dy = grad_z.data() + off;
            const Real* xh = ht.normalized.data() + off;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += dy[i];
              sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
            }
          }
          g_gamma[c] += static_cast<Real>(sum_dy_xhat);
          g_beta[c] += static_cast<Real>(sum_dy);
          const double gi = static_cast<double>(gamma[c]) * ht.inv_std[c];
          for (int n = 0; n < batch; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            Real* dy = grad_z.data() + off;
            const Real* xh = ht.normalized.data() + off;
            for (std::size_t i = 0; i < plane; ++i) {
              if (train) {
                dy[i] = static_cast<Real>(gi * (dy[i] - sum_dy / m - xh[i] * sum_dy_xhat / m));
              } else {
                dy[i] = static_cast<Real>(gi * dy[i]);
              }
            }
          }
        }
      }

      const Tensor<Real>& input = j == 0 ? t.csms[k] : lt.blocks[j - 1].output;
      kp::conv2d_backward_params(ht.conv, input.data(), grad_z.data(), grads[s.head_w[k][j]].data(),
                                 grads[s.head_b[k][j]].data());
      grad_out = Tensor<Real>(input.shape());
      kp::conv2d_backward_input(ht.conv, grad_z.data(), params_[s.head_w[k][j]].value.data(), grad_out.data());
    }
    grad_csm[k] = std::move(grad_out);
  }

  // CSMs -> deep sequences (first B rows are x1, last B are x2).
  std::array<Tensor<Real>, kNumLevels> grad_seq;
  for (int k = 0; k < kNumLevels; ++k) {
    const auto& seq = t.sequences.levels[k];
    const int C = seq.dim(1), T = seq.dim(2);
    grad_seq[k] = Tensor<Real>(seq.shape());
    const std::size_t half = static_cast<std::size_t>(batch) * C * T;
    kp::csm_backward(batch, C, T, T, seq.data(), seq.data() + half, grad_csm[k].data(), grad_seq[k].data(),
                     grad_seq[k].data() + half);
  }

  Tensor<Real> grad_next;  // gradient w.r.t. the input of block k+1
  for (int k = kNumLevels - 1; k >= 0; --k) {
    const auto& bt = t.branch[k];
    Tensor<Real> grad_out(bt.output.shape());
    kp::height_max_backward(2 * batch, bt.output.dim(1), bt.output.dim(2), bt.output.dim(3), grad_seq[k].data(),
                            bt.height_argmax.data(), grad_out.data());
    if (!grad_next.empty()) {
      for (std::size_t i = 0; i < grad_out.size(); ++i) grad_out[i] += grad_next[i];
    }
    if (!bt.dropout_scale.empty()) {
      for (std::size_t i = 0; i < grad_out.size(); ++i) grad_out[i] *= bt.dropout_scale[i];
    }
    Tensor<Real> grad_act(bt.activation.shape());
    kp::maxpool2d_backward(bt.pool, grad_out.data(), bt.pool_argmax.data(), grad_act.data());
    relu_backward_inplace(bt.activation, grad_act);

    const Tensor<Real>& input = k == 0 ? t.input : t.branch[k - 1].output;
    kp::conv2d_backward_params(bt.conv, input.data(), grad_act.data(), grads[s.branch_w[k]].data(),
                               grads[s.branch_b[k]].data());
    if (k > 0) {
      grad_next = Tensor<Real>(input.shape());
      kp::conv2d_backward_input(bt.conv, grad_act.data(), params_[s.branch_w[k]].value.data(), grad_next.data());
    }
  }
  return grads;
}

template <typename Real>
void SimilarityModel<Real>::commit_batch_statistics(const ForwardTape<Real>& tape, double momentum) {
  const auto& t = tape.impl();
  if (t.mode != Mode::kTrain || !config_.head_batch_norm) return;
  const Slots& s = *slots_;
  for (int k = 0; k < kNumLevels; ++k) {
    for (std::size_t j = 0; j < t.levels[k].blocks.size(); ++j) {
      const auto& ht = t.levels[k].blocks[j];
      auto& rm = params_[s.bn_mean[k][j]].value;
      auto& rv = params_[s.bn_var[k][j]].value;
      for (std::size_t c = 0; c < ht.batch_mean.size(); ++c) {
        rm[c] = static_cast<Real>((1.0 - momentum) * rm[c] + momentum * ht.batch_mean[c]);
        rv[c] = static_cast<Real>((1.0 - momentum) * rv[c] + momentum * ht.batch_var[c]);
      }
    }
  }
}

template struct DeepSequences<float>;
template struct DeepSequences<double>;
template CSMSet<float> compute_csms(const DeepSequences<float>&, const DeepSequences<float>&);
template CSMSet<double> compute_csms(const DeepSequences<double>&, const DeepSequences<double>&);
template class ForwardTape<float>;
template class ForwardTape<double>;
template class SimilarityModel<float>;
template class SimilarityModel<double>;

}  // namespace livesong
