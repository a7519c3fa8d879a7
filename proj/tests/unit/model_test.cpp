#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../support/gradcheck.h"
#include "livesong/loss.h"
#include "livesong/model.h"

using namespace livesong;

namespace {

Tensor<float> random_input(int batch, const ModelConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<float> d(0.f, 1.f);
  Tensor<float> x({batch, 1, c.input_bins, c.input_frames});
  for (auto& v : x.values()) v = d(rng);
  return x;
}

Tensor<float> row(const Tensor<float>& x, int n) {
  Tensor<float> out({1, x.dim(1), x.dim(2), x.dim(3)});
  const std::size_t len = out.size();
  std::copy_n(x.data() + len * n, len, out.data());
  return out;
}

TEST(ModelConfig, ReferenceGeometryReproducesPublishedSizes) {
  const auto report = validate(ModelConfig::reference());
  EXPECT_EQ(report.widths, (std::array<int, 4>{194, 93, 43, 37}));
  EXPECT_EQ(report.heights, (std::array<int, 4>{30, 12, 4, 2}));
  EXPECT_EQ(report.flat, (std::array<int, 4>{32768, 2048, 1024, 1024}));
  EXPECT_EQ(report.head_side, (std::array<int, 4>{24, 11, 10, 9}));
}

TEST(ModelConfig, WrongBlockFourKernelIsRejectedNamingT4) {
  auto c = ModelConfig::reference();
  c.branch[3].kernel_w = 8;
  try {
    validate(c);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("T4 = 36"), std::string::npos) << e.what();
  }
}

TEST(ModelConfig, HeadSizeViolationIsRejected) {
  auto c = ModelConfig::reference();
  c.level_grid[1] = 5;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(ModelConfig, JsonRoundTripPreservesArchitectureHash) {
  for (const auto& c : {ModelConfig::reference(), ModelConfig::compact(), ModelConfig::tiny()}) {
    const auto back = model_config_from_json(to_json(c));
    EXPECT_EQ(architecture_hash(back), architecture_hash(c));
    EXPECT_TRUE(config_diff(back, c).empty());
  }
  auto other = ModelConfig::compact();
  other.branch[0].channels = 9;
  const auto diff = config_diff(ModelConfig::compact(), other);
  ASSERT_EQ(diff.size(), 1u);
  EXPECT_NE(diff[0].find("/branch/0/channels"), std::string::npos);
}

TEST(Model, SameSeedGivesBitwiseIdenticalParameters) {
  const Model a(ModelConfig::compact(), 42), b(ModelConfig::compact(), 42), c(ModelConfig::compact(), 43);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto va = a.parameters()[i].value.values();
    const auto vb = b.parameters()[i].value.values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin())) << a.parameters()[i].name;
    const auto vc = c.parameters()[i].value.values();
    any_diff |= !std::equal(va.begin(), va.end(), vc.begin());
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, SharedHeadWeightsHaveOneParameterSetPerGroup) {
  auto cfg = ModelConfig::tiny();
  const Model shared(cfg, 1);
  cfg.share_head_weights = false;
  const Model separate(cfg, 1);
  EXPECT_NO_THROW(shared.parameter("head.group1.1.weight"));
  EXPECT_THROW(shared.parameter("head.level2.1.weight"), std::out_of_range);
  EXPECT_NO_THROW(separate.parameter("head.level2.1.weight"));
  EXPECT_GT(separate.parameters().size(), shared.parameters().size());
}

TEST(Model, BranchWidthsMatchConfigAndAreDeterministic) {
  std::mt19937_64 rng(1);
  const Model m(ModelConfig::compact(), 3);
  const auto x = random_input(2, m.config(), rng);
  const auto a = m.branch_forward(x);
  const auto b = m.branch_forward(x);
  for (int k = 0; k < kNumLevels; ++k) {
    EXPECT_EQ(a.levels[k].dim(0), 2);
    EXPECT_EQ(a.levels[k].dim(1), m.config().branch[k].channels);
    EXPECT_EQ(a.levels[k].dim(2), m.shapes().widths[k]);
    const auto va = a.levels[k].values();
    const auto vb = b.levels[k].values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
  }
}

TEST(Model, ZeroInputWithZeroBiasesGivesFiniteSequences) {
  const Model m(ModelConfig::tiny(), 5);
  Tensor<float> x({1, 1, 8, 32});
  const auto seq = m.branch_forward(x);
  for (const auto& level : seq.levels)
    for (float v : level.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Model, WrongInputShapeIsAContractViolation) {
  const Model m(ModelConfig::tiny(), 5);
  Tensor<float> x({1, 1, 8, 31});
  EXPECT_THROW(m.branch_forward(x), std::invalid_argument);
  EXPECT_THROW(m.forward(x, x), std::invalid_argument);
}

TEST(Csm, HandExample) {
  // A_1 columns (1,0),(0,1); B_1 columns (1,0),(1,1). Stored [N, C, T].
  DeepSequences<double> a, b;
  for (int k = 0; k < kNumLevels; ++k) {
    a.levels[k] = Tensor<double>({1, 2, 2});
    b.levels[k] = Tensor<double>({1, 2, 2});
  }
  auto& A = a.levels[0];
  auto& B = b.levels[0];
  A[0] = 1; A[1] = 0;  // channel 0 over time
  A[2] = 0; A[3] = 1;  // channel 1
  B[0] = 1; B[1] = 1;
  B[2] = 0; B[3] = 1;
  const auto c = compute_csms(a, b);
  EXPECT_EQ(c[0][0], 0.0);
  EXPECT_EQ(c[0][1], 1.0);
  EXPECT_EQ(c[0][2], 2.0);
  EXPECT_EQ(c[0][3], 1.0);
}

TEST(Csm, PropertiesOnRandomSequences) {
  std::mt19937_64 rng(21);
  std::normal_distribution<float> d(0.f, 2.f);
  for (int trial = 0; trial < 10; ++trial) {
    DeepSequences<float> a, b;
    for (int k = 0; k < kNumLevels; ++k) {
      a.levels[k] = Tensor<float>({2, 3 + k, 5 + 2 * k});
      b.levels[k] = Tensor<float>({2, 3 + k, 5 + 2 * k});
      for (auto& v : a.levels[k].values()) v = d(rng);
      for (auto& v : b.levels[k].values()) v = d(rng);
    }
    const auto ab = compute_csms(a, b);
    const auto ba = compute_csms(b, a);
    const auto aa = compute_csms(a, a);
    for (int k = 0; k < kNumLevels; ++k) {
      const int t = ab[k].dim(2);
      for (int n = 0; n < 2; ++n)
        for (int i = 0; i < t; ++i) {
          EXPECT_LE(std::abs(aa[k].at(n, 0, i, i)), 1e-5f);
          for (int j = 0; j < t; ++j) {
            EXPECT_GE(ab[k].at(n, 0, i, j), 0.0f);
            EXPECT_NEAR(ab[k].at(n, 0, i, j), ba[k].at(n, 0, j, i), 1e-6);
          }
        }
    }
  }
}

TEST(Csm, MismatchedLevelsAreRejected) {
  DeepSequences<float> a, b;
  for (int k = 0; k < kNumLevels; ++k) {
    a.levels[k] = Tensor<float>({1, 2, 3});
    b.levels[k] = Tensor<float>({1, k == 2 ? 3 : 2, 3});
  }
  EXPECT_THROW(compute_csms(a, b), std::invalid_argument);
}

TEST(Model, ScoresLieStrictlyInsideUnitInterval) {
  std::mt19937_64 rng(2);
  const Model m(ModelConfig::tiny(), 8);
  const auto x1 = random_input(4, m.config(), rng);
  const auto x2 = random_input(4, m.config(), rng);
  const auto r = m.forward(x1, x2);
  for (float s : r.scores) {
    EXPECT_GT(s, 0.0f);
    EXPECT_LT(s, 1.0f);
  }
}

TEST(Model, ZeroOutputWeightsGiveSigmoidOfBias) {
  std::mt19937_64 rng(4);
  Model m(ModelConfig::tiny(), 8);
  m.parameter("output.weight").value.fill(0.f);
  m.parameter("output.bias").value[0] = 0.75f;
  const auto x1 = random_input(3, m.config(), rng);
  const auto x2 = random_input(3, m.config(), rng);
  const float expected = 1.0f / (1.0f + std::exp(-0.75f));
  for (float s : m.forward(x1, x2).scores) EXPECT_EQ(s, expected);
}

TEST(Model, IdenticalInputsProduceZeroCsmDiagonals) {
  std::mt19937_64 rng(6);
  const Model m(ModelConfig::compact(), 8);
  const auto x = random_input(1, m.config(), rng);
  ForwardOptions<float> opts;
  int observed = 0;
  opts.csm_observer = [&](int level, const Tensor<float>& csm) {
    ++observed;
    for (int i = 0; i < csm.dim(2); ++i) EXPECT_EQ(csm.at(0, 0, i, i), 0.0f) << "level " << level;
  };
  m.forward(x, x, opts);
  EXPECT_EQ(observed, kNumLevels);
}

TEST(Model, BatchedScoresMatchUnbatched) {
  std::mt19937_64 rng(10);
  const Model m(ModelConfig::compact(), 12);
  const int batch = 3;
  const auto x1 = random_input(batch, m.config(), rng);
  const auto x2 = random_input(batch, m.config(), rng);
  const auto batched = m.forward(x1, x2);
  for (int n = 0; n < batch; ++n) {
    const auto single = m.forward(row(x1, n), row(x2, n));
    EXPECT_NEAR(batched.scores[n], single.scores[0], 1e-5);
  }
  // The split branch/head path used for retrieval agrees with forward().
  const auto head = m.similarity_head(compute_csms(m.branch_forward(x1), m.branch_forward(x2)));
  for (int n = 0; n < batch; ++n) EXPECT_NEAR(head.scores[n], batched.scores[n], 1e-6);
}

TEST(Model, EvalForwardIsDeterministicAndTrainDropoutIsSeeded) {
  std::mt19937_64 rng(14);
  const Model m(ModelConfig::compact(), 12);
  const auto x1 = random_input(2, m.config(), rng);
  const auto x2 = random_input(2, m.config(), rng);
  EXPECT_EQ(m.forward(x1, x2).scores, m.forward(x1, x2).scores);
  ForwardOptions<float> train;
  train.mode = Mode::kTrain;
  train.dropout_seed = 99;
  const auto t1 = m.forward(x1, x2, train).scores;
  EXPECT_EQ(t1, m.forward(x1, x2, train).scores);
  train.dropout_seed = 100;
  EXPECT_NE(t1, m.forward(x1, x2, train).scores);
}

TEST(Model, RunningStatisticsMoveOnlyWhenCommitted) {
  std::mt19937_64 rng(16);
  Model m(ModelConfig::tiny(), 12);
  const auto x1 = random_input(2, m.config(), rng);
  const auto x2 = random_input(2, m.config(), rng);
  ForwardOptions<float> train;
  train.mode = Mode::kTrain;
  ForwardTape<float> tape;
  const auto before = m.forward(x1, x2).scores;
  m.forward(x1, x2, train, &tape);
  EXPECT_EQ(before, m.forward(x1, x2).scores);
  m.commit_batch_statistics(tape);
  EXPECT_NE(before, m.forward(x1, x2).scores);
}

TEST(Model, GradientsMatchFiniteDifferencesOnTinyConfig) {
  const auto result = test_support::gradient_check(ModelConfig::tiny(), 2024);
  EXPECT_GT(result.checked, 100u);
  EXPECT_LE(result.max_rel_error, 1e-3) << "worst: " << result.worst_parameter << " analytic " << result.worst_analytic
                                         << " numeric " << result.worst_numeric;
}

TEST(Model, GradientsMatchWithSeparateHeadsAndReluHidden) {
  auto cfg = ModelConfig::tiny();
  cfg.share_head_weights = false;
  cfg.hidden_activation = HiddenActivation::kRelu;
  const auto result = test_support::gradient_check(cfg, 77);
  EXPECT_LE(result.max_rel_error, 1e-3) << "worst: " << result.worst_parameter << " analytic " << result.worst_analytic
                                         << " numeric " << result.worst_numeric;
}

TEST(Model, GradientsMatchWithoutBatchNorm) {
  auto cfg = ModelConfig::tiny();
  cfg.head_batch_norm = false;
  const auto result = test_support::gradient_check(cfg, 78);
  EXPECT_LE(result.max_rel_error, 1e-3) << "worst: " << result.worst_parameter << " analytic " << result.worst_analytic
                                         << " numeric " << result.worst_numeric;
}

TEST(Loss, ClosedForms) {
  EXPECT_NEAR(bce_loss(0.5, 1), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_loss(0.9, 0), -std::log(0.1), 1e-12);
  EXPECT_LE(bce_loss(1.0, 1), 1.2e-7);
  EXPECT_TRUE(std::isfinite(bce_loss(0.0, 1)));
  EXPECT_TRUE(std::isfinite(bce_loss(1.0, 0)));
  EXPECT_THROW(bce_loss(0.5, 2), std::invalid_argument);
}

TEST(Loss, Reductions) {
  const std::vector<double> s{0.5, 0.5};
  const std::vector<int> y{1, 0};
  EXPECT_NEAR(bce_batch_loss(s, y, Reduction::kSum), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_batch_loss(s, y, Reduction::kMean), std::log(2.0), 1e-12);
  const auto g = bce_logit_gradient(s, y, Reduction::kMean);
  EXPECT_DOUBLE_EQ(g[0], -0.25);
  EXPECT_DOUBLE_EQ(g[1], 0.25);
}

}  // namespace
