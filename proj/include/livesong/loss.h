#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace livesong {

/// Scores are clamped into [eps, 1 - eps] before taking logs.
constexpr double kBceEpsilon = 1e-7;

enum class Reduction { kMean, kSum };

Reduction parse_reduction(std::string_view name);

/// -y log(s) - (1 - y) log(1 - s). Throws std::invalid_argument unless
/// label is 0 or 1.
double bce_loss(double score, int label);

double bce_batch_loss(std::span<const double> scores, std::span<const int> labels, Reduction reduction);

/// Gradient of the batch loss with respect to each pre-sigmoid logit:
/// (score - label), divided by the batch size under kMean.
std::vector<double> bce_logit_gradient(std::span<const double> scores, std::span<const int> labels,
                                       Reduction reduction);

}  // namespace livesong
