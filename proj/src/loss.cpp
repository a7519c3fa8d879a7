#include "livesong/loss.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace livesong {

Reduction parse_reduction(std::string_view name) {
  if (name == "mean") return Reduction::kMean;
  if (name == "sum") return Reduction::kSum;
  throw std::invalid_argument("unknown loss reduction '" + std::string(name) + "' (expected mean or sum)");
}

double bce_loss(double score, int label) {
  if (label != 0 && label != 1) throw std::invalid_argument("bce_loss: label must be 0 or 1, got " + std::to_string(label));
  const double s = std::clamp(score, kBceEpsilon, 1.0 - kBceEpsilon);
  return label == 1 ? -std::log(s) : -std::log1p(-s);
}

double bce_batch_loss(std::span<const double> scores, std::span<const int> labels, Reduction reduction) {
  if (scores.size() != labels.size()) throw std::invalid_argument("bce_batch_loss: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) total += bce_loss(scores[i], labels[i]);
  if (reduction == Reduction::kMean && !scores.empty()) total /= static_cast<double>(scores.size());
  return total;
}

std::vector<double> bce_logit_gradient(std::span<const double> scores, std::span<const int> labels,
                                       Reduction reduction) {
  if (scores.size() != labels.size()) throw std::invalid_argument("bce_logit_gradient: size mismatch");
  const double scale = reduction == Reduction::kMean && !scores.empty() ? 1.0 / static_cast<double>(scores.size()) : 1.0;
  std::vector<double> g(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("bce_logit_gradient: label must be 0 or 1");
    g[i] = (scores[i] - labels[i]) * scale;
  }
  return g;
}

}  // namespace livesong
