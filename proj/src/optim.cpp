#include "livesong/optim.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace livesong {

void AmsGrad::step(std::vector<Parameter<float>>& params, const std::vector<Tensor<float>>& grads) {
  if (grads.size() != params.size()) throw std::invalid_argument("AmsGrad::step: gradient count mismatch");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    v_max_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].value.size(), 0.0);
      v_[i].assign(params[i].value.size(), 0.0);
      v_max_[i].assign(params[i].value.size(), 0.0);
    }
  }
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double step_size = options_.lr / c1;
  const double sqrt_c2 = std::sqrt(c2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    auto& w = params[i].value;
    const auto& g = grads[i];
    if (g.size() != w.size()) throw std::invalid_argument("AmsGrad::step: shape mismatch for " + params[i].name);
    auto& m = m_[i];
    auto& v = v_[i];
    auto& vm = v_max_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      vm[k] = std::max(vm[k], v[k]);
      const double denom = std::sqrt(vm[k]) / sqrt_c2 + options_.eps;
      w[k] = static_cast<float>(w[k] - step_size * m[k] / denom);
    }
  }
}

bool PlateauScheduler::step(double loss) {
  if (loss < best_) {
    best_ = loss;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ >= patience_) {
    lr_ *= factor_;
    bad_epochs_ = 0;
    return true;
  }
  return false;
}

}  // namespace livesong
