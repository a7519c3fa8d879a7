#pragma once

#include <limits>
#include <vector>

#include "livesong/model.h"

namespace livesong {

/// Adam with the AMSGrad correction: the denominator uses the running maximum
/// of the second-moment estimate, so per-coordinate step sizes never grow.
class AmsGrad {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AmsGrad() : AmsGrad(Options{}) {}
  explicit AmsGrad(Options options) : options_(options) {}

  /// Updates every trainable parameter; grads align with params.
  void step(std::vector<Parameter<float>>& params, const std::vector<Tensor<float>>& grads);

  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  long long steps() const { return t_; }

 private:
  Options options_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_, v_, v_max_;
};

/// Multiplies the learning rate by `factor` at the end of the `patience`-th
/// consecutive epoch without improvement (strict less-than, zero tolerance),
/// then restarts the count.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience) : lr_(lr), factor_(factor), patience_(patience) {}

  /// Feeds one epoch's loss; returns true when the rate was reduced.
  bool step(double loss);

  double lr() const { return lr_; }
  double best() const { return best_; }
  int bad_epochs() const { return bad_epochs_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

}  // namespace livesong
