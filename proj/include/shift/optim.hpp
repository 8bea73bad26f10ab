#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "shift/params.hpp"

namespace shift::nn {

/// Adam with bias correction; moment state per tensor, one shared step count.
/// Non-trainable tensors are skipped entirely.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet& params);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long steps_taken() const { return t_; }

 private:
  struct Moments {
    Matrix m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Scales every trainable gradient so their joint L2 norm is at most
/// max_norm. Returns the pre-clip norm.
double clip_global_norm(ParamSet& params, double max_norm);

/// Central differences of fn over every coordinate of every trainable
/// tensor. Restores values afterwards. Keyed by tensor name.
std::map<std::string, Matrix> finite_diff(const std::function<double()>& fn,
                                          ParamSet& params, double epsilon);

/// Central differences at selected coordinates of one tensor.
std::vector<double> finite_diff_coords(
    const std::function<double()>& fn, ParamTensor& p,
    const std::vector<std::pair<Eigen::Index, Eigen::Index>>& coords,
    double epsilon);

}  // namespace shift::nn
