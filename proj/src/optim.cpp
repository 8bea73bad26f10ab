#include "shift/optim.hpp"

#include <cmath>

#include "shift/error.hpp"

namespace shift::nn {

void Adam::step(ParamSet& params) {
  t_ += 1;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& tp : params.tensors()) {
    ParamTensor& p = *tp;
    if (!p.trainable) continue;
    auto [it, fresh] = state_.try_emplace(p.name);
    Moments& mo = it->second;
    if (fresh) {
      mo.m = Matrix::Zero(p.value.rows(), p.value.cols());
      mo.v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    require(mo.m.rows() == p.value.rows() && mo.m.cols() == p.value.cols(),
            ErrorCode::shape_mismatch, "optimizer state mismatch for " + p.name);
    mo.m = beta1_ * mo.m + (1.0 - beta1_) * p.grad;
    mo.v = beta2_ * mo.v.array() + (1.0 - beta2_) * p.grad.array().square();
    p.value.array() -=
        lr_ * (mo.m.array() / bc1) / ((mo.v.array() / bc2).sqrt() + eps_);
  }
}

double clip_global_norm(ParamSet& params, double max_norm) {
  require(max_norm > 0.0, ErrorCode::invalid_argument,
          "clip threshold must be positive");
  double sq = 0.0;
  for (const auto& tp : params.tensors())
    if (tp->trainable) sq += tp->grad.squaredNorm();
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    double s = max_norm / norm;
    for (auto& tp : params.tensors())
      if (tp->trainable) tp->grad *= s;
  }
  return norm;
}

std::map<std::string, Matrix> finite_diff(const std::function<double()>& fn,
                                          ParamSet& params, double epsilon) {
  require(epsilon > 0.0, ErrorCode::invalid_argument,
          "finite_diff needs epsilon > 0");
  std::map<std::string, Matrix> grads;
  for (auto& tp : params.tensors()) {
    ParamTensor& p = *tp;
    if (!p.trainable) continue;
    Matrix g(p.value.rows(), p.value.cols());
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        double saved = p.value(r, c);
        p.value(r, c) = saved + epsilon;
        double hi = fn();
        p.value(r, c) = saved - epsilon;
        double lo = fn();
        p.value(r, c) = saved;
        g(r, c) = (hi - lo) / (2.0 * epsilon);
      }
    }
    grads[p.name] = std::move(g);
  }
  return grads;
}

std::vector<double> finite_diff_coords(
    const std::function<double()>& fn, ParamTensor& p,
    const std::vector<std::pair<Eigen::Index, Eigen::Index>>& coords,
    double epsilon) {
  require(epsilon > 0.0, ErrorCode::invalid_argument,
          "finite_diff needs epsilon > 0");
  std::vector<double> out;
  out.reserve(coords.size());
  for (auto [r, c] : coords) {
    require(r >= 0 && r < p.value.rows() && c >= 0 && c < p.value.cols(),
            ErrorCode::invalid_argument, "coordinate out of range");
    double saved = p.value(r, c);
    p.value(r, c) = saved + epsilon;
    double hi = fn();
    p.value(r, c) = saved - epsilon;
    double lo = fn();
    p.value(r, c) = saved;
    out.push_back((hi - lo) / (2.0 * epsilon));
  }
  return out;
}

}  // namespace shift::nn
