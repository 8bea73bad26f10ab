#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "shift/dense.hpp"
#include "shift/params.hpp"

namespace shift::ad {

using nn::Matrix;

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid for the
/// lifetime of the tape that produced it.
struct Expr {
  Tape* tape = nullptr;
  std::size_t idx = 0;

  const Matrix& val() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
  double scalar() const;
};

/// Reverse-mode autodiff over dense double matrices.
///
/// Forward calls append nodes; backward(loss) replays them in reverse and
/// accumulates into the grad buffer of every trainable ParamTensor reachable
/// from the loss. Leaves view ParamTensor storage instead of copying it, so
/// parameter values must not be mutated while a tape built on them is still
/// in use. One tape per sample (or per generation pass) is the intended
/// usage; tapes are single-threaded.
class Tape {
 public:
  /// record_grads=false skips backward bookkeeping (cheaper eval passes);
  /// check_finite=false skips the per-op NaN/Inf scan.
  explicit Tape(bool record_grads = true, bool check_finite = true)
      : record_grads_(record_grads), check_finite_(check_finite) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Entry points.
  Expr constant(Matrix m);
  /// Viewing constant: caller guarantees `m` outlives the tape.
  Expr constant_ref(const Matrix& m);
  /// Parameter leaf; cached, so one node per ParamTensor per tape.
  Expr leaf(nn::ParamTensor& p);

  // Core ops.
  Expr matmul(Expr a, Expr b);
  Expr add(Expr a, Expr b);
  Expr sub(Expr a, Expr b);
  Expr add_rowvec(Expr x, Expr v);
  Expr scale(Expr x, double s);
  Expr hadamard(Expr a, Expr b);
  Expr transpose(Expr x);
  /// axis=1: each row sums to 1; axis=0: each column sums to 1.
  Expr softmax(Expr x, int axis = 1);
  Expr log_softmax_rows(Expr x);
  Expr layer_norm(Expr x, Expr gain, Expr bias);
  Expr relu(Expr x);
  Expr gelu(Expr x);
  Expr embedding_lookup(Expr table, const std::vector<int>& ids);
  /// Identity when train=false or rate=0; otherwise inverted-dropout mask
  /// drawn from a dedicated stream seeded by `key`.
  Expr dropout(Expr x, double rate, bool train, std::uint64_t key);
  /// axis=0 stacks rows, axis=1 stacks columns.
  Expr concat(const std::vector<Expr>& xs, int axis);
  Expr block(Expr x, Eigen::Index row0, Eigen::Index col0, Eigen::Index nrows,
             Eigen::Index ncols);
  Expr mean_over_rows(Expr x);
  Expr sum(Expr x);
  /// out(i,0) = x(i, cols[i]).
  Expr pick_per_row(Expr x, const std::vector<int>& cols);

  /// Reverse sweep from a 1x1 loss. Node gradients are rebuilt from scratch
  /// on each call; ParamTensor grads accumulate across calls.
  void backward(Expr loss);

  std::size_t size() const { return nodes_.size(); }
  /// Gradient of `loss` w.r.t. the node, from the most recent backward().
  /// Zero matrix if the node was unreachable.
  Matrix grad_of(Expr e) const;

  const Matrix& node_val(std::size_t idx) const;

 private:
  struct Node {
    Matrix stored;
    const Matrix* viewed = nullptr;
    Matrix grad;
    nn::ParamTensor* param = nullptr;
    std::function<void(Tape&)> pull;

    const Matrix& val() const { return viewed ? *viewed : stored; }
  };

  Expr push(Matrix out, std::function<void(Tape&)> pull, const char* what);
  Expr push_view(const Matrix* view, std::function<void(Tape&)> pull,
                 const char* what);
  void check_mine(Expr e) const;

  template <typename D>
  void acc(std::size_t idx, const Eigen::MatrixBase<D>& delta) {
    Node& n = nodes_[idx];
    if (n.grad.size() == 0)
      n.grad = delta;
    else
      n.grad += delta;
  }

  std::vector<Node> nodes_;
  std::map<const nn::ParamTensor*, std::size_t> leaf_cache_;
  bool record_grads_;
  bool check_finite_;
};

}  // namespace shift::ad
