#include "shift/tape.hpp"

#include <cmath>

#include "shift/error.hpp"
#include "shift/rng.hpp"

namespace shift::ad {

const Matrix& Expr::val() const { return tape->node_val(idx); }

double Expr::scalar() const {
  const Matrix& v = val();
  require(v.rows() == 1 && v.cols() == 1, ErrorCode::not_scalar,
          "expression is not 1x1");
  return v(0, 0);
}

const Matrix& Tape::node_val(std::size_t idx) const { return nodes_[idx].val(); }

void Tape::check_mine(Expr e) const {
  require(e.tape == this && e.idx < nodes_.size(), ErrorCode::invalid_argument,
          "expression belongs to a different tape");
}

Expr Tape::push(Matrix out, std::function<void(Tape&)> pull, const char* what) {
  if (check_finite_)
    require(out.allFinite(), ErrorCode::non_finite,
            std::string(what) + " produced a non-finite value");
  Node n;
  n.stored = std::move(out);
  if (record_grads_) n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return Expr{this, nodes_.size() - 1};
}

Expr Tape::push_view(const Matrix* view, std::function<void(Tape&)> pull,
                     const char* what) {
  if (check_finite_)
    require(view->allFinite(), ErrorCode::non_finite,
            std::string(what) + " holds a non-finite value");
  Node n;
  n.viewed = view;
  if (record_grads_) n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return Expr{this, nodes_.size() - 1};
}

Expr Tape::constant(Matrix m) { return push(std::move(m), nullptr, "constant"); }

Expr Tape::constant_ref(const Matrix& m) {
  return push_view(&m, nullptr, "constant");
}

Expr Tape::leaf(nn::ParamTensor& p) {
  auto it = leaf_cache_.find(&p);
  if (it != leaf_cache_.end()) return Expr{this, it->second};
  Expr e = push_view(&p.value, nullptr, "parameter");
  nodes_[e.idx].param = &p;
  leaf_cache_[&p] = e.idx;
  return e;
}

Expr Tape::matmul(Expr a, Expr b) {
  check_mine(a);
  check_mine(b);
  const Matrix& A = a.val();
  const Matrix& B = b.val();
  require(A.cols() == B.rows(), ErrorCode::shape_mismatch, "matmul inner dims");
  std::size_t ia = a.idx, ib = b.idx;
  std::size_t io = nodes_.size();
  return push(A * B,
              [ia, ib, io](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                t.acc(ia, g * t.node_val(ib).transpose());
                t.acc(ib, t.node_val(ia).transpose() * g);
              },
              "matmul");
}

Expr Tape::add(Expr a, Expr b) {
  check_mine(a);
  check_mine(b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::shape_mismatch,
          "add shapes");
  std::size_t ia = a.idx, ib = b.idx;
  std::size_t io = nodes_.size();
  return push(a.val() + b.val(),
              [ia, ib, io](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                t.acc(ia, g);
                t.acc(ib, g);
              },
              "add");
}

Expr Tape::sub(Expr a, Expr b) {
  check_mine(a);
  check_mine(b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::shape_mismatch,
          "sub shapes");
  std::size_t ia = a.idx, ib = b.idx;
  std::size_t io = nodes_.size();
  return push(a.val() - b.val(),
              [ia, ib, io](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                t.acc(ia, g);
                t.acc(ib, -g);
              },
              "sub");
}

Expr Tape::add_rowvec(Expr x, Expr v) {
  check_mine(x);
  check_mine(v);
  require(v.rows() == 1 && v.cols() == x.cols(), ErrorCode::shape_mismatch,
          "add_rowvec wants a 1xC vector");
  std::size_t ix = x.idx, iv = v.idx;
  std::size_t io = nodes_.size();
  Matrix out = x.val().rowwise() + v.val().row(0);
  return push(std::move(out),
              [ix, iv, io](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                t.acc(ix, g);
                t.acc(iv, g.colwise().sum());
              },
              "add_rowvec");
}

Expr Tape::scale(Expr x, double s) {
  check_mine(x);
  std::size_t ix = x.idx;
  std::size_t io = nodes_.size();
  return push(x.val() * s,
              [ix, io, s](Tape& t) { t.acc(ix, t.nodes_[io].grad * s); },
              "scale");
}

Expr Tape::hadamard(Expr a, Expr b) {
  check_mine(a);
  check_mine(b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::shape_mismatch,
          "hadamard shapes");
  std::size_t ia = a.idx, ib = b.idx;
  std::size_t io = nodes_.size();
  return push(a.val().cwiseProduct(b.val()),
              [ia, ib, io](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                t.acc(ia, g.cwiseProduct(t.node_val(ib)));
                t.acc(ib, g.cwiseProduct(t.node_val(ia)));
              },
              "hadamard");
}

Expr Tape::transpose(Expr x) {
  check_mine(x);
  std::size_t ix = x.idx;
  std::size_t io = nodes_.size();
  return push(x.val().transpose(),
              [ix, io](Tape& t) { t.acc(ix, t.nodes_[io].grad.transpose()); },
              "transpose");
}

Expr Tape::softmax(Expr x, int axis) {
  check_mine(x);
  require(axis == 0 || axis == 1, ErrorCode::invalid_argument,
          "softmax axis must be 0 or 1");
  if (axis == 0) return transpose(softmax(transpose(x), 1));
  std::size_t ix = x.idx;
  std::size_t io = nodes_.size();
  return push(nn::softmax_rows(x.val()),
              [ix, io](Tape& t) {
                const Matrix& y = t.node_val(io);
                const Matrix& g = t.nodes_[io].grad;
                Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
                Matrix dx =
                    (y.array() * (g.array().colwise() - dot.array())).matrix();
                t.acc(ix, dx);
              },
              "softmax");
}

Expr Tape::log_softmax_rows(Expr x) {
  check_mine(x);
  std::size_t ix = x.idx;
  std::size_t io = nodes_.size();
  return push(nn::log_softmax_rows(x.val()),
              [ix, io](Tape& t) {
                const Matrix& y = t.node_val(io);
                const Matrix& g = t.nodes_[io].grad;
                Eigen::VectorXd rowsum = g.rowwise().sum();
                Matrix dx =
                    g - (y.array().exp().colwise() * rowsum.array()).matrix();
                t.acc(ix, dx);
              },
              "log_softmax");
}

Expr Tape::layer_norm(Expr x, Expr gain, Expr bias) {
  check_mine(x);
  check_mine(gain);
  check_mine(bias);
  require(gain.rows() == 1 && gain.cols() == x.cols() && bias.rows() == 1 &&
              bias.cols() == x.cols(),
          ErrorCode::shape_mismatch, "layer_norm gain/bias must be 1xC");
  const Matrix& X = x.val();
  Eigen::VectorXd mean = X.rowwise().mean();
  Matrix centered = X.colwise() - mean;
  Eigen::VectorXd inv =
      (centered.array().square().rowwise().mean() + nn::kLayerNormEps).rsqrt();
  Matrix xhat = (centered.array().colwise() * inv.array()).matrix();
  Matrix out =
      (xhat.array().rowwise() * gain.val().row(0).array()).matrix().rowwise() +
      bias.val().row(0);

  std::size_t ix = x.idx, ig = gain.idx, ib = bias.idx;
  std::size_t io = nodes_.size();
  return push(
      std::move(out),
      [ix, ig, ib, io, xhat = std::move(xhat), inv = std::move(inv)](Tape& t) {
        const Matrix& g = t.nodes_[io].grad;
        t.acc(ib, g.colwise().sum());
        t.acc(ig, g.cwiseProduct(xhat).colwise().sum());
        // Pull through the per-row standardization.
        Matrix gy =
            (g.array().rowwise() * t.node_val(ig).row(0).array()).matrix();
        Eigen::VectorXd m1 = gy.rowwise().mean();
        Eigen::VectorXd m2 = gy.cwiseProduct(xhat).rowwise().mean();
        Matrix dx = ((gy.colwise() - m1) -
                     (xhat.array().colwise() * m2.array()).matrix())
                        .array()
                        .colwise() *
                    inv.array();
        t.acc(ix, dx.matrix());
      },
      "layer_norm");
}

Expr Tape::relu(Expr x) {
  check_mine(x);
  std::size_t ix = x.idx;
  std::size_t io = nodes_.size();
  return push(x.val().cwiseMax(0.0),
              [ix, io](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                Matrix mask =
                    (t.node_val(ix).array() > 0.0).cast<double>().matrix();
                t.acc(ix, g.cwiseProduct(mask));
              },
              "relu");
}

Expr Tape::gelu(Expr x) {
  check_mine(x);
  std::size_t ix = x.idx;
  std::size_t io = nodes_.size();
  return push(nn::gelu(x.val()),
              [ix, io](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                Matrix dgelu = t.node_val(ix).unaryExpr(
                    [](double v) { return nn::gelu_grad_scalar(v); });
                t.acc(ix, g.cwiseProduct(dgelu));
              },
              "gelu");
}

Expr Tape::embedding_lookup(Expr table, const std::vector<int>& ids) {
  check_mine(table);
  const Matrix& T = table.val();
  require(!ids.empty(), ErrorCode::empty_input, "embedding_lookup of no ids");
  for (int id : ids)
    require(id >= 0 && id < T.rows(), ErrorCode::unknown_id,
            "embedding id out of range");
  Matrix out(static_cast<Eigen::Index>(ids.size()), T.cols());
  for (std::size_t k = 0; k < ids.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = T.row(ids[k]);
  std::size_t it_ = table.idx;
  std::size_t io = nodes_.size();
  return push(std::move(out),
              [it_, io, ids](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                const Matrix& T = t.node_val(it_);
                Matrix dT = Matrix::Zero(T.rows(), T.cols());
                for (std::size_t k = 0; k < ids.size(); ++k)
                  dT.row(ids[k]) += g.row(static_cast<Eigen::Index>(k));
                t.acc(it_, dT);
              },
              "embedding_lookup");
}

Expr Tape::dropout(Expr x, double rate, bool train, std::uint64_t key) {
  check_mine(x);
  require(rate >= 0.0 && rate < 1.0, ErrorCode::invalid_argument,
          "dropout rate must lie in [0,1)");
  if (!train || rate == 0.0) return x;
  const Matrix& X = x.val();
  SplitMix64 rng(key);
  double keep = 1.0 - rate;
  Matrix mask(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      mask(r, c) = rng.uniform() < keep ? 1.0 / keep : 0.0;
  std::size_t ix = x.idx;
  std::size_t io = nodes_.size();
  return push(X.cwiseProduct(mask),
              [ix, io, mask](Tape& t) {
                t.acc(ix, t.nodes_[io].grad.cwiseProduct(mask));
              },
              "dropout");
}

Expr Tape::concat(const std::vector<Expr>& xs, int axis) {
  require(!xs.empty(), ErrorCode::empty_input, "concat of nothing");
  require(axis == 0 || axis == 1, ErrorCode::invalid_argument,
          "concat axis must be 0 or 1");
  for (Expr e : xs) check_mine(e);
  Eigen::Index rows = xs[0].rows(), cols = xs[0].cols();
  for (std::size_t k = 1; k < xs.size(); ++k) {
    if (axis == 1) {
      require(xs[k].rows() == rows, ErrorCode::shape_mismatch,
              "concat axis=1 needs equal row counts");
      cols += xs[k].cols();
    } else {
      require(xs[k].cols() == cols, ErrorCode::shape_mismatch,
              "concat axis=0 needs equal column counts");
      rows += xs[k].rows();
    }
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> idxs;
  std::vector<Eigen::Index> offs;
  Eigen::Index off = 0;
  for (Expr e : xs) {
    idxs.push_back(e.idx);
    offs.push_back(off);
    if (axis == 1) {
      out.middleCols(off, e.cols()) = e.val();
      off += e.cols();
    } else {
      out.middleRows(off, e.rows()) = e.val();
      off += e.rows();
    }
  }
  std::size_t io = nodes_.size();
  return push(std::move(out),
              [idxs, offs, axis, io](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                for (std::size_t k = 0; k < idxs.size(); ++k) {
                  const Matrix& v = t.node_val(idxs[k]);
                  if (axis == 1)
                    t.acc(idxs[k], g.middleCols(offs[k], v.cols()));
                  else
                    t.acc(idxs[k], g.middleRows(offs[k], v.rows()));
                }
              },
              "concat");
}

Expr Tape::block(Expr x, Eigen::Index row0, Eigen::Index col0, Eigen::Index nrows,
                 Eigen::Index ncols) {
  check_mine(x);
  require(row0 >= 0 && col0 >= 0 && nrows >= 1 && ncols >= 1 &&
              row0 + nrows <= x.rows() && col0 + ncols <= x.cols(),
          ErrorCode::shape_mismatch, "block out of range");
  std::size_t ix = x.idx;
  std::size_t io = nodes_.size();
  return push(x.val().block(row0, col0, nrows, ncols),
              [ix, io, row0, col0, nrows, ncols](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                const Matrix& v = t.node_val(ix);
                Matrix dx = Matrix::Zero(v.rows(), v.cols());
                dx.block(row0, col0, nrows, ncols) = g;
                t.acc(ix, dx);
              },
              "block");
}

Expr Tape::mean_over_rows(Expr x) {
  check_mine(x);
  std::size_t ix = x.idx;
  std::size_t io = nodes_.size();
  Eigen::Index nr = x.rows();
  return push(x.val().colwise().mean(),
              [ix, io, nr](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                t.acc(ix, (g / static_cast<double>(nr)).replicate(nr, 1));
              },
              "mean_over_rows");
}

Expr Tape::sum(Expr x) {
  check_mine(x);
  std::size_t ix = x.idx;
  std::size_t io = nodes_.size();
  Matrix out(1, 1);
  out(0, 0) = x.val().sum();
  return push(std::move(out),
              [ix, io](Tape& t) {
                double g = t.nodes_[io].grad(0, 0);
                const Matrix& v = t.node_val(ix);
                t.acc(ix, Matrix::Constant(v.rows(), v.cols(), g));
              },
              "sum");
}

Expr Tape::pick_per_row(Expr x, const std::vector<int>& cols) {
  check_mine(x);
  require(static_cast<Eigen::Index>(cols.size()) == x.rows(),
          ErrorCode::shape_mismatch, "pick_per_row wants one column per row");
  const Matrix& X = x.val();
  for (int c : cols)
    require(c >= 0 && c < X.cols(), ErrorCode::shape_mismatch,
            "pick_per_row column out of range");
  Matrix out(X.rows(), 1);
  for (Eigen::Index r = 0; r < X.rows(); ++r) out(r, 0) = X(r, cols[r]);
  std::size_t ix = x.idx;
  std::size_t io = nodes_.size();
  return push(std::move(out),
              [ix, io, cols](Tape& t) {
                const Matrix& g = t.nodes_[io].grad;
                const Matrix& v = t.node_val(ix);
                Matrix dx = Matrix::Zero(v.rows(), v.cols());
                for (Eigen::Index r = 0; r < v.rows(); ++r)
                  dx(r, cols[r]) = g(r, 0);
                t.acc(ix, dx);
              },
              "pick_per_row");
}

void Tape::backward(Expr loss) {
  check_mine(loss);
  require(record_grads_, ErrorCode::invalid_argument,
          "backward on a forward-only tape");
  {
    const Matrix& v = nodes_[loss.idx].val();
    require(v.rows() == 1 && v.cols() == 1, ErrorCode::not_scalar,
            "backward needs a 1x1 loss");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.idx].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.idx + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.pull) continue;
    n.pull(*this);
  }
  for (const auto& [param, idx] : leaf_cache_) {
    Node& n = nodes_[idx];
    if (n.grad.size() == 0) continue;
    if (n.param && n.param->trainable) n.param->grad += n.grad;
  }
}

Matrix Tape::grad_of(Expr e) const {
  check_mine(e);
  const Node& n = nodes_[e.idx];
  if (n.grad.size() == 0) return Matrix::Zero(n.val().rows(), n.val().cols());
  return n.grad;
}

}  // namespace shift::ad
