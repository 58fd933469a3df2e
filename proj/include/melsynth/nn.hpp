#pragma once

#include "melsynth/common.hpp"

#include <cmath>
#include <unordered_map>
#include <vector>

namespace melsynth {

// Reverse-mode autodiff over 2-D matrices, one tape per forward pass.
// Sequences are rows, channels are columns. Parameters enter through
// param(); after backward() their gradients are keyed by param id so a
// training loop can reduce per-example tapes deterministically.
template <class T>
class Tape {
 public:
  struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
  };

  Var input(Mat<T> v) { return push(Op::kInput, std::move(v), {}, {}, false); }

  Var param(const Mat<T>& v, int param_id) {
    Var out = push(Op::kParam, v, {}, {}, true);
    node(out).param_id = param_id;
    return out;
  }

  // C = op(A) * op(B) with optional transposes.
  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    const Mat<T>& av = value(a);
    const Mat<T>& bv = value(b);
    Mat<T> out;
    if (!ta && !tb)
      out.noalias() = av * bv;
    else if (ta && !tb)
      out.noalias() = av.transpose() * bv;
    else if (!ta && tb)
      out.noalias() = av * bv.transpose();
    else
      out.noalias() = av.transpose() * bv.transpose();
    Var v = push(Op::kMatMul, std::move(out), a, b, needs(a) || needs(b));
    node(v).flag_a = ta;
    node(v).flag_b = tb;
    return v;
  }

  Var add(Var a, Var b) { return push(Op::kAdd, value(a) + value(b), a, b, needs(a) || needs(b)); }
  Var sub(Var a, Var b) { return push(Op::kSub, value(a) - value(b), a, b, needs(a) || needs(b)); }

  Var hadamard(Var a, Var b) {
    return push(Op::kHadamard, value(a).cwiseProduct(value(b)), a, b, needs(a) || needs(b));
  }

  Var scale(Var a, T s) {
    Var v = push(Op::kScale, (value(a).array() * s).matrix(), a, {}, needs(a));
    node(v).scalar = s;
    return v;
  }

  Var add_scalar(Var a, T s) {
    Var v = push(Op::kAddScalar, (value(a).array() + s).matrix(), a, {}, needs(a));
    node(v).scalar = s;
    return v;
  }

  // row is 1 x C, broadcast over the rows of a.
  Var add_row(Var a, Var row) {
    Mat<T> out = value(a);
    out.rowwise() += value(row).row(0);
    return push(Op::kAddRow, std::move(out), a, row, needs(a) || needs(row));
  }

  Var mul_row(Var a, Var row) {
    Mat<T> out = value(a);
    out.array().rowwise() *= value(row).row(0).array();
    return push(Op::kMulRow, std::move(out), a, row, needs(a) || needs(row));
  }

  Var tile_rows(Var row, int n) {
    Mat<T> out = value(row).row(0).replicate(n, 1);
    return push(Op::kTileRows, std::move(out), row, {}, needs(row));
  }

  // y_rc = x_rc * g_c / sqrt(mean_c(x_r^2) + eps)
  Var rmsnorm(Var x, Var gain, T eps = static_cast<T>(1e-6)) {
    const Mat<T>& xv = value(x);
    const Mat<T>& gv = value(gain);
    Mat<T> out(xv.rows(), xv.cols());
    std::vector<T> inv(static_cast<size_t>(xv.rows()));
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      T ms = xv.row(r).squaredNorm() / static_cast<T>(xv.cols());
      inv[static_cast<size_t>(r)] = static_cast<T>(1) / std::sqrt(ms + eps);
      out.row(r) = xv.row(r).cwiseProduct(gv.row(0)) * inv[static_cast<size_t>(r)];
    }
    Var v = push(Op::kRmsNorm, std::move(out), x, gain, needs(x) || needs(gain));
    node(v).aux = std::move(inv);
    return v;
  }

  Var gelu(Var x) {
    const Mat<T>& xv = value(x);
    Mat<T> out(xv.rows(), xv.cols());
    for (Eigen::Index r = 0; r < xv.rows(); ++r)
      for (Eigen::Index c = 0; c < xv.cols(); ++c) {
        T v = xv(r, c);
        out(r, c) = static_cast<T>(0.5) * v *
                    (static_cast<T>(1) + std::erf(v / static_cast<T>(M_SQRT2)));
      }
    return push(Op::kGelu, std::move(out), x, {}, needs(x));
  }

  // Row-wise softmax. key_mask (optional) marks valid columns; causal limits
  // row r to columns <= r. Fully-masked rows produce all-zero probabilities.
  Var softmax_rows(Var scores, std::vector<uint8_t> key_mask = {}, bool causal = false) {
    const Mat<T>& s = value(scores);
    if (!key_mask.empty() && static_cast<Eigen::Index>(key_mask.size()) != s.cols())
      throw ValueError("softmax_rows: mask size mismatch");
    Mat<T> p = Mat<T>::Zero(s.rows(), s.cols());
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const Eigen::Index hi = causal ? std::min<Eigen::Index>(r + 1, s.cols()) : s.cols();
      T m = -std::numeric_limits<T>::infinity();
      for (Eigen::Index c = 0; c < hi; ++c)
        if (key_mask.empty() || key_mask[static_cast<size_t>(c)]) m = std::max(m, s(r, c));
      if (!std::isfinite(m)) continue;
      T sum = 0;
      for (Eigen::Index c = 0; c < hi; ++c) {
        if (!key_mask.empty() && !key_mask[static_cast<size_t>(c)]) continue;
        T e = std::exp(s(r, c) - m);
        p(r, c) = e;
        sum += e;
      }
      p.row(r) /= sum;
    }
    Var v = push(Op::kSoftmax, std::move(p), scores, {}, needs(scores));
    node(v).mask = std::move(key_mask);
    node(v).flag_a = causal;
    return v;
  }

  Var slice_cols(Var a, int c0, int n) {
    Var v = push(Op::kSliceCols, value(a).middleCols(c0, n), a, {}, needs(a));
    node(v).i0 = c0;
    node(v).i1 = n;
    return v;
  }

  Var concat_cols(Var a, Var b) {
    const Mat<T>& av = value(a);
    const Mat<T>& bv = value(b);
    Mat<T> out(av.rows(), av.cols() + bv.cols());
    out.leftCols(av.cols()) = av;
    out.rightCols(bv.cols()) = bv;
    return push(Op::kConcatCols, std::move(out), a, b, needs(a) || needs(b));
  }

  Var concat_rows(Var a, Var b) {
    const Mat<T>& av = value(a);
    const Mat<T>& bv = value(b);
    Mat<T> out(av.rows() + bv.rows(), av.cols());
    out.topRows(av.rows()) = av;
    out.bottomRows(bv.rows()) = bv;
    return push(Op::kConcatRows, std::move(out), a, b, needs(a) || needs(b));
  }

  Var gather_rows(Var table, std::vector<int> ids) {
    const Mat<T>& tv = value(table);
    Mat<T> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= tv.rows()) throw ValueError("gather_rows: id out of range");
      out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
    }
    Var v = push(Op::kGatherRows, std::move(out), table, {}, needs(table));
    node(v).ids = std::move(ids);
    return v;
  }

  Var mean_abs(Var a) {
    Mat<T> out(1, 1);
    out(0, 0) = value(a).cwiseAbs().mean();
    return push(Op::kMeanAbs, std::move(out), a, {}, needs(a));
  }

  Var mean_sq(Var a) {
    Mat<T> out(1, 1);
    out(0, 0) = value(a).array().square().mean();
    return push(Op::kMeanSq, std::move(out), a, {}, needs(a));
  }

  const Mat<T>& value(Var v) const { return nodes_[check(v)].val; }

  void backward(Var loss) {
    Node& top = nodes_[check(loss)];
    if (top.val.rows() != 1 || top.val.cols() != 1)
      throw ValueError("backward: loss must be a scalar");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    param_grads_.clear();
    top.grad = Mat<T>::Ones(1, 1);
    for (int i = loss.i; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      step_back(n);
      if (n.op == Op::kParam) {
        auto [it, fresh] = param_grads_.try_emplace(n.param_id);
        if (fresh)
          it->second = n.grad;
        else
          it->second += n.grad;
      }
    }
  }

  const Mat<T>& grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) {
      static const Mat<T> empty;
      return empty;
    }
    return n.grad;
  }

  const std::unordered_map<int, Mat<T>>& param_grads() const { return param_grads_; }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  enum class Op {
    kInput, kParam, kMatMul, kAdd, kSub, kHadamard, kScale, kAddScalar, kAddRow,
    kMulRow, kTileRows, kRmsNorm, kGelu, kSoftmax, kSliceCols, kConcatCols,
    kConcatRows, kGatherRows, kMeanAbs, kMeanSq,
  };

  struct Node {
    Op op;
    int a = -1, b = -1;
    Mat<T> val;
    Mat<T> grad;
    bool needs_grad = false;
    bool flag_a = false, flag_b = false;  // matmul transposes / softmax causal
    T scalar{};
    int i0 = 0, i1 = 0;
    int param_id = -1;
    std::vector<int> ids;
    std::vector<uint8_t> mask;
    std::vector<T> aux;
  };

  size_t check(Var v) const {
    if (!v.valid() || static_cast<size_t>(v.i) >= nodes_.size())
      throw ValueError("tape: invalid var");
    return static_cast<size_t>(v.i);
  }

  Node& node(Var v) { return nodes_[check(v)]; }
  bool needs(Var v) const { return v.valid() && nodes_[check(v)].needs_grad; }

  Var push(Op op, Mat<T> val, Var a, Var b, bool needs_grad) {
    Node n;
    n.op = op;
    n.val = std::move(val);
    n.a = a.i;
    n.b = b.i;
    n.needs_grad = needs_grad || op == Op::kParam;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void accum(int idx, const Mat<T>& g) {
    if (idx < 0) return;
    Node& n = nodes_[static_cast<size_t>(idx)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  Mat<T>& ensure_grad(int idx) {
    Node& n = nodes_[static_cast<size_t>(idx)];
    if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  void step_back(Node& n) {
    const Mat<T>& g = n.grad;
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
        break;
      case Op::kMatMul: {
        const Mat<T>& av = nodes_[n.a].val;
        const Mat<T>& bv = nodes_[n.b].val;
        if (nodes_[n.a].needs_grad) {
          Mat<T>& da = ensure_grad(n.a);
          if (!n.flag_a && !n.flag_b)
            da.noalias() += g * bv.transpose();
          else if (n.flag_a && !n.flag_b)
            da.noalias() += bv * g.transpose();
          else if (!n.flag_a && n.flag_b)
            da.noalias() += g * bv;
          else
            da.noalias() += bv.transpose() * g.transpose();
        }
        if (nodes_[n.b].needs_grad) {
          Mat<T>& db = ensure_grad(n.b);
          if (!n.flag_a && !n.flag_b)
            db.noalias() += av.transpose() * g;
          else if (n.flag_a && !n.flag_b)
            db.noalias() += av * g;
          else if (!n.flag_a && n.flag_b)
            db.noalias() += g.transpose() * av;
          else
            db.noalias() += g.transpose() * av.transpose();
        }
        break;
      }
      case Op::kAdd:
        accum(n.a, g);
        accum(n.b, g);
        break;
      case Op::kSub:
        accum(n.a, g);
        if (n.b >= 0 && nodes_[n.b].needs_grad) ensure_grad(n.b) -= g;
        break;
      case Op::kHadamard:
        if (nodes_[n.a].needs_grad) ensure_grad(n.a) += g.cwiseProduct(nodes_[n.b].val);
        if (nodes_[n.b].needs_grad) ensure_grad(n.b) += g.cwiseProduct(nodes_[n.a].val);
        break;
      case Op::kScale:
        if (nodes_[n.a].needs_grad) ensure_grad(n.a) += g * n.scalar;
        break;
      case Op::kAddScalar:
        accum(n.a, g);
        break;
      case Op::kAddRow:
        accum(n.a, g);
        if (nodes_[n.b].needs_grad) ensure_grad(n.b) += g.colwise().sum();
        break;
      case Op::kMulRow: {
        const Mat<T>& row = nodes_[n.b].val;
        if (nodes_[n.a].needs_grad) {
          Mat<T> da = g;
          da.array().rowwise() *= row.row(0).array();
          ensure_grad(n.a) += da;
        }
        if (nodes_[n.b].needs_grad)
          ensure_grad(n.b) += g.cwiseProduct(nodes_[n.a].val).colwise().sum();
        break;
      }
      case Op::kTileRows:
        if (nodes_[n.a].needs_grad) ensure_grad(n.a) += g.colwise().sum();
        break;
      case Op::kRmsNorm: {
        const Mat<T>& xv = nodes_[n.a].val;
        const Mat<T>& gv = nodes_[n.b].val;
        const T cols = static_cast<T>(xv.cols());
        if (nodes_[n.b].needs_grad) {
          Mat<T>& dg = ensure_grad(n.b);
          for (Eigen::Index r = 0; r < xv.rows(); ++r)
            dg.row(0) += g.row(r).cwiseProduct(xv.row(r)) * n.aux[static_cast<size_t>(r)];
        }
        if (nodes_[n.a].needs_grad) {
          Mat<T>& dx = ensure_grad(n.a);
          for (Eigen::Index r = 0; r < xv.rows(); ++r) {
            const T inv = n.aux[static_cast<size_t>(r)];
            const T s = g.row(r).cwiseProduct(xv.row(r)).cwiseProduct(gv.row(0)).sum();
            dx.row(r) += inv * g.row(r).cwiseProduct(gv.row(0)) -
                         (inv * inv * inv / cols) * s * xv.row(r);
          }
        }
        break;
      }
      case Op::kGelu: {
        if (!nodes_[n.a].needs_grad) break;
        const Mat<T>& xv = nodes_[n.a].val;
        Mat<T>& dx = ensure_grad(n.a);
        constexpr T inv_sqrt_2pi = static_cast<T>(0.3989422804014327);
        for (Eigen::Index r = 0; r < xv.rows(); ++r)
          for (Eigen::Index c = 0; c < xv.cols(); ++c) {
            const T v = xv(r, c);
            const T cdf = static_cast<T>(0.5) *
                          (static_cast<T>(1) + std::erf(v / static_cast<T>(M_SQRT2)));
            const T pdf = inv_sqrt_2pi * std::exp(static_cast<T>(-0.5) * v * v);
            dx(r, c) += g(r, c) * (cdf + v * pdf);
          }
        break;
      }
      case Op::kSoftmax: {
        if (!nodes_[n.a].needs_grad) break;
        const Mat<T>& p = n.val;
        Mat<T>& ds = ensure_grad(n.a);
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          const T dot = g.row(r).cwiseProduct(p.row(r)).sum();
          ds.row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(p.row(r));
        }
        break;
      }
      case Op::kSliceCols:
        if (nodes_[n.a].needs_grad) ensure_grad(n.a).middleCols(n.i0, n.i1) += g;
        break;
      case Op::kConcatCols: {
        const Eigen::Index ac = nodes_[n.a].val.cols();
        if (nodes_[n.a].needs_grad) ensure_grad(n.a) += g.leftCols(ac);
        if (nodes_[n.b].needs_grad) ensure_grad(n.b) += g.rightCols(g.cols() - ac);
        break;
      }
      case Op::kConcatRows: {
        const Eigen::Index ar = nodes_[n.a].val.rows();
        if (nodes_[n.a].needs_grad) ensure_grad(n.a) += g.topRows(ar);
        if (nodes_[n.b].needs_grad) ensure_grad(n.b) += g.bottomRows(g.rows() - ar);
        break;
      }
      case Op::kGatherRows: {
        if (!nodes_[n.a].needs_grad) break;
        Mat<T>& dt = ensure_grad(n.a);
        for (size_t i = 0; i < n.ids.size(); ++i)
          dt.row(n.ids[i]) += g.row(static_cast<Eigen::Index>(i));
        break;
      }
      case Op::kMeanAbs: {
        if (!nodes_[n.a].needs_grad) break;
        const Mat<T>& xv = nodes_[n.a].val;
        const T w = g(0, 0) / static_cast<T>(xv.size());
        Mat<T>& dx = ensure_grad(n.a);
        for (Eigen::Index r = 0; r < xv.rows(); ++r)
          for (Eigen::Index c = 0; c < xv.cols(); ++c) {
            const T v = xv(r, c);
            dx(r, c) += v > 0 ? w : (v < 0 ? -w : static_cast<T>(0));
          }
        break;
      }
      case Op::kMeanSq: {
        if (!nodes_[n.a].needs_grad) break;
        const Mat<T>& xv = nodes_[n.a].val;
        const T w = static_cast<T>(2) * g(0, 0) / static_cast<T>(xv.size());
        ensure_grad(n.a) += w * xv;
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<int, Mat<T>> param_grads_;
};

}  // namespace melsynth
