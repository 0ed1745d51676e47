// mtssl/autograd.hpp

// Copyright 2026  mtssl authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices. Graphs
// are built eagerly by the op functions below; Backward() walks them in
// reverse topological order and accumulates into Node::grad.

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mtssl/common.hpp"
#include "mtssl/streammask.hpp"

namespace mtssl::ag {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void Accumulate(const Matrix& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
  void ZeroGrad() { grad.resize(0, 0); }
  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
};

using Var = std::shared_ptr<Node>;

inline Var Constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

inline Var Parameter(Matrix value) {
  auto n = Constant(std::move(value));
  n->requires_grad = true;
  return n;
}

inline double Scalar(const Var& v) { return v->value(0, 0); }

namespace detail {
inline Var MakeOp(Matrix value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}
inline void CheckSame(const Var& a, const Var& b, const char* op) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw ShapeError(StrCat(op, ": shape ", a->rows(), "x", a->cols(), " vs ", b->rows(), "x", b->cols()));
}
}  // namespace detail

/// Reverse pass from a 1x1 output. Only nodes that require grad participate.
inline void Backward(const Var& root, double seed = 1.0) {
  if (root->rows() != 1 || root->cols() != 1) throw ShapeError("Backward needs a scalar root");
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->Accumulate(Matrix::Constant(1, 1, seed));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var MatMul(const Var& a, const Var& b) {
  if (a->cols() != b->rows()) throw ShapeError("MatMul: inner dimensions differ");
  return detail::MakeOp(a->value * b->value, {a, b}, [](Node& n) {
    auto& a = *n.parents[0];
    auto& b = *n.parents[1];
    if (a.requires_grad) a.Accumulate(n.grad * b.value.transpose());
    if (b.requires_grad) b.Accumulate(a.value.transpose() * n.grad);
  });
}

/// a * b^T
inline Var MatMulT(const Var& a, const Var& b) {
  if (a->cols() != b->cols()) throw ShapeError("MatMulT: inner dimensions differ");
  return detail::MakeOp(a->value * b->value.transpose(), {a, b}, [](Node& n) {
    auto& a = *n.parents[0];
    auto& b = *n.parents[1];
    if (a.requires_grad) a.Accumulate(n.grad * b.value);
    if (b.requires_grad) b.Accumulate(n.grad.transpose() * a.value);
  });
}

inline Var Add(const Var& a, const Var& b) {
  detail::CheckSame(a, b, "Add");
  return detail::MakeOp(a->value + b->value, {a, b}, [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->Accumulate(n.grad);
  });
}

/// a (R x C) + row (1 x C) broadcast over rows.
inline Var AddRow(const Var& a, const Var& row) {
  if (row->rows() != 1 || row->cols() != a->cols()) throw ShapeError("AddRow: bias shape");
  Matrix v = a->value.rowwise() + row->value.row(0);
  return detail::MakeOp(std::move(v), {a, row}, [](Node& n) {
    auto& a = *n.parents[0];
    auto& row = *n.parents[1];
    if (a.requires_grad) a.Accumulate(n.grad);
    if (row.requires_grad) row.Accumulate(n.grad.colwise().sum());
  });
}

inline Var Scale(const Var& a, double s) {
  return detail::MakeOp(a->value * s, {a}, [s](Node& n) { n.parents[0]->Accumulate(n.grad * s); });
}

inline Var Mul(const Var& a, const Var& b) {
  detail::CheckSame(a, b, "Mul");
  return detail::MakeOp(a->value.cwiseProduct(b->value), {a, b}, [](Node& n) {
    auto& a = *n.parents[0];
    auto& b = *n.parents[1];
    if (a.requires_grad) a.Accumulate(n.grad.cwiseProduct(b.value));
    if (b.requires_grad) b.Accumulate(n.grad.cwiseProduct(a.value));
  });
}

/// Sum of all entries as 1x1.
inline Var Sum(const Var& a) {
  return detail::MakeOp(Matrix::Constant(1, 1, a->value.sum()), {a}, [](Node& n) {
    auto& a = *n.parents[0];
    a.Accumulate(Matrix::Constant(a.rows(), a.cols(), n.grad(0, 0)));
  });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

inline Var Tanh(const Var& a) {
  Matrix y = a->value.array().tanh().matrix();
  return detail::MakeOp(y, {a}, [](Node& n) {
    n.parents[0]->Accumulate((n.grad.array() * (1.0 - n.value.array().square())).matrix());
  });
}

inline Var Sigmoid(const Var& a) {
  Matrix y = (1.0 / (1.0 + (-a->value.array()).exp())).matrix();
  return detail::MakeOp(y, {a}, [](Node& n) {
    n.parents[0]->Accumulate((n.grad.array() * n.value.array() * (1.0 - n.value.array())).matrix());
  });
}

inline constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)

/// tanh-approximated GELU.
inline Var Gelu(const Var& a) {
  constexpr double k = kGeluScale;
  const auto& x = a->value.array();
  Matrix inner_tanh = (k * (x + 0.044715 * x.cube())).tanh().matrix();
  Matrix y = (0.5 * x * (1.0 + inner_tanh.array())).matrix();
  return detail::MakeOp(std::move(y), {a}, [inner_tanh = std::move(inner_tanh)](Node& n) {
    const auto& x = n.parents[0]->value.array();
    const auto t = inner_tanh.array();
    const auto dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * kGeluScale * (1.0 + 3.0 * 0.044715 * x.square());
    n.parents[0]->Accumulate((n.grad.array() * dy).matrix());
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

inline Var LayerNorm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const Eigen::Index d = x->cols();
  if (gain->cols() != d || bias->cols() != d) throw ShapeError("LayerNorm: parameter shape");
  Matrix xhat(x->rows(), d);
  Vector inv_std(x->rows());
  for (Eigen::Index r = 0; r < x->rows(); ++r) {
    const double mu = x->value.row(r).mean();
    const double var = (x->value.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x->value.row(r).array() - mu) * inv_std[r];
  }
  Matrix y = (xhat.array().rowwise() * gain->value.row(0).array()).matrix().rowwise() + bias->value.row(0);
  return detail::MakeOp(std::move(y), {x, gain, bias},
                        [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
    auto& x = *n.parents[0];
    auto& gain = *n.parents[1];
    auto& bias = *n.parents[2];
    if (gain.requires_grad) gain.Accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
    if (bias.requires_grad) bias.Accumulate(n.grad.colwise().sum());
    if (x.requires_grad) {
      Matrix g = (n.grad.array().rowwise() * gain.value.row(0).array()).matrix();
      Matrix gx(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const double mg = g.row(r).mean();
        const double mgx = g.row(r).cwiseProduct(xhat.row(r)).mean();
        gx.row(r) = inv_std[r] * (g.row(r).array() - mg - xhat.row(r).array() * mgx);
      }
      x.Accumulate(gx);
    }
  });
}

inline Var LogSoftmaxRows(const Var& a) {
  Matrix y(a->rows(), a->cols());
  for (Eigen::Index r = 0; r < a->rows(); ++r) {
    const double m = a->value.row(r).maxCoeff();
    const double lse = m + std::log((a->value.row(r).array() - m).exp().sum());
    y.row(r) = a->value.row(r).array() - lse;
  }
  return detail::MakeOp(std::move(y), {a}, [](Node& n) {
    Matrix g(n.grad.rows(), n.grad.cols());
    for (Eigen::Index r = 0; r < n.grad.rows(); ++r)
      g.row(r) = n.grad.row(r).array() - n.value.row(r).array().exp() * n.grad.row(r).sum();
    n.parents[0]->Accumulate(g);
  });
}

/// Row softmax where entries with !mask.At(i, j) get probability exactly 0.
inline Var MaskedSoftmaxRows(const Var& scores, const AttentionMask& mask) {
  const Eigen::Index t = scores->rows();
  if (scores->cols() != t || mask.size() != t) throw ShapeError("MaskedSoftmaxRows: mask size");
  Matrix p = Matrix::Zero(t, t);
  for (Eigen::Index i = 0; i < t; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < t; ++j)
      if (mask.At(int(i), int(j))) m = std::max(m, scores->value(i, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j < t; ++j)
      if (mask.At(int(i), int(j))) z += (p(i, j) = std::exp(scores->value(i, j) - m));
    p.row(i) /= z;
  }
  return detail::MakeOp(std::move(p), {scores}, [](Node& n) {
    Matrix g(n.grad.rows(), n.grad.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double dot = n.grad.row(r).dot(n.value.row(r));
      g.row(r) = n.value.row(r).array() * (n.grad.row(r).array() - dot);
    }
    n.parents[0]->Accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Indexing and reshaping

/// T x T matrix with B(i, j) = table(0, clip(j - i, -k, k) + k); table is 1 x (2k+1).
inline Var RelativePositionBias(const Var& table, int t) {
  const int k = static_cast<int>(table->cols() - 1) / 2;
  auto offset = [k](int i, int j) { return std::clamp(j - i, -k, k) + k; };
  Matrix b(t, t);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j) b(i, j) = table->value(0, offset(i, j));
  return detail::MakeOp(std::move(b), {table}, [offset](Node& n) {
    Matrix g = Matrix::Zero(1, n.parents[0]->cols());
    for (int i = 0; i < n.grad.rows(); ++i)
      for (int j = 0; j < n.grad.cols(); ++j) g(0, offset(i, j)) += n.grad(i, j);
    n.parents[0]->Accumulate(g);
  });
}

/// Copy of x with the listed rows replaced by `row` (1 x C).
inline Var ReplaceRows(const Var& x, const Var& row, const std::vector<int>& rows) {
  if (row->rows() != 1 || row->cols() != x->cols()) throw ShapeError("ReplaceRows: row shape");
  Matrix y = x->value;
  for (int r : rows) {
    if (r < 0 || r >= y.rows()) throw ShapeError("ReplaceRows: index out of range");
    y.row(r) = row->value.row(0);
  }
  return detail::MakeOp(std::move(y), {x, row}, [rows](Node& n) {
    auto& x = *n.parents[0];
    auto& row = *n.parents[1];
    if (x.requires_grad) {
      Matrix gx = n.grad;
      for (int r : rows) gx.row(r).setZero();
      x.Accumulate(gx);
    }
    // a frame listed twice is still a single replacement
    if (row.requires_grad) {
      std::vector<int> uniq(rows);
      std::sort(uniq.begin(), uniq.end());
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      Matrix g = Matrix::Zero(1, n.grad.cols());
      for (int r : uniq) g += n.grad.row(r);
      row.Accumulate(g);
    }
  });
}

/// Rows `ids` of `table` stacked in order.
inline Var GatherRows(const Var& table, const std::vector<int>& ids) {
  Matrix y(static_cast<Eigen::Index>(ids.size()), table->cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table->rows()) throw ShapeError("GatherRows: index out of range");
    y.row(Eigen::Index(i)) = table->value.row(ids[i]);
  }
  return detail::MakeOp(std::move(y), {table}, [ids](Node& n) {
    Matrix g = Matrix::Zero(n.parents[0]->rows(), n.parents[0]->cols());
    for (std::size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += n.grad.row(Eigen::Index(i));
    n.parents[0]->Accumulate(g);
  });
}

inline Var SliceCols(const Var& a, Eigen::Index start, Eigen::Index len) {
  if (start < 0 || start + len > a->cols()) throw ShapeError("SliceCols: range");
  return detail::MakeOp(a->value.middleCols(start, len), {a}, [start, len](Node& n) {
    Matrix g = Matrix::Zero(n.parents[0]->rows(), n.parents[0]->cols());
    g.middleCols(start, len) = n.grad;
    n.parents[0]->Accumulate(g);
  });
}

inline Var ConcatRows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("ConcatRows: nothing to concatenate");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p->cols() != parts[0]->cols()) throw ShapeError("ConcatRows: column mismatch");
    rows += p->rows();
  }
  Matrix y(rows, parts[0]->cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    y.middleRows(r, p->rows()) = p->value;
    r += p->rows();
  }
  return detail::MakeOp(std::move(y), parts, [](Node& n) {
    Eigen::Index r = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) p->Accumulate(n.grad.middleRows(r, p->rows()));
      r += p->rows();
    }
  });
}

/// Groups of `factor` consecutive rows concatenated into one row; the input is
/// zero-padded to a multiple of `factor`. (T x D) -> (ceil(T/factor) x factor*D)
inline Var StackFrames(const Var& x, int factor) {
  const Eigen::Index d = x->cols();
  const Eigen::Index out_rows = (x->rows() + factor - 1) / factor;
  Matrix y = Matrix::Zero(out_rows, d * factor);
  for (Eigen::Index r = 0; r < x->rows(); ++r) y.block(r / factor, (r % factor) * d, 1, d) = x->value.row(r);
  return detail::MakeOp(std::move(y), {x}, [factor, d](Node& n) {
    auto& x = *n.parents[0];
    Matrix g(x.rows(), d);
    for (Eigen::Index r = 0; r < x.rows(); ++r) g.row(r) = n.grad.block(r / factor, (r % factor) * d, 1, d);
    x.Accumulate(g);
  });
}

/// Cosine similarity logits: out(t, c) = cos(x_t, e_c) / gamma, with each norm
/// computed as sqrt(|v|^2 + eps^2) so a zero vector scores 0 against all c.
inline Var CosineLogits(const Var& x, const Var& emb, double gamma, double eps = 1e-8) {
  if (x->cols() != emb->cols()) throw ShapeError("CosineLogits: embedding dims differ");
  if (!(gamma > 0)) throw ConfigError("CosineLogits: gamma must be > 0");
  auto unit_rows = [eps](const Matrix& m, Vector& norms) {
    norms = (m.rowwise().squaredNorm().array() + eps * eps).sqrt().matrix();
    return Matrix(m.array().colwise() / norms.array());
  };
  Vector xn, en;
  Matrix u = unit_rows(x->value, xn);
  Matrix v = unit_rows(emb->value, en);
  Matrix y = u * v.transpose() / gamma;
  return detail::MakeOp(std::move(y), {x, emb},
                        [u = std::move(u), v = std::move(v), xn = std::move(xn), en = std::move(en), gamma](Node& n) {
    auto& x = *n.parents[0];
    auto& emb = *n.parents[1];
    // d(p / |p|) applied row-wise
    auto through_norm = [](const Matrix& g_unit, const Matrix& unit, const Vector& norms) {
      Vector dots = g_unit.cwiseProduct(unit).rowwise().sum();
      Matrix g = g_unit - Matrix(unit.array().colwise() * dots.array());
      return Matrix(g.array().colwise() / norms.array());
    };
    if (x.requires_grad) x.Accumulate(through_norm(n.grad * v / gamma, u, xn));
    if (emb.requires_grad) emb.Accumulate(through_norm(n.grad.transpose() * u / gamma, v, en));
  });
}

/// Negative log-likelihood: -sum_i logp(rows[i], classes[i]) as 1x1.
inline Var PickNll(const Var& logp, const std::vector<int>& rows, const std::vector<int>& classes) {
  if (rows.size() != classes.size()) throw ShapeError("PickNll: rows/classes length");
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= logp->rows() || classes[i] < 0 || classes[i] >= logp->cols())
      throw ShapeError("PickNll: index out of range");
    total -= logp->value(rows[i], classes[i]);
  }
  return detail::MakeOp(Matrix::Constant(1, 1, total), {logp}, [rows, classes](Node& n) {
    auto& lp = *n.parents[0];
    Matrix g = Matrix::Zero(lp.rows(), lp.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) g(rows[i], classes[i]) -= n.grad(0, 0);
    lp.Accumulate(g);
  });
}

/// out(t * U1 + u, :) = a(t, :) + b(u, :)
inline Var BroadcastPairSum(const Var& a, const Var& b) {
  if (a->cols() != b->cols()) throw ShapeError("BroadcastPairSum: column mismatch");
  const Eigen::Index ta = a->rows(), ub = b->rows();
  Matrix y(ta * ub, a->cols());
  for (Eigen::Index t = 0; t < ta; ++t)
    for (Eigen::Index u = 0; u < ub; ++u) y.row(t * ub + u) = a->value.row(t) + b->value.row(u);
  return detail::MakeOp(std::move(y), {a, b}, [ta, ub](Node& n) {
    auto& a = *n.parents[0];
    auto& b = *n.parents[1];
    Matrix ga = Matrix::Zero(ta, n.grad.cols()), gb = Matrix::Zero(ub, n.grad.cols());
    for (Eigen::Index t = 0; t < ta; ++t)
      for (Eigen::Index u = 0; u < ub; ++u) {
        ga.row(t) += n.grad.row(t * ub + u);
        gb.row(u) += n.grad.row(t * ub + u);
      }
    if (a.requires_grad) a.Accumulate(ga);
    if (b.requires_grad) b.Accumulate(gb);
  });
}

}  // namespace mtssl::ag
