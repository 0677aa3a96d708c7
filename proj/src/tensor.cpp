// SPDX-License-Identifier: Apache-2.0

#include "krlm/tensor.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace krlm {

const Matrix& Var::value() const { return tape_->value(id_); }

const Matrix& Var::grad() const {
  static const Matrix kEmpty;
  return tape_->has_grad(id_) ? tape_->grad(id_) : kEmpty;
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ContractError("scalar() on a non-scalar tensor");
  return v(0, 0);
}

Var Tape::record(Matrix value, bool needs_grad, Backprop backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::constant_ref(const Matrix& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (!p.trainable || !grad_enabled_) return constant_ref(p.value);
  Node n;
  n.external = &p.value;
  n.needs_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  const Matrix& v = value(loss.id());
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("backward: loss must be a 1x1 scalar, got " + std::to_string(v.rows()) +
                        "x" + std::to_string(v.cols()));
  }
  if (!needs_grad(loss.id())) return;
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
        p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
      }
      p.grad += n.grad;
      p.touched = true;
    } else if (n.backprop) {
      n.backprop(*this, i);
    }
  }
}

namespace ops {
namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("op on an empty Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ContractError("operands live on different tapes");
  return t;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
  }
}

Matrix product(Precision precision, const Matrix& a, const Matrix& b) {
  if (precision == Precision::f32) {
    using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    MatrixF r = a.cast<float>() * b.cast<float>();
    return r.cast<double>();
  }
  return a * b;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw ContractError("matmul: inner dimension mismatch " + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()));
  }
  const int ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  return t.record(product(t.precision(), a.value(), b.value()), ng, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.needs_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), t.needs_grad(ia) || t.needs_grad(ib),
                  [ia, ib](Tape& tp, int self) {
                    tp.accumulate(ia, tp.grad(self));
                    tp.accumulate(ib, tp.grad(self));
                  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), t.needs_grad(ia) || t.needs_grad(ib),
                  [ia, ib](Tape& tp, int self) {
                    tp.accumulate(ia, tp.grad(self));
                    tp.accumulate(ib, -tp.grad(self));
                  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), t.needs_grad(ia) || t.needs_grad(ib),
                  [ia, ib](Tape& tp, int self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.needs_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
                    if (tp.needs_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
                  });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.value() * s, t.needs_grad(ia),
                  [ia, s](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self) * s); });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.value().transpose(), t.needs_grad(ia),
                  [ia](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self).transpose()); });
}

Var add_row(const Var& a, const Var& row) {
  Tape& t = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ContractError("add_row: bias shape mismatch");
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return t.record(std::move(out), t.needs_grad(ia) || t.needs_grad(ir),
                  [ia, ir](Tape& tp, int self) {
                    const Matrix& g = tp.grad(self);
                    tp.accumulate(ia, g);
                    if (tp.needs_grad(ir)) tp.accumulate(ir, g.colwise().sum());
                  });
}

Var add_const(const Var& a, const Matrix& c) {
  Tape& t = tape_of(a);
  if (c.rows() != a.rows() || c.cols() != a.cols()) throw ContractError("add_const: shape mismatch");
  const int ia = a.id();
  return t.record(a.value() + c, t.needs_grad(ia),
                  [ia](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self)); });
}

Var broadcast_rows(const Var& row, Index n) {
  Tape& t = tape_of(row);
  if (row.rows() != 1) throw ContractError("broadcast_rows: input must be a single row");
  const int ir = row.id();
  Matrix out = row.value().replicate(n, 1);
  return t.record(std::move(out), t.needs_grad(ir), [ir](Tape& tp, int self) {
    tp.accumulate(ir, tp.grad(self).colwise().sum());
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const Index rows = parts[0].rows();
  Index cols = 0;
  bool ng = false;
  std::vector<int> ids;
  std::vector<Index> widths;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("concat_cols: operands live on different tapes");
    if (p.rows() != rows) throw ContractError("concat_cols: row count mismatch");
    cols += p.cols();
    ng = ng || t.needs_grad(p.id());
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.record(std::move(out), ng, [ids, widths](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(ids[k])) tp.accumulate(ids[k], g.middleCols(off, widths[k]));
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const Index cols = parts[0].cols();
  Index rows = 0;
  bool ng = false;
  std::vector<int> ids;
  std::vector<Index> heights;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("concat_rows: operands live on different tapes");
    if (p.cols() != cols) throw ContractError("concat_rows: column count mismatch");
    rows += p.rows();
    ng = ng || t.needs_grad(p.id());
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.record(std::move(out), ng, [ids, heights](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(ids[k])) tp.accumulate(ids[k], g.middleRows(off, heights[k]));
      off += heights[k];
    }
  });
}

Var slice_rows(const Var& a, Index begin, Index count) {
  Tape& t = tape_of(a);
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw ContractError("slice_rows: out of range");
  const int ia = a.id();
  return t.record(a.value().middleRows(begin, count), t.needs_grad(ia),
                  [ia, begin, count](Tape& tp, int self) {
                    Matrix& ga = tp.grad(ia);
                    if (ga.size() == 0) ga = Matrix::Zero(tp.value(ia).rows(), tp.value(ia).cols());
                    ga.middleRows(begin, count) += tp.grad(self);
                  });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
  Tape& t = tape_of(a);
  const Matrix& v = a.value();
  Matrix out(static_cast<Index>(rows.size()), v.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= v.rows()) throw ContractError("gather_rows: index out of range");
    out.row(static_cast<Index>(k)) = v.row(rows[k]);
  }
  const int ia = a.id();
  std::vector<int> idx(rows.begin(), rows.end());
  return t.record(std::move(out), t.needs_grad(ia), [ia, idx](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& ga = tp.grad(ia);
    if (ga.size() == 0) ga = Matrix::Zero(tp.value(ia).rows(), tp.value(ia).cols());
    for (std::size_t k = 0; k < idx.size(); ++k) ga.row(idx[k]) += g.row(static_cast<Index>(k));
  });
}

Var gather_rows_const(Tape& tape, const Matrix& table, std::span<const int> rows) {
  Matrix out(static_cast<Index>(rows.size()), table.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= table.rows()) {
      throw ContractError("gather_rows_const: index out of range");
    }
    out.row(static_cast<Index>(k)) = table.row(rows[k]);
  }
  return tape.constant(std::move(out));
}

Var place_row(const Var& v, Index n, Index row) {
  Tape& t = tape_of(v);
  if (v.rows() != 1) throw ContractError("place_row: input must be a single row");
  if (row < 0 || row >= n) throw ContractError("place_row: row out of range");
  Matrix out = Matrix::Zero(n, v.cols());
  out.row(row) = v.value().row(0);
  const int iv = v.id();
  return t.record(std::move(out), t.needs_grad(iv), [iv, row](Tape& tp, int self) {
    tp.accumulate(iv, tp.grad(self).row(row));
  });
}

Var relu(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.value().cwiseMax(0.0), t.needs_grad(ia), [ia](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    tp.accumulate(ia, (x.array() > 0.0).select(tp.grad(self), 0.0));
  });
}

Var sigmoid(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return t.record(std::move(out), t.needs_grad(ia), [ia](Tape& tp, int self) {
    const Matrix& s = tp.value(self);
    tp.accumulate(ia, tp.grad(self).cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Var log(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.value().array().log().matrix(), t.needs_grad(ia), [ia](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self).cwiseQuotient(tp.value(ia)));
  });
}

Var exp(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.record(a.value().array().exp().matrix(), t.needs_grad(ia), [ia](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self).cwiseProduct(tp.value(self)));
  });
}

Var softplus(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix out = a.value().unaryExpr(
      [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); });
  return t.record(std::move(out), t.needs_grad(ia), [ia](Tape& tp, int self) {
    Matrix s = tp.value(ia).unaryExpr([](double x) {
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      const double e = std::exp(x);
      return e / (1.0 + e);
    });
    tp.accumulate(ia, tp.grad(self).cwiseProduct(s));
  });
}

Var softmax_rows(const Var& a, Index causal_offset) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    // Visible columns: everything before the offset, then tokens up to i.
    const Index visible = causal_offset < 0 ? x.cols() : std::min(x.cols(), causal_offset + i + 1);
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < visible; ++c) mx = std::max(mx, x(i, c));
    double z = 0.0;
    for (Index c = 0; c < visible; ++c) {
      out(i, c) = std::exp(x(i, c) - mx);
      z += out(i, c);
    }
    for (Index c = 0; c < visible; ++c) out(i, c) /= z;
    for (Index c = visible; c < x.cols(); ++c) out(i, c) = 0.0;
  }
  const int ia = a.id();
  return t.record(std::move(out), t.needs_grad(ia), [ia](Tape& tp, int self) {
    const Matrix& p = tp.value(self);
    const Matrix& g = tp.grad(self);
    Matrix gp = g.cwiseProduct(p);
    Matrix d = gp - (p.array().colwise() * gp.rowwise().sum().array()).matrix();
    tp.accumulate(ia, d);
  });
}

Var log_softmax_rows(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  const int ia = a.id();
  return t.record(std::move(out), t.needs_grad(ia), [ia](Tape& tp, int self) {
    const Matrix p = tp.value(self).array().exp().matrix();
    const Matrix& g = tp.grad(self);
    Matrix d = g - (p.array().colwise() * g.rowwise().sum().array()).matrix();
    tp.accumulate(ia, d);
  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), t.needs_grad(ia), [ia](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    tp.accumulate(ia, Matrix::Constant(tp.value(ia).rows(), tp.value(ia).cols(), g));
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var reduce_mean(const Var& a) {
  Tape& t = tape_of(a);
  const Index n = a.rows();
  if (n == 0) throw ContractError("reduce_mean: no rows");
  const int ia = a.id();
  return t.record(a.value().colwise().mean(), t.needs_grad(ia), [ia, n](Tape& tp, int self) {
    tp.accumulate(ia, (tp.grad(self) / static_cast<double>(n)).replicate(n, 1));
  });
}

namespace {

// Routes the gradient of a column-wise extremum to the first argmax/argmin row.
Var reduce_extremum(const Var& a, bool take_max, const char* name) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (x.rows() == 0) throw ContractError(std::string(name) + ": no rows");
  Matrix out(1, x.cols());
  std::vector<Index> arg(static_cast<std::size_t>(x.cols()));
  for (Index c = 0; c < x.cols(); ++c) {
    Index best = 0;
    for (Index r = 1; r < x.rows(); ++r) {
      if (take_max ? x(r, c) > x(best, c) : x(r, c) < x(best, c)) best = r;
    }
    arg[static_cast<std::size_t>(c)] = best;
    out(0, c) = x(best, c);
  }
  const int ia = a.id();
  return t.record(std::move(out), t.needs_grad(ia), [ia, arg](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix d = Matrix::Zero(tp.value(ia).rows(), tp.value(ia).cols());
    for (std::size_t c = 0; c < arg.size(); ++c) {
      d(arg[c], static_cast<Index>(c)) = g(0, static_cast<Index>(c));
    }
    tp.accumulate(ia, d);
  });
}

}  // namespace

Var reduce_max(const Var& a) { return reduce_extremum(a, true, "reduce_max"); }
Var reduce_min(const Var& a) { return reduce_extremum(a, false, "reduce_min"); }

Var reduce_std(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  const Index n = x.rows();
  if (n == 0) throw ContractError("reduce_std: no rows");
  Matrix mu = x.colwise().mean();
  Matrix out(1, x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    double ss = 0.0;
    for (Index r = 0; r < n; ++r) {
      const double dv = x(r, c) - mu(0, c);
      ss += dv * dv;
    }
    out(0, c) = std::sqrt(ss / static_cast<double>(n));
  }
  const int ia = a.id();
  return t.record(std::move(out), t.needs_grad(ia), [ia, mu, n](Tape& tp, int self) {
    const Matrix& s = tp.value(self);
    const Matrix& g = tp.grad(self);
    const Matrix& xv = tp.value(ia);
    Matrix d = Matrix::Zero(xv.rows(), xv.cols());
    for (Index c = 0; c < xv.cols(); ++c) {
      if (s(0, c) == 0.0) continue;
      const double k = g(0, c) / (static_cast<double>(n) * s(0, c));
      for (Index r = 0; r < n; ++r) d(r, c) = k * (xv(r, c) - mu(0, c));
    }
    tp.accumulate(ia, d);
  });
}

Var rms_norm(const Var& a, const Matrix& gain, double eps) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (gain.rows() != 1 || gain.cols() != x.cols()) throw ContractError("rms_norm: gain shape mismatch");
  const Index f = x.cols();
  Matrix inv(x.rows(), 1);
  Matrix out(x.rows(), f);
  for (Index i = 0; i < x.rows(); ++i) {
    const double ms = x.row(i).squaredNorm() / static_cast<double>(f);
    inv(i, 0) = 1.0 / std::sqrt(ms + eps);
    out.row(i) = x.row(i).cwiseProduct(gain) * inv(i, 0);
  }
  const int ia = a.id();
  return t.record(std::move(out), t.needs_grad(ia), [ia, inv, gain, f](Tape& tp, int self) {
    const Matrix& xv = tp.value(ia);
    const Matrix& g = tp.grad(self);
    Matrix d(xv.rows(), xv.cols());
    for (Index i = 0; i < xv.rows(); ++i) {
      const double r = inv(i, 0);
      Eigen::RowVectorXd gg = g.row(i).cwiseProduct(gain);
      const double dot = gg.dot(xv.row(i));
      d.row(i) = r * gg - (r * r * r / static_cast<double>(f)) * dot * xv.row(i);
    }
    tp.accumulate(ia, d);
  });
}

Var layer_norm(const Var& a, double eps) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  const Index f = x.cols();
  Matrix inv(x.rows(), 1);
  Matrix out(x.rows(), f);
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const Eigen::RowVectorXd c = x.row(i).array() - mu;
    inv(i, 0) = 1.0 / std::sqrt(c.squaredNorm() / static_cast<double>(f) + eps);
    out.row(i) = c * inv(i, 0);
  }
  const int ia = a.id();
  return t.record(out, t.needs_grad(ia), [ia, inv, out, f](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix d(g.rows(), g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      const double gm = g.row(i).mean();
      const double gy = g.row(i).dot(out.row(i)) / static_cast<double>(f);
      d.row(i) = inv(i, 0) * (g.row(i).array() - gm - gy * out.row(i).array());
    }
    tp.accumulate(ia, d);
  });
}

Var distmult_propagate(const Var& x, const Var& rel, std::span<const TypedEdge> edges, Index n_out) {
  Tape& t = tape_of(x, rel);
  if (x.cols() != rel.cols()) throw ContractError("distmult_propagate: feature width mismatch");
  const Matrix& xv = x.value();
  const Matrix& rv = rel.value();
  Matrix out = Matrix::Zero(n_out, xv.cols());
  for (const TypedEdge& e : edges) {
    if (e.src < 0 || e.src >= xv.rows() || e.dst < 0 || e.dst >= n_out || e.type < 0 ||
        e.type >= rv.rows()) {
      throw ContractError("distmult_propagate: edge index out of range");
    }
    out.row(e.dst) += xv.row(e.src).cwiseProduct(rv.row(e.type));
  }
  const int ix = x.id(), ir = rel.id();
  return t.record(std::move(out), t.needs_grad(ix) || t.needs_grad(ir),
                  [ix, ir, edges](Tape& tp, int self) {
                    const Matrix& g = tp.grad(self);
                    const Matrix& xv2 = tp.value(ix);
                    const Matrix& rv2 = tp.value(ir);
                    const bool gx = tp.needs_grad(ix), gr = tp.needs_grad(ir);
                    Matrix dx, dr;
                    if (gx) dx = Matrix::Zero(xv2.rows(), xv2.cols());
                    if (gr) dr = Matrix::Zero(rv2.rows(), rv2.cols());
                    for (const TypedEdge& e : edges) {
                      if (gx) dx.row(e.src) += g.row(e.dst).cwiseProduct(rv2.row(e.type));
                      if (gr) dr.row(e.type) += g.row(e.dst).cwiseProduct(xv2.row(e.src));
                    }
                    if (gx) tp.accumulate(ix, dx);
                    if (gr) tp.accumulate(ir, dr);
                  });
}

}  // namespace ops

Var linear(const Var& x, const Var& weight, const Var& bias) {
  return ops::add_row(ops::matmul(x, weight), bias);
}

Var linear(const Var& x, const Var& weight) { return ops::matmul(x, weight); }

}  // namespace krlm
