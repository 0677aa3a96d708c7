// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward computation. Values live on
// the tape; Var is a cheap handle (tape pointer + node index). Calling
// Tape::backward on a 1x1 node propagates gradients in reverse creation
// order and accumulates them into the trainable Parameters that were bound
// with Tape::param. Frozen parameters are bound as constants and never
// receive gradients.
//
// All ops take and return 2-D matrices; vectors are 1xN rows.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace krlm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Precision used for the matrix products inside matmul. f32 rounds both
/// operands to single precision for the product (speed option); every other
/// op and all accumulation stay in double.
enum class Precision { f64, f32 };

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
  // Set when a backward pass reached this parameter since the last zero_grad.
  bool touched = false;

  void zero_grad() {
    grad.setZero(value.rows(), value.cols());
    touched = false;
  }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  explicit Tape(Precision precision = Precision::f64) : precision_(precision) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Binds an externally owned matrix without copying; it must outlive the tape.
  Var constant_ref(const Matrix& value);
  Var param(Parameter& p);

  void backward(const Var& loss);

  Precision precision() const { return precision_; }
  // With gradients disabled, parameters bind as constants and no backward
  // closures are kept (inference).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Low-level node construction used by the op library.
  using Backprop = std::function<void(Tape&, int self)>;
  Var record(Matrix value, bool needs_grad, Backprop backprop);
  const Matrix& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
  }
  Matrix& grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  // Adds delta into the gradient buffer of node id (allocating on first use).
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& delta) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(value(id).rows(), value(id).cols());
    n.grad += delta;
  }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() != 0; }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool needs_grad = false;
    Backprop backprop;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
  Precision precision_;
  bool grad_enabled_ = true;
};

// Directed typed edge used by the message-passing op.
struct TypedEdge {
  int src;
  int type;
  int dst;
};

namespace ops {

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var transpose(const Var& a);
// a (n x k) + row (1 x k) broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var add_const(const Var& a, const Matrix& c);
Var broadcast_rows(const Var& row, Index n);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, Index begin, Index count);
Var gather_rows(const Var& a, std::span<const int> rows);
// Gather from a matrix that is not on the tape (frozen embedding tables).
Var gather_rows_const(Tape& tape, const Matrix& table, std::span<const int> rows);
// n x d zero matrix whose row `row` is the 1 x d input.
Var place_row(const Var& v, Index n, Index row);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
// log(1 + exp(a)), computed stably.
Var softplus(const Var& a);

// Row softmax. When causal_offset >= 0, column c >= causal_offset of row i is
// masked (probability 0) if c - causal_offset > i; columns before the offset
// are never masked.
Var softmax_rows(const Var& a, Index causal_offset = -1);
Var log_softmax_rows(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
// Column-wise reductions over the rows of an L x d input, returning 1 x d.
Var reduce_mean(const Var& a);
Var reduce_max(const Var& a);
Var reduce_min(const Var& a);
// Population standard deviation (divide by L). L = 1 yields zeros with a zero
// gradient; the gradient is also defined as zero in any column whose spread is 0.
Var reduce_std(const Var& a);

// Root-mean-square normalisation of each row followed by a fixed gain.
Var rms_norm(const Var& a, const Matrix& gain, double eps = 1e-6);

// Per-row standardisation to zero mean and unit variance (no affine part).
Var layer_norm(const Var& a, double eps = 1e-5);

// out[dst] += x[src] (*) rel[type] over all edges, returning n_out x d.
Var distmult_propagate(const Var& x, const Var& rel, std::span<const TypedEdge> edges,
                       Index n_out);

}  // namespace ops

/// y = x W + b with W stored in x out.
Var linear(const Var& x, const Var& weight, const Var& bias);
Var linear(const Var& x, const Var& weight);

}  // namespace krlm
