#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "sckd/core.hpp"

/// Minimal reverse-mode differentiation over dense matrices. A Tape records
/// every operation of one forward pass; backward() walks it in reverse and
/// accumulates adjoints. Values of parameters are borrowed, not copied, so the
/// model must outlive the tape.
namespace sckd::ad {

class Tape;

class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar scalar() const;
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// Receives the node's adjoint and its forward value.
  using Backward = std::function<void(Tape&, const Matrix& upstream, const Matrix& value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Borrowed constant; no gradient is tracked.
  Var constant_ref(const Matrix& value);
  Var constant_ref(Matrix&&) = delete;
  /// Borrowed leaf whose gradient is tracked.
  Var parameter(const Matrix& value);
  Var parameter(Matrix&&) = delete;
  Var record(Matrix value, bool requires_grad, Backward backward);

  const Matrix& value(Var v) const { return *nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool requires_grad(std::initializer_list<Var> vs) const;

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be 1x1.
  void backward(Var loss);

  /// Accumulated adjoint; a zero matrix if `v` is off the loss path.
  Matrix gradient(Var v) const;
  /// Adjoint buffer, zero-initialised on first touch.
  Matrix& grad_buffer(Var v);
  void accumulate(Var v, const Matrix& g);
  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    if (!requires_grad(v)) return;
    grad_buffer(v) += g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* value = nullptr;
    Matrix grad;
    bool requires_grad = false;
    bool touched = false;
    Backward backward;
  };
  Var push(Node node);
  void check(Var v) const;
  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

// Elementwise and linear-algebra primitives.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, Scalar s);
/// a + row broadcast over rows of a.
Var add_row(Var a, Var row);
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_bt(Var a, Var b);
/// x * w^T + bias, with w stored out x in and bias 1 x out.
Var linear(Var x, Var w, Var bias);
/// Elementwise product with a constant mask (dropout).
Var mul_const(Var a, Matrix mask);
Var gelu(Var a);
Var softmax_rows(Var a);
/// Row-wise layer normalisation with gain/bias rows; eps inside the square root.
Var layer_norm(Var x, Var gain, Var bias, Scalar eps);
Var gather_rows(Var table, std::span<const int> indices);
Var row(Var a, Index i);
Var cols(Var a, Index start, Index n);
Var concat_cols(std::span<const Var> parts);
Var sum(Var a);

}  // namespace sckd::ad
