#include "sckd/autodiff.hpp"

#include <cmath>

namespace sckd::ad {

Scalar Var::scalar() const {
  SCKD_REQUIRE(rows() == 1 && cols() == 1, "Var::scalar on non-scalar value");
  return value()(0, 0);
}

void Tape::check(Var v) const {
  SCKD_REQUIRE(v.tape() == this && v.id() >= 0 && v.id() < static_cast<int>(nodes_.size()),
               "variable does not belong to this tape");
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  Node& back = nodes_.back();
  if (!back.value) back.value = &back.owned;
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_ref(const Matrix& value) {
  Node n;
  n.value = &value;
  return push(std::move(n));
}

Var Tape::parameter(const Matrix& value) {
  Node n;
  n.value = &value;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

bool Tape::requires_grad(std::initializer_list<Var> vs) const {
  for (Var v : vs)
    if (nodes_[v.id()].requires_grad) return true;
  return false;
}

Matrix& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.touched) {
    n.grad = Matrix::Zero(n.value->rows(), n.value->cols());
    n.touched = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (!n.touched) {
    n.grad = g;
    n.touched = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  check(loss);
  SCKD_REQUIRE(value(loss).rows() == 1 && value(loss).cols() == 1, "backward requires a scalar loss");
  for (auto& n : nodes_) {
    n.touched = false;
    n.grad.resize(0, 0);
  }
  Node& root = nodes_[loss.id()];
  if (!root.requires_grad) return;
  root.grad = Matrix::Ones(1, 1);
  root.touched = true;
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.touched && n.backward) n.backward(*this, n.grad, *n.value);
  }
}

Matrix Tape::gradient(Var v) const {
  check(v);
  const Node& n = nodes_[v.id()];
  if (!n.touched) return Matrix::Zero(n.value->rows(), n.value->cols());
  return n.grad;
}

Var add(Var a, Var b) {
  Tape& t = *a.tape();
  SCKD_REQUIRE(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return t.record(a.value() + b.value(), t.requires_grad({a, b}), [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape();
  SCKD_REQUIRE(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return t.record(a.value() - b.value(), t.requires_grad({a, b}), [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var scale(Var a, Scalar s) {
  Tape& t = *a.tape();
  return t.record(a.value() * s, t.requires_grad(a), [a, s](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g * s); });
}

Var add_row(Var a, Var r) {
  Tape& t = *a.tape();
  SCKD_REQUIRE(r.rows() == 1 && r.cols() == a.cols(), "add_row: shape mismatch");
  Matrix out = a.value().rowwise() + r.value().row(0);
  return t.record(std::move(out), t.requires_grad({a, r}), [a, r](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(r, g.colwise().sum());
  });
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  SCKD_REQUIRE(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  return t.record(a.value() * b.value(), t.requires_grad({a, b}), [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_bt(Var a, Var b) {
  Tape& t = *a.tape();
  SCKD_REQUIRE(a.cols() == b.cols(), "matmul_bt: inner dimension mismatch");
  return t.record(a.value() * b.value().transpose(), t.requires_grad({a, b}), [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value());
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var linear(Var x, Var w, Var bias) {
  Tape& t = *x.tape();
  SCKD_REQUIRE(x.cols() == w.cols(), "linear: input dimension mismatch");
  SCKD_REQUIRE(bias.rows() == 1 && bias.cols() == w.rows(), "linear: bias shape mismatch");
  Matrix out = x.value() * w.value().transpose();
  out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), t.requires_grad({x, w, bias}), [x, w, bias](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(x)) t.accumulate(x, g * w.value());
    if (t.requires_grad(w)) t.accumulate(w, g.transpose() * x.value());
    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
  });
}

Var mul_const(Var a, Matrix mask) {
  Tape& t = *a.tape();
  SCKD_REQUIRE(mask.rows() == a.rows() && mask.cols() == a.cols(), "mul_const: shape mismatch");
  Matrix out = a.value().cwiseProduct(mask);
  return t.record(std::move(out), t.requires_grad(a),
                  [a, mask = std::move(mask)](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g.cwiseProduct(mask)); });
}

namespace {
constexpr Scalar kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr Scalar kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value().unaryExpr([](Scalar x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  });
  return t.record(std::move(out), t.requires_grad(a), [a](Tape& t, const Matrix& g, const Matrix&) {
    Matrix d = a.value().unaryExpr([](Scalar x) {
      const Scalar th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return t.record(std::move(y), t.requires_grad(a), [a](Tape& t, const Matrix& g, const Matrix& y) {
    const Vector dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(a, y.cwiseProduct(g - dot.replicate(1, y.cols())));
  });
}

Var layer_norm(Var x, Var gain, Var bias, Scalar eps) {
  Tape& t = *x.tape();
  const Index n = x.cols();
  SCKD_REQUIRE(gain.rows() == 1 && gain.cols() == n && bias.rows() == 1 && bias.cols() == n,
               "layer_norm: gain/bias shape mismatch");
  const Matrix& in = x.value();
  Matrix normed(in.rows(), n);
  Vector inv_std(in.rows());
  for (Index i = 0; i < in.rows(); ++i) {
    const Scalar mean = in.row(i).mean();
    const Scalar var = (in.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    normed.row(i) = (in.row(i).array() - mean).matrix() * inv_std(i);
  }
  Matrix out = normed.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), t.requires_grad({x, gain, bias}),
                  [x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std)](
                      Tape& t, const Matrix& g, const Matrix&) {
                    if (t.requires_grad(gain)) t.accumulate(gain, g.cwiseProduct(normed).colwise().sum());
                    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
                    if (!t.requires_grad(x)) return;
                    const Matrix dn = g.array().rowwise() * gain.value().row(0).array();
                    Matrix dx(dn.rows(), dn.cols());
                    for (Index i = 0; i < dn.rows(); ++i) {
                      const Scalar m1 = dn.row(i).mean();
                      const Scalar m2 = dn.row(i).cwiseProduct(normed.row(i)).mean();
                      dx.row(i) = inv_std(i) * (dn.row(i).array() - m1 - normed.row(i).array() * m2).matrix();
                    }
                    t.accumulate(x, dx);
                  });
}

Var gather_rows(Var table, std::span<const int> indices) {
  Tape& t = *table.tape();
  const Matrix& tab = table.value();
  Matrix out(static_cast<Index>(indices.size()), tab.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= tab.rows())
      throw InputError("index " + std::to_string(indices[i]) + " outside table of " +
                       std::to_string(tab.rows()) + " rows (token id beyond vocabulary?)");
    out.row(static_cast<Index>(i)) = tab.row(indices[i]);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return t.record(std::move(out), t.requires_grad(table),
                  [table, idx = std::move(idx)](Tape& t, const Matrix& g, const Matrix&) {
                    Matrix& buf = t.grad_buffer(table);
                    for (std::size_t i = 0; i < idx.size(); ++i) buf.row(idx[i]) += g.row(static_cast<Index>(i));
                  });
}

Var row(Var a, Index i) {
  Tape& t = *a.tape();
  SCKD_REQUIRE(i >= 0 && i < a.rows(), "row: index out of range");
  return t.record(a.value().row(i), t.requires_grad(a),
                  [a, i](Tape& t, const Matrix& g, const Matrix&) { t.grad_buffer(a).row(i) += g.row(0); });
}

Var cols(Var a, Index start, Index n) {
  Tape& t = *a.tape();
  SCKD_REQUIRE(start >= 0 && n >= 0 && start + n <= a.cols(), "cols: range out of bounds");
  return t.record(a.value().middleCols(start, n), t.requires_grad(a),
                  [a, start, n](Tape& t, const Matrix& g, const Matrix&) {
                    t.grad_buffer(a).middleCols(start, n) += g;
                  });
}

Var concat_cols(std::span<const Var> parts) {
  SCKD_REQUIRE(!parts.empty(), "concat_cols: no parts");
  Tape& t = *parts[0].tape();
  Index total = 0;
  bool needs = false;
  for (Var p : parts) {
    SCKD_REQUIRE(p.rows() == parts[0].rows(), "concat_cols: row mismatch");
    total += p.cols();
    needs = needs || t.requires_grad(p);
  }
  Matrix out(parts[0].rows(), total);
  Index off = 0;
  for (Var p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.record(std::move(out), needs, [ps = std::move(ps)](Tape& t, const Matrix& g, const Matrix&) {
    Index off = 0;
    for (Var p : ps) {
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), t.requires_grad(a), [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

}  // namespace sckd::ad
