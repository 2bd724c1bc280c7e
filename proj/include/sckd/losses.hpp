#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "sckd/autodiff.hpp"

namespace sckd {

/// Coefficients of the distillation and final objectives. rd_weight and
/// dtr_weight split beta across the two hidden-contrastive terms; both are 1
/// unless an ablation zeroes one of them.
struct LossWeights {
  Scalar alpha = 0.5;
  Scalar beta = 1.0;
  Scalar gamma = 0.5;
  Scalar lambda1 = 1.0;
  Scalar lambda2 = 1.0;
  Scalar temperature = 0.08;
  Scalar rd_weight = 1.0;
  Scalar dtr_weight = 1.0;

  void validate() const;
};

inline constexpr Scalar kNormFloor = 1e-12;

/// Loss value and its gradient with respect to the student-side input row.
struct LossGrad {
  Scalar value = 0.0;
  RowVector grad;
};

// --- Per-sample kernels ------------------------------------------------------

/// -log softmax(logits)[label], via log-sum-exp.
template <typename Derived>
LossGrad cross_entropy(const Eigen::MatrixBase<Derived>& logits, Index label) {
  SCKD_REQUIRE(logits.rows() == 1 && label >= 0 && label < logits.cols(), "cross_entropy: label out of range");
  const Scalar m = logits.maxCoeff();
  const RowVector shifted = (logits.array() - m).matrix();
  const RowVector e = shifted.array().exp().matrix();
  const Scalar z = e.sum();
  LossGrad out;
  out.value = std::log(z) - shifted(0, label);
  out.grad = e / z;
  out.grad(0, label) -= 1.0;
  return out;
}

/// 1 - cos(target, current); gradient w.r.t. current only. Norms floored at kNormFloor.
template <typename DerivedA, typename DerivedB>
LossGrad cosine_distance(const Eigen::MatrixBase<DerivedA>& target, const Eigen::MatrixBase<DerivedB>& current) {
  SCKD_REQUIRE(target.size() == current.size(), "cosine_distance: dimension mismatch");
  const RowVector t = target.derived().template cast<Scalar>();
  const RowVector c = current.derived().template cast<Scalar>();
  const RowVector t_hat = t / std::max(t.norm(), kNormFloor);
  const Scalar c_norm = c.norm();
  LossGrad out;
  if (c_norm > kNormFloor) {
    const RowVector c_hat = c / c_norm;
    const Scalar cos = t_hat.dot(c_hat);
    out.value = std::clamp(1.0 - cos, 0.0, 2.0);
    out.grad = -(t_hat - cos * c_hat) / c_norm;
  } else {
    out.value = 1.0 - t_hat.dot(c) / kNormFloor;
    out.grad = -t_hat / kNormFloor;
  }
  return out;
}

/// max(0, |h - z+| - |h - z-|). At the hinge (difference exactly 0) the zero
/// branch is taken; a zero-length difference contributes a zero subgradient.
template <typename D0, typename D1, typename D2>
LossGrad triplet_hinge(const Eigen::MatrixBase<D0>& h, const Eigen::MatrixBase<D1>& z_plus,
                       const Eigen::MatrixBase<D2>& z_minus) {
  SCKD_REQUIRE(h.size() == z_plus.size() && h.size() == z_minus.size(), "triplet_hinge: dimension mismatch");
  const RowVector dp = h - z_plus;
  const RowVector dn = h - z_minus;
  const Scalar np = dp.norm();
  const Scalar nn = dn.norm();
  LossGrad out;
  out.grad = RowVector::Zero(h.size());
  const Scalar margin = np - nn;
  if (margin > 0.0) {
    out.value = margin;
    if (np > 0.0) out.grad += dp / np;
    if (nn > 0.0) out.grad -= dn / nn;
  }
  return out;
}

/// Temperature-softened soft-label cross-entropy over the first `width`
/// entries of both rows: -sum_r c_prev[r] log c_cur[r]. Gradient has the full
/// width of `current`; entries past `width` are zero.
template <typename DerivedA, typename DerivedB>
LossGrad soft_cross_entropy(const Eigen::MatrixBase<DerivedA>& previous, const Eigen::MatrixBase<DerivedB>& current,
                            Index width, Scalar temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  SCKD_REQUIRE(width >= 1 && previous.cols() >= width && current.cols() >= width,
               "soft_cross_entropy: rows narrower than the previous relation set");
  const RowVector p = previous.leftCols(width) / temperature;
  const RowVector c = current.leftCols(width) / temperature;
  const RowVector ep = (p.array() - p.maxCoeff()).exp().matrix();
  const RowVector c_prev = ep / ep.sum();
  const Scalar cmax = c.maxCoeff();
  const Scalar lse = cmax + std::log((c.array() - cmax).exp().sum());
  const RowVector log_cur = (c.array() - lse).matrix();
  LossGrad out;
  out.value = -(c_prev.array() * log_cur.array()).sum();
  out.grad = RowVector::Zero(current.cols());
  out.grad.leftCols(width) = (log_cur.array().exp() - c_prev.array()).matrix() / temperature;
  return out;
}

// --- Batch losses (means over rows) -----------------------------------------

Scalar classification_loss(const Matrix& logits, std::span<const Index> labels);
Scalar feature_distill_loss(const Matrix& f_prev, const Matrix& f_cur);
Scalar representation_distill_loss(const Matrix& h_prev, const Matrix& h_cur);

struct TripletTargets {
  RowVector z_plus;
  RowVector z_minus;
};

struct PoolEntry {
  RowVector vector;
  RelationId relation = 0;
};

/// Hard positive (farthest same-relation) and hard negative (nearest
/// other-relation) for `anchor`, lowest pool index on ties.
/// Throws MiningError when either side of the pool is empty.
TripletTargets mine_triplet(const RowVector& anchor, RelationId relation, std::span<const PoolEntry> pool);

/// Mean hinge over rows; a missing target contributes 0.
Scalar distillation_triplet_loss(const Matrix& h_cur, std::span<const std::optional<TripletTargets>> targets);

inline Scalar hidden_contrastive_loss(Scalar rd, Scalar dtr) { return rd + dtr; }

Scalar prediction_distill_loss(const Matrix& logits_prev, const Matrix& logits_cur, Scalar temperature);

inline Scalar total_distillation_loss(Scalar fd, Scalar hcd, Scalar pd, const LossWeights& w) {
  return w.alpha * fd + w.beta * hcd + w.gamma * pd;
}

inline Scalar final_loss(Scalar csf, Scalar dst, const LossWeights& w) { return w.lambda1 * csf + w.lambda2 * dst; }

// --- Tape ops: per-sample terms with the student side differentiable --------

namespace ad {
Var cross_entropy(Var logits, Index label);
Var cosine_distance(const RowVector& target, Var current);
Var triplet_hinge(Var h, const TripletTargets& targets);
Var soft_cross_entropy(const RowVector& previous, Var current, Index width, Scalar temperature);
}  // namespace ad

}  // namespace sckd
