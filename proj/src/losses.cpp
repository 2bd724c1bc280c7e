#include "sckd/losses.hpp"

#include <cmath>

namespace sckd {

void LossWeights::validate() const {
  for (Scalar v : {alpha, beta, gamma, lambda1, lambda2, temperature, rd_weight, dtr_weight})
    if (!std::isfinite(v)) throw ConfigError("loss weights must be finite");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
}

Scalar classification_loss(const Matrix& logits, std::span<const Index> labels) {
  SCKD_REQUIRE(logits.rows() == static_cast<Index>(labels.size()) && logits.rows() > 0,
               "classification_loss: one label per row required");
  Scalar total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) total += cross_entropy(logits.row(i), labels[i]).value;
  return total / static_cast<Scalar>(logits.rows());
}

namespace {

Scalar mean_cosine_distance(const Matrix& prev, const Matrix& cur) {
  SCKD_REQUIRE(prev.rows() == cur.rows() && prev.cols() == cur.cols() && prev.rows() > 0,
               "distillation loss: paired inputs must share shape");
  Scalar total = 0.0;
  for (Index i = 0; i < prev.rows(); ++i) total += cosine_distance(prev.row(i), cur.row(i)).value;
  return total / static_cast<Scalar>(prev.rows());
}

}  // namespace

Scalar feature_distill_loss(const Matrix& f_prev, const Matrix& f_cur) { return mean_cosine_distance(f_prev, f_cur); }

Scalar representation_distill_loss(const Matrix& h_prev, const Matrix& h_cur) {
  return mean_cosine_distance(h_prev, h_cur);
}

TripletTargets mine_triplet(const RowVector& anchor, RelationId relation, std::span<const PoolEntry> pool) {
  Index best_pos = -1;
  Index best_neg = -1;
  Scalar far = -1.0;
  Scalar near = std::numeric_limits<Scalar>::infinity();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    SCKD_REQUIRE(pool[i].vector.size() == anchor.size(), "mine_triplet: dimension mismatch");
    const Scalar dist = (pool[i].vector - anchor).norm();
    if (pool[i].relation == relation) {
      if (dist > far) {
        far = dist;
        best_pos = static_cast<Index>(i);
      }
    } else if (dist < near) {
      near = dist;
      best_neg = static_cast<Index>(i);
    }
  }
  if (best_pos < 0) throw MiningError("no same-relation entry in mining pool");
  if (best_neg < 0) throw MiningError("no other-relation entry in mining pool");
  return {pool[best_pos].vector, pool[best_neg].vector};
}

Scalar distillation_triplet_loss(const Matrix& h_cur, std::span<const std::optional<TripletTargets>> targets) {
  SCKD_REQUIRE(h_cur.rows() == static_cast<Index>(targets.size()) && h_cur.rows() > 0,
               "distillation_triplet_loss: one target per row required");
  Scalar total = 0.0;
  for (Index i = 0; i < h_cur.rows(); ++i)
    if (targets[i]) total += triplet_hinge(h_cur.row(i), targets[i]->z_plus, targets[i]->z_minus).value;
  return total / static_cast<Scalar>(h_cur.rows());
}

Scalar prediction_distill_loss(const Matrix& logits_prev, const Matrix& logits_cur, Scalar temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  SCKD_REQUIRE(logits_prev.rows() == logits_cur.rows() && logits_prev.rows() > 0,
               "prediction_distill_loss: paired rows required");
  Scalar total = 0.0;
  for (Index i = 0; i < logits_prev.rows(); ++i)
    total += soft_cross_entropy(logits_prev.row(i), logits_cur.row(i), logits_prev.cols(), temperature).value;
  return total / static_cast<Scalar>(logits_prev.rows());
}

namespace ad {

namespace {

Var scalar_node(Var input, const LossGrad& lg) {
  Tape& t = *input.tape();
  Matrix v(1, 1);
  v(0, 0) = lg.value;
  return t.record(std::move(v), t.requires_grad(input),
                  [input, g = lg.grad](Tape& t, const Matrix& up, const Matrix&) { t.accumulate(input, g * up(0, 0)); });
}

}  // namespace

Var cross_entropy(Var logits, Index label) { return scalar_node(logits, sckd::cross_entropy(logits.value(), label)); }

Var cosine_distance(const RowVector& target, Var current) {
  return scalar_node(current, sckd::cosine_distance(target, current.value()));
}

Var triplet_hinge(Var h, const TripletTargets& targets) {
  return scalar_node(h, sckd::triplet_hinge(h.value(), targets.z_plus, targets.z_minus));
}

Var soft_cross_entropy(const RowVector& previous, Var current, Index width, Scalar temperature) {
  return scalar_node(current, sckd::soft_cross_entropy(previous, current.value(), width, temperature));
}

}  // namespace ad

}  // namespace sckd
