#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "sckd/losses.hpp"

using namespace sckd;

namespace {

RowVector row(std::initializer_list<Scalar> values) {
  RowVector r(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) r(i++) = v;
  return r;
}

RowVector random_row(Index n, Rng& rng) {
  std::normal_distribution<Scalar> g(0.0, 1.0);
  RowVector r(n);
  for (Index i = 0; i < n; ++i) r(i) = g(rng);
  return r;
}

// Written out term by term: softmax of each row, then cross-entropy.
Scalar soft_ce_oracle(const RowVector& prev, const RowVector& cur, Index width, Scalar T) {
  std::vector<Scalar> p(width), q(width);
  Scalar zp = 0.0, zq = 0.0;
  for (Index r = 0; r < width; ++r) {
    p[r] = std::exp(prev(r) / T);
    q[r] = std::exp(cur(r) / T);
    zp += p[r];
    zq += q[r];
  }
  Scalar loss = 0.0;
  for (Index r = 0; r < width; ++r) loss -= (p[r] / zp) * std::log(q[r] / zq);
  return loss;
}

void check_kernel_gradient(RowVector x, const std::function<LossGrad(const RowVector&)>& f) {
  const LossGrad at = f(x);
  Matrix xm = x;
  for (Index c = 0; c < x.size(); ++c) {
    const Scalar fd = test::central_difference(xm, 0, c, 1e-5, [&] { return f(xm).value; });
    CHECK(test::gradient_error(at.grad(c), fd) <= 1e-7);
  }
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("classification loss") {
  Matrix one_hot = Matrix::Constant(2, 3, -1e4);
  one_hot(0, 1) = 0.0;
  one_hot(1, 2) = 0.0;
  const std::vector<Index> labels = {1, 2};
  CHECK(classification_loss(one_hot, labels) == doctest::Approx(0.0).epsilon(1e-15));

  const Matrix uniform = Matrix::Zero(3, 10);
  const std::vector<Index> three = {0, 4, 9};
  CHECK(std::abs(classification_loss(uniform, three) - std::log(10.0)) <= 1e-12);

  Rng rng(5);
  Matrix logits(4, 6);
  for (Index i = 0; i < 4; ++i) logits.row(i) = 3.0 * random_row(6, rng);
  const std::vector<Index> y = {0, 5, 2, 2};
  Scalar oracle = 0.0;
  for (Index i = 0; i < 4; ++i) {
    Scalar z = 0.0;
    for (Index c = 0; c < 6; ++c) z += std::exp(logits(i, c));
    oracle += std::log(z) - logits(i, y[i]);
  }
  CHECK(std::abs(classification_loss(logits, y) - oracle / 4.0) <= 1e-12);
}

TEST_CASE("cross entropy survives extreme logits") {
  const LossGrad lg = cross_entropy(row({1000.0, -1000.0}), 1);
  CHECK(lg.value == doctest::Approx(2000.0));
  CHECK(std::isfinite(lg.grad(0)));
}

TEST_CASE("cosine losses at identity, orthogonal and antipodal inputs") {
  const Matrix e1 = row({1.0, 0.0, 0.0});
  const Matrix e2 = row({0.0, 1.0, 0.0});
  CHECK(feature_distill_loss(e1, e1) == 0.0);
  CHECK(feature_distill_loss(e1, e2) == 1.0);
  CHECK(feature_distill_loss(e1, -e1) == 2.0);
  CHECK(representation_distill_loss(e2, e2) == 0.0);
  CHECK(representation_distill_loss(e2, e1) == 1.0);
  CHECK(representation_distill_loss(-e2, e2) == 2.0);
  const Matrix v = row({0.3, -1.7, 2.2});
  CHECK(feature_distill_loss(v, 4.0 * v) <= 1e-15);
}

TEST_CASE("representation distillation matches a cosine oracle") {
  Rng rng(6);
  Matrix a(5, 7), b(5, 7);
  for (Index i = 0; i < 5; ++i) {
    a.row(i) = random_row(7, rng);
    b.row(i) = random_row(7, rng);
  }
  Scalar oracle = 0.0;
  for (Index i = 0; i < 5; ++i) oracle += 1.0 - a.row(i).dot(b.row(i)) / (a.row(i).norm() * b.row(i).norm());
  CHECK(std::abs(representation_distill_loss(a, b) - oracle / 5.0) <= 1e-12);
  const Scalar v = representation_distill_loss(a, b);
  CHECK(v >= 0.0);
  CHECK(v <= 2.0);
}

TEST_CASE("triplet mining") {
  const std::vector<PoolEntry> pool = {{row({1, 0}), 3}, {row({0, 2}), 4}, {row({3, 0}), 3}, {row({0, 5}), 5}};
  const TripletTargets t = mine_triplet(row({0, 0}), 3, pool);
  CHECK(t.z_plus == row({3, 0}));
  CHECK(t.z_minus == row({0, 2}));

  const std::vector<PoolEntry> single = {{row({2, 2}), 1}, {row({-1, 0}), 2}};
  const TripletTargets s = mine_triplet(row({0, 0}), 1, single);
  CHECK(s.z_plus == row({2, 2}));
  CHECK(s.z_minus == row({-1, 0}));

  const std::vector<PoolEntry> ties = {{row({1, 0}), 1}, {row({0, 1}), 1}, {row({-1, 0}), 2}, {row({0, -1}), 2}};
  const TripletTargets u = mine_triplet(row({0, 0}), 1, ties);
  CHECK(u.z_plus == row({1, 0}));
  CHECK(u.z_minus == row({-1, 0}));

  const std::vector<PoolEntry> only_pos = {{row({1, 0}), 1}};
  CHECK_THROWS_AS(mine_triplet(row({0, 0}), 1, only_pos), MiningError);
  CHECK_THROWS_AS(mine_triplet(row({0, 0}), 2, only_pos), MiningError);
}

TEST_CASE("distillation triplet loss") {
  const Matrix h = row({0, 0});
  std::vector<std::optional<TripletTargets>> satisfied = {TripletTargets{row({1, 0}), row({0, 2})}};
  CHECK(distillation_triplet_loss(h, satisfied) == 0.0);
  std::vector<std::optional<TripletTargets>> violated = {TripletTargets{row({0, 3}), row({1, 0})}};
  CHECK(distillation_triplet_loss(h, violated) == 2.0);
  std::vector<std::optional<TripletTargets>> boundary = {TripletTargets{row({0, 1}), row({1, 0})}};
  CHECK(distillation_triplet_loss(h, boundary) == 0.0);
  CHECK(triplet_hinge(h, row({0, 1}), row({1, 0})).grad.isZero(0.0));
  Matrix two(2, 2);
  two << 0, 0, 5, 5;
  std::vector<std::optional<TripletTargets>> mixed = {violated[0], std::nullopt};
  CHECK(distillation_triplet_loss(two, mixed) == 1.0);
}

TEST_CASE("prediction distillation") {
  CHECK(std::abs(prediction_distill_loss(row({0, 0}), row({0, 0}), 1.0) - std::numbers::ln2) <= 1e-12);
  const Scalar v = prediction_distill_loss(row({1, 0}), row({0, 1}), 1.0);
  CHECK(std::abs(v - soft_ce_oracle(row({1, 0}), row({0, 1}), 2, 1.0)) <= 1e-12);
  CHECK(v == doctest::Approx(1.0445).epsilon(1e-4));
  const Scalar hot = prediction_distill_loss(row({0.3, -2.0, 1.1}), row({5.0, 0.2, -0.4}), 1e6);
  CHECK(std::abs(hot - std::log(3.0)) <= 1e-3);
  CHECK_THROWS_AS(prediction_distill_loss(row({0, 0}), row({0, 0}), 0.0), ConfigError);
  CHECK_THROWS_AS(prediction_distill_loss(row({0, 0}), row({0, 0}), -1.0), ConfigError);
}

TEST_CASE("prediction distillation truncates the wider current row") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const RowVector prev = 2.0 * random_row(4, rng);
    const RowVector cur = 2.0 * random_row(7, rng);
    const Scalar T = trial % 2 == 0 ? 0.08 : 1.7;
    const LossGrad lg = soft_cross_entropy(prev, cur, 4, T);
    CHECK(std::abs(lg.value - soft_ce_oracle(prev, cur, 4, T)) <= 1e-10);
    CHECK(lg.grad.rightCols(3).isZero(0.0));
    CHECK(std::abs(lg.grad.sum()) <= 1e-9);
  }
}

TEST_CASE("kernel gradients") {
  Rng rng(9);
  const RowVector target = random_row(6, rng);
  const RowVector prev = random_row(4, rng);
  const RowVector zp = random_row(6, rng), zm = random_row(6, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const RowVector x = random_row(6, rng);
    check_kernel_gradient(x, [](const RowVector& v) { return cross_entropy(v, 2); });
    check_kernel_gradient(x, [&](const RowVector& v) { return cosine_distance(target, v); });
    check_kernel_gradient(x, [&](const RowVector& v) { return soft_cross_entropy(prev, v, 4, 0.5); });
    check_kernel_gradient(x, [&](const RowVector& v) { return triplet_hinge(v, zp, zm); });
  }
}

TEST_CASE("combined weights") {
  LossWeights w;
  CHECK(total_distillation_loss(0, 0, 0, w) == 0.0);
  CHECK(total_distillation_loss(2, 1, 2, w) == 3.0);
  CHECK(final_loss(1, 2, w) == 3.0);
  LossWeights ones;
  ones.alpha = ones.beta = ones.gamma = 1.0;
  CHECK(total_distillation_loss(1, 2, 3, ones) == 6.0);
  CHECK(hidden_contrastive_loss(0, 0) == 0.0);
  CHECK(hidden_contrastive_loss(1, 2) == 3.0);
  LossWeights no_dst;
  no_dst.lambda2 = 0.0;
  CHECK(final_loss(1.25, 7.0, no_dst) == 1.25);
  LossWeights bad;
  bad.temperature = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("tape kernels agree with value kernels") {
  Rng rng(10);
  const RowVector x = random_row(5, rng), prev = random_row(3, rng), t = random_row(5, rng);
  const Matrix xm = x;  // parameters are borrowed, so keep a Matrix alive
  ad::Tape tape;
  ad::Var v = tape.parameter(xm);
  ad::Var ce = ad::cross_entropy(v, 1);
  ad::Var cd = ad::cosine_distance(t, v);
  ad::Var pd = ad::soft_cross_entropy(prev, v, 3, 0.08);
  CHECK(ce.scalar() == cross_entropy(x, 1).value);
  CHECK(cd.scalar() == cosine_distance(t, x).value);
  CHECK(pd.scalar() == soft_cross_entropy(prev, x, 3, 0.08).value);
  tape.backward(ad::add(ad::add(ce, cd), pd));
  const RowVector expect = cross_entropy(x, 1).grad + cosine_distance(t, x).grad + soft_cross_entropy(prev, x, 3, 0.08).grad;
  CHECK((tape.gradient(v) - Matrix(expect)).cwiseAbs().maxCoeff() <= 1e-12);
}

}  // TEST_SUITE
