#include <doctest.h>

#include <functional>
#include <vector>

#include "helpers.hpp"
#include "sckd/autodiff.hpp"

using namespace sckd;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, Scalar scale = 1.0) {
  std::normal_distribution<Scalar> n(0.0, scale);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

using Op = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

/// Checks d/dx sum(op(x) .* W) against central differences at every coordinate.
void check_op(std::vector<Matrix> inputs, const Op& op, std::uint64_t seed = 3) {
  Rng rng(seed);
  Matrix weights;
  auto evaluate = [&](bool record_grads, std::vector<Matrix>* grads) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Matrix& x : inputs) vars.push_back(tape.parameter(x));
    ad::Var out = op(tape, vars);
    if (weights.size() == 0) weights = random_matrix(out.rows(), out.cols(), rng);
    ad::Var loss = ad::sum(ad::mul_const(out, weights));
    if (record_grads) {
      tape.backward(loss);
      for (ad::Var v : vars) grads->push_back(tape.gradient(v));
    }
    return loss.scalar();
  };
  std::vector<Matrix> grads;
  evaluate(true, &grads);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    REQUIRE(grads[k].rows() == inputs[k].rows());
    REQUIRE(grads[k].cols() == inputs[k].cols());
    for (Index r = 0; r < inputs[k].rows(); ++r)
      for (Index c = 0; c < inputs[k].cols(); ++c) {
        const Scalar fd = test::central_difference(inputs[k], r, c, 1e-5, [&] { return evaluate(false, nullptr); });
        CHECK(test::gradient_error(grads[k](r, c), fd) <= 1e-7);
      }
  }
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("elementwise and linear ops") {
  Rng rng(11);
  const Matrix a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng);
  check_op({a, b}, [](ad::Tape&, auto& v) { return ad::add(v[0], v[1]); });
  check_op({a, b}, [](ad::Tape&, auto& v) { return ad::sub(v[0], v[1]); });
  check_op({a}, [](ad::Tape&, auto& v) { return ad::scale(v[0], -2.5); });
  check_op({a, random_matrix(1, 4, rng)}, [](ad::Tape&, auto& v) { return ad::add_row(v[0], v[1]); });
  check_op({a, random_matrix(4, 2, rng)}, [](ad::Tape&, auto& v) { return ad::matmul(v[0], v[1]); });
  check_op({a, random_matrix(5, 4, rng)}, [](ad::Tape&, auto& v) { return ad::matmul_bt(v[0], v[1]); });
  check_op({a, random_matrix(2, 4, rng), random_matrix(1, 2, rng)},
           [](ad::Tape&, auto& v) { return ad::linear(v[0], v[1], v[2]); });
}

TEST_CASE("nonlinear ops") {
  Rng rng(12);
  const Matrix a = random_matrix(3, 5, rng);
  check_op({a}, [](ad::Tape&, auto& v) { return ad::gelu(v[0]); });
  check_op({a}, [](ad::Tape&, auto& v) { return ad::softmax_rows(v[0]); });
  check_op({a, random_matrix(1, 5, rng), random_matrix(1, 5, rng)},
           [](ad::Tape&, auto& v) { return ad::layer_norm(v[0], v[1], v[2], 1e-5); });
  Matrix mask = random_matrix(3, 5, rng);
  check_op({a}, [mask](ad::Tape&, auto& v) { return ad::mul_const(v[0], mask); });
}

TEST_CASE("indexing ops") {
  Rng rng(13);
  const Matrix table = random_matrix(6, 3, rng);
  const std::vector<int> idx = {4, 0, 4, 2};
  check_op({table}, [&idx](ad::Tape&, auto& v) { return ad::gather_rows(v[0], idx); });
  check_op({table}, [](ad::Tape&, auto& v) { return ad::row(v[0], 3); });
  check_op({table}, [](ad::Tape&, auto& v) { return ad::cols(v[0], 1, 2); });
  check_op({random_matrix(1, 2, rng), random_matrix(1, 3, rng)}, [](ad::Tape&, auto& v) {
    const std::vector<ad::Var> parts = {v[0], v[1], v[0]};
    return ad::concat_cols(parts);
  });
}

TEST_CASE("gather accumulates repeated rows") {
  ad::Tape tape;
  const Matrix table = Matrix::Ones(3, 2);
  ad::Var t = tape.parameter(table);
  const std::vector<int> idx = {1, 1, 1};
  tape.backward(ad::sum(ad::gather_rows(t, idx)));
  const Matrix g = tape.gradient(t);
  CHECK(g(1, 0) == 3.0);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(2, 1) == 0.0);
}

TEST_CASE("constants receive no gradient and off-path leaves get zeros") {
  ad::Tape tape;
  const Matrix x = Matrix::Constant(2, 2, 1.5);
  ad::Var c = tape.constant(x);
  ad::Var p = tape.parameter(x);
  ad::Var unused = tape.parameter(x);
  tape.backward(ad::sum(ad::add(c, p)));
  CHECK(tape.gradient(p).isApproxToConstant(1.0));
  CHECK(tape.gradient(unused).isZero(0.0));
  CHECK_FALSE(tape.requires_grad(c));
}

TEST_CASE("layer norm of a constant row returns the bias") {
  ad::Tape tape;
  ad::Var x = tape.constant(Matrix::Constant(1, 4, 3.0));
  Matrix gain = Matrix::Constant(1, 4, 2.0);
  Matrix bias(1, 4);
  bias << 0.5, -1.0, 0.0, 2.0;
  ad::Var y = ad::layer_norm(x, tape.constant(gain), tape.constant(bias), 1e-5);
  CHECK(y.value() == bias);
}

TEST_CASE("backward requires a scalar loss") {
  const Matrix ones = Matrix::Ones(2, 2);
  ad::Tape tape;
  ad::Var p = tape.parameter(ones);
  CHECK_THROWS_AS(tape.backward(p), ContractError);
}

}  // TEST_SUITE
