#include <doctest.h>

#include <functional>

#include "fhc/autodiff.hpp"
#include "fhc/error.hpp"
#include "fhc/numerics.hpp"
#include "support.hpp"

using namespace fhc;
using fhc::test::randn;
using fhc::test::rel_err;

namespace {

// Contracts `build(x)` with fixed random weights and compares the tape
// gradient against central differences.
double grad_error(const std::function<ad::Var(ad::Var)>& build, const Eigen::MatrixXd& x0, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd weights;
  auto eval = [&](const Eigen::MatrixXd& x, Eigen::MatrixXd* grad) {
    ad::Tape tape;
    ad::Var x_var = tape.parameter(x);
    ad::Var out = build(x_var);
    if (weights.size() == 0) weights = randn(out.rows(), out.cols(), rng);
    ad::Var loss = ad::sum(ad::hadamard(out, tape.constant(weights)));
    if (grad) {
      tape.backward(loss);
      *grad = tape.grad(x_var);
    }
    return loss.value()(0, 0);
  };
  Eigen::MatrixXd g;
  eval(x0, &g);
  const Eigen::MatrixXd fd = fhc::test::fd_grad([&](const Eigen::MatrixXd& x) { return eval(x, nullptr); }, x0, 1e-6);
  return rel_err(g, fd);
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("elementwise and linear primitives match finite differences") {
  std::mt19937_64 rng(21);
  const Eigen::MatrixXd x = randn(3, 4, rng);
  const Eigen::MatrixXd c = randn(4, 2, rng);
  const Eigen::MatrixXd d = randn(3, 4, rng);
  const Eigen::MatrixXd pos = randn(3, 4, rng).cwiseAbs().array() + 0.5;
  const Eigen::MatrixXd bias = randn(3, 1, rng);

  CHECK(grad_error([&](ad::Var v) { return ad::matmul(v, v.tape().constant(c)); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::matmul(v.tape().constant(c.transpose()), ad::transpose(v)); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::add(v, ad::scale(v, 2.0)); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::sub(v.tape().constant(d), v); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::hadamard(v, v); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::cdiv(v, v.tape().constant(pos)); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::cdiv(v.tape().constant(d), ad::add_scalar(ad::hadamard(v, v), 1.0)); }, x) < 1e-6);
  CHECK(grad_error([&](ad::Var v) { return ad::add_bias(v, v.tape().constant(bias)); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::add_bias(v.tape().constant(d), ad::cols(v, 1, 1)); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::tanh(v); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::sigmoid(v); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::log(v); }, pos) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::sum(v); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::squared_norm(v); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::rows(v, 1, 2); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::cols(v, 2, 2); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) { return ad::reshape(v, 6, 2); }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) {
    std::vector<ad::Var> parts{v, ad::scale(v, -1.0), ad::rows(v, 0, 1)};
    return ad::vstack(parts);
  }, x) < 1e-7);
  CHECK(grad_error([&](ad::Var v) {
    std::vector<ad::Var> parts{v, ad::cols(v, 0, 1)};
    return ad::hstack(parts);
  }, x) < 1e-7);
}

TEST_CASE("solve_psd gradient wrt both operands") {
  std::mt19937_64 rng(22);
  const Eigen::MatrixXd l = randn(4, 6, rng);
  const Eigen::MatrixXd b = randn(4, 2, rng);
  CHECK(grad_error([&](ad::Var v) {
    ad::Var a = ad::add_scalar(ad::matmul(v, ad::transpose(v)), 0.0);
    ad::Var a_pd = ad::add(a, v.tape().constant(Eigen::MatrixXd::Identity(4, 4)));
    return ad::solve_psd(a_pd, v.tape().constant(b));
  }, l) < 1e-6);
  const Eigen::MatrixXd a = l * l.transpose() + Eigen::MatrixXd::Identity(4, 4);
  CHECK(grad_error([&](ad::Var v) { return ad::solve_psd(v.tape().constant(a), v); }, b) < 1e-7);
}

TEST_CASE("QR orthonormalization backward matches finite differences") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd wt = randn(2, 4, rng);
    CHECK(grad_error([](ad::Var v) { return ad::qr_orthonormalize(v); }, wt, trial) < 1e-6);
  }
  const Eigen::MatrixXd flat = randn(8, 5, rng);
  CHECK(grad_error([](ad::Var v) { return ad::qr_orthonormalize_columns(v, 2, 4); }, flat) < 1e-6);
}

TEST_CASE("qr_orthonormalize_columns agrees with the per-matrix kernel") {
  std::mt19937_64 rng(24);
  const Eigen::MatrixXd flat = randn(6, 3, rng);
  ad::Tape tape;
  const Eigen::MatrixXd out = ad::qr_orthonormalize_columns(tape.constant(flat), 2, 3).value();
  for (int j = 0; j < 3; ++j) {
    const Eigen::MatrixXd w = qr_orthonormalize(Eigen::MatrixXd(flat.col(j).reshaped(2, 3)));
    CHECK((out.col(j).reshaped(2, 3) - w).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("backward visits each node once and shares gradients") {
  ad::Tape tape;
  ad::Var x = tape.parameter(Eigen::MatrixXd::Constant(1, 1, 3.0));
  ad::Var y = ad::hadamard(x, x);
  ad::Var z = ad::add(y, y);  // 2x^2 via a reused node
  tape.backward(z);
  CHECK(tape.grad(x)(0, 0) == doctest::Approx(12.0));
  CHECK(tape.last_backward_visits() == 2);
}

TEST_CASE("error paths") {
  ad::Tape tape;
  ad::Var x = tape.parameter(Eigen::MatrixXd::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(x), Error);
  CHECK_THROWS_AS(ad::matmul(x, tape.constant(Eigen::MatrixXd::Ones(3, 1))), Error);

  ad::Var fwd_only = tape.record(x.value(), {x}, {});
  ad::Var loss = ad::sum(fwd_only);
  try {
    tape.backward(loss);
    FAIL("expected UnsupportedPrimitive");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnsupportedPrimitive);
  }

  ad::Tape other;
  ad::Var y = other.parameter(Eigen::MatrixXd::Ones(2, 2));
  CHECK_THROWS_AS(ad::add(x, y), Error);
}

TEST_CASE("constants receive no gradient") {
  ad::Tape tape;
  ad::Var c = tape.constant(Eigen::MatrixXd::Ones(2, 2));
  ad::Var p = tape.parameter(Eigen::MatrixXd::Ones(2, 2));
  tape.backward(ad::sum(ad::hadamard(c, p)));
  CHECK(tape.grad(c).isZero());
  CHECK(tape.grad(p).isOnes());
}

}
