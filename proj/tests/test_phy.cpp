#include <doctest.h>

#include <cmath>

#include "fhc/designers.hpp"
#include "fhc/error.hpp"
#include "fhc/numerics.hpp"
#include "fhc/phy.hpp"
#include "support.hpp"

using namespace fhc;
using fhc::test::randn;
using fhc::test::rel_err;

namespace {

struct Instance {
  ChannelSample sample;
  Clustering clustering;
  TransformSet w;
  EffectiveChannel f;
};

Instance desk_instance(std::uint64_t seed, bool random_w = true) {
  const Scenario s = preset("desk-7cell");
  Instance in;
  in.sample = draw_channels(s, 1, seed).samples[0];
  in.clustering = cluster_users(in.sample.beta, s.cluster_size);
  if (random_w) {
    std::mt19937_64 rng(seed + 1000);
    std::vector<Eigen::MatrixXd> raw;
    for (int b = 0; b < 7; ++b) raw.push_back(randn(2, 4, rng));
    in.w = TransformSet::from_raw(raw);
  } else {
    in.w = design_evd_set(in.sample.H, 2);
  }
  in.f = effective_channel(in.w, in.sample.H);
  return in;
}

}  // namespace

TEST_SUITE("phy") {

TEST_CASE("single-user scalar chain matches the hand formula") {
  Clustering c;
  c.theta = {{0}};
  c.phi = {{0}};
  EffectiveChannel f;
  f.F = {Eigen::MatrixXd::Constant(1, 1, 2.0)};
  LinkBudget lb{Eigen::VectorXd::Constant(1, 3.0), 0.5, 1.0};
  // SINR = p f^2 / sigma^2 = 24.
  CHECK(ul_user_rate(0, c, f, f, lb) == doctest::Approx(std::log2(25.0)));
  CHECK(sum_rate(Direction::downlink, c, f, lb).sum_rate == doctest::Approx(std::log2(25.0)));
  lb.sinr_gap = 4.0;
  CHECK(ul_user_rate(0, c, f, f, lb) == doctest::Approx(std::log2(7.0)));
}

TEST_CASE("uplink MMSE SINR equals p f^T B^{-1} f and is locally optimal") {
  const Instance in = desk_instance(1);
  const LinkBudget lb = link_budget(preset("desk-7cell"), Direction::uplink, false);
  std::mt19937_64 rng(2);
  for (int n = 0; n < 7; ++n) {
    const Eigen::MatrixXd fbar = stack_cluster(in.f.F, in.clustering.theta[n]);
    Eigen::VectorXd p_minus = lb.power;
    p_minus(n) = 0.0;
    const Eigen::MatrixXd bmat = fbar * p_minus.asDiagonal() * fbar.transpose() +
                                 lb.noise * Eigen::MatrixXd::Identity(fbar.rows(), fbar.rows());
    const double sinr = lb.power(n) * fbar.col(n).dot(solve_psd(bmat, fbar.col(n)).col(0));
    CHECK(rel_err(ul_user_rate(n, in.clustering, in.f, in.f, lb), std::log2(1.0 + sinr)) < 1e-10);

    // Perturbing the combiner never helps.
    const Eigen::VectorXd c = ul_receive_beamformer(fbar, n, lb.power, lb.noise);
    auto sinr_of = [&](const Eigen::VectorXd& v) {
      const Eigen::VectorXd proj = fbar.transpose() * v;
      const double sig = lb.power(n) * proj(n) * proj(n);
      return sig / ((lb.power.array() * proj.array().square()).sum() - sig + lb.noise * v.squaredNorm());
    };
    for (int k = 0; k < 20; ++k) {
      const Eigen::VectorXd dv = randn(c.size(), 1, rng) * 1e-3 * c.norm();
      CHECK(sinr_of(c + dv) <= sinr_of(c) * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("mismatched CSI never beats the matched combiner") {
  const Instance in = desk_instance(3);
  const LinkBudget lb = link_budget(preset("desk-7cell"), Direction::uplink);
  std::mt19937_64 rng(4);
  EffectiveChannel noisy = in.f;
  for (auto& fb : noisy.F) fb += randn(fb.rows(), fb.cols(), rng, 0.3 * fb.cwiseAbs().mean());
  for (int n = 0; n < 7; ++n) {
    CHECK(ul_user_rate(n, in.clustering, in.f, noisy, lb) <= ul_user_rate(n, in.clustering, in.f, in.f, lb) + 1e-12);
  }
}

TEST_CASE("rates are invariant to invertible per-RRH transforms") {
  const Instance in = desk_instance(5);
  const LinkBudget lb = link_budget(preset("desk-7cell"), Direction::uplink);
  std::mt19937_64 rng(6);
  TransformSet skewed;
  for (const auto& w : in.w.W) skewed.W.push_back((randn(2, 2, rng) + 2.0 * Eigen::MatrixXd::Identity(2, 2)) * w);
  const double base = sum_rate(Direction::uplink, in.clustering, in.w, in.sample.H, lb).sum_rate;
  const double general = sum_rate(Direction::uplink, in.clustering, skewed, in.sample.H, lb).sum_rate;
  CHECK(std::abs(base - general) < 1e-8);
  // The unsimplified form also agrees on orthonormal input.
  TransformSet plain = in.w;
  plain.orthonormal = false;
  CHECK(std::abs(base - sum_rate(Direction::uplink, in.clustering, plain, in.sample.H, lb).sum_rate) < 1e-9);
  CHECK_THROWS_AS(sum_rate(Direction::downlink, in.clustering, skewed, in.sample.H, lb), Error);
}

TEST_CASE("analytic dR/dF matches finite differences") {
  for (Direction dir : {Direction::uplink, Direction::downlink}) {
    for (bool gap : {false, true}) {
      const Instance in = desk_instance(7 + gap);
      const LinkBudget lb = link_budget(preset("desk-7cell"), dir, gap);
      const RateGradient rg = rate_and_grad_F(dir, in.clustering, in.f, lb);
      CHECK(rel_err(rg.sum_rate, sum_rate(dir, in.clustering, in.f, lb).sum_rate) < 1e-10);
      for (int b : {0, 3}) {
        auto rate_of = [&](const Eigen::MatrixXd& fb) {
          EffectiveChannel f = in.f;
          f.F[b] = fb;
          return sum_rate(dir, in.clustering, f, lb).sum_rate;
        };
        CHECK(rel_err(rg.grad[b], fhc::test::fd_grad(rate_of, in.f.F[b])) < 1e-5);
      }
    }
  }
}

TEST_CASE("taped sum rate agrees with the closed forms") {
  for (Direction dir : {Direction::uplink, Direction::downlink}) {
    const Instance in = desk_instance(11);
    const LinkBudget lb = link_budget(preset("desk-7cell"), dir);
    ad::Tape tape;
    std::vector<ad::Var> fv;
    for (const auto& fb : in.f.F) fv.push_back(tape.parameter(fb));
    ad::Var r = sum_rate_graph(dir, fv, in.clustering, lb);
    CHECK(rel_err(r.value()(0, 0), sum_rate(dir, in.clustering, in.f, lb).sum_rate) < 1e-10);
    tape.backward(r);
    const auto analytic = grad_rate_wrt_F(dir, in.clustering, in.f, lb);
    for (int b = 0; b < 7; ++b) CHECK(rel_err(tape.grad(fv[b]), analytic[b]) < 1e-8);
  }
}

TEST_CASE("gradient wrt W is recovered locally from dR/dF") {
  const Instance in = desk_instance(13);
  const LinkBudget lb = link_budget(preset("desk-7cell"), Direction::uplink, false);
  const auto gf = grad_rate_wrt_F(Direction::uplink, in.clustering, in.f, lb);
  const int b = 2;
  auto rate_of = [&](const Eigen::MatrixXd& wb) {
    TransformSet w = in.w;
    w.W[b] = wb;
    return sum_rate(Direction::uplink, in.clustering, effective_channel(w, in.sample.H), lb).sum_rate;
  };
  CHECK(rel_err(grad_rate_wrt_W(gf[b], in.sample.H[b]), fhc::test::fd_grad(rate_of, in.w.W[b])) < 1e-5);
}

TEST_CASE("quantization noise lowers rates and vanishes at D = 0") {
  const Instance in = desk_instance(15);
  for (Direction dir : {Direction::uplink, Direction::downlink}) {
    const LinkBudget lb = link_budget(preset("desk-7cell"), dir);
    const double clean = sum_rate(dir, in.clustering, in.f, lb).sum_rate;
    QuantNoise zero;
    QuantNoise some;
    for (int b = 0; b < 7; ++b) {
      zero.D.push_back(Eigen::VectorXd::Zero(2));
      some.D.push_back(Eigen::VectorXd::Constant(2, lb.noise));
    }
    CHECK(sum_rate(dir, in.clustering, in.f, lb, &zero).sum_rate == doctest::Approx(clean).epsilon(1e-12));
    const RateReport q = sum_rate(dir, in.clustering, in.f, lb, &some);
    CHECK(q.quantized);
    CHECK(q.sum_rate < clean);
  }
}

TEST_CASE("zero power users get zero rate and zero channels are excluded") {
  Instance in = desk_instance(17);
  LinkBudget lb = link_budget(preset("desk-7cell"), Direction::downlink);
  lb.power(3) = 0.0;
  const RateReport r = sum_rate(Direction::downlink, in.clustering, in.f, lb);
  CHECK(r.per_user(3) == 0.0);
  CHECK(r.sum_rate > 0.0);
  for (auto& fb : in.f.F) fb.col(4).setZero();
  const Eigen::MatrixXd fbar = stack_cluster(in.f.F, in.clustering.theta[4]);
  CHECK_THROWS_AS(dl_transmit_beamformer(fbar, 4, lb.power, lb.noise), Error);
  CHECK(sum_rate(Direction::downlink, in.clustering, in.f, lb).per_user(4) == 0.0);
}

TEST_CASE("single-cell benchmark uses only the strongest RRH") {
  const Instance in = desk_instance(19);
  const LinkBudget lb = link_budget(preset("desk-7cell"), Direction::uplink);
  const RateReport r = single_cell_rate(Direction::uplink, in.clustering, in.sample.H, lb);
  const int n = 0;
  const Eigen::MatrixXd& h = in.sample.H[in.clustering.theta[n][0]];
  const Eigen::VectorXd c = ul_receive_beamformer(h, n, lb.power, lb.noise);
  const Eigen::VectorXd v = h.transpose() * c;
  const double sig = lb.power(n) * v(n) * v(n);
  const double den = (lb.power.array() * v.array().square()).sum() - sig + lb.noise * c.squaredNorm();
  CHECK(r.per_user(n) == doctest::Approx(std::log2(1.0 + sig / den / lb.sinr_gap)).epsilon(1e-12));
}

}
