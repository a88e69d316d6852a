#include <doctest.h>

#include <cmath>

#include "fhc/designers.hpp"
#include "fhc/error.hpp"
#include "fhc/numerics.hpp"
#include "fhc/training.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fhc;
using fhc::test::randn;

namespace {

std::vector<Eigen::MatrixXd*> pointers(std::vector<Eigen::MatrixXd>& v) {
  std::vector<Eigen::MatrixXd*> out;
  for (auto& m : v) out.push_back(&m);
  return out;
}

std::vector<Eigen::MatrixXd> tensors(const ModelParams& p) {
  std::vector<Eigen::MatrixXd> out;
  p.visit([&](const Eigen::MatrixXd& t) { out.push_back(t); });
  return out;
}

// Two RRHs, three antennas, two users; both users served by both RRHs.
struct Tiny {
  std::vector<ChannelSample> samples;
  Clustering cl;
  LinkBudget budget;
  ModelParams params;
};

Tiny tiny_instance() {
  Tiny t;
  std::mt19937_64 rng(5);
  for (int s = 0; s < 2; ++s) {
    ChannelSample c;
    c.beta = Eigen::MatrixXd::Ones(2, 2);
    c.H = {randn(3, 2, rng), randn(3, 2, rng)};
    t.samples.push_back(c);
  }
  t.cl.theta = {{0, 1}, {1, 0}};
  t.cl.phi = {{0, 1}, {0, 1}};
  t.budget.power = Eigen::VectorXd::Constant(2, 1.0);
  t.budget.noise = 0.1;
  t.params = init_model(3, 2, 2, {6}, 1.0, 9);
  t.params.visit([&](Eigen::MatrixXd& m) { m += randn(m.rows(), m.cols(), rng, 0.2); });
  return t;
}

// Loss with the GRU inputs frozen at `inputs` (one matrix per round, sample
// and RRH), evaluated with the direct Eigen forward passes.
double frozen_loss(const ModelParams& p, const Tiny& t, int T, const std::vector<std::vector<Eigen::MatrixXd>>& inputs,
                   std::vector<std::vector<Eigen::MatrixXd>>* record) {
  double total = 0.0;
  std::size_t slot = 0;
  for (const auto& s : t.samples) {
    TransformSet w = design_stage1_set(p, s.H);
    std::vector<Eigen::VectorXd> hidden(2, Eigen::VectorXd::Zero(p.hidden_size()));
    for (int r = 0; r <= T; ++r) {
      const EffectiveChannel f = effective_channel(w, s.H);
      const RateGradient rg = rate_and_grad_F(Direction::uplink, t.cl, f, t.budget);
      total += rg.sum_rate;
      if (r == T) break;
      for (int b = 0; b < 2; ++b) {
        const Eigen::MatrixXd g = grad_rate_wrt_W(rg.grad[b], s.H[b]);
        if (record) (*record)[r].push_back(g);
        const GruStep st = gru_step(p, hidden[b], record ? g : inputs[r][slot + b]);
        hidden[b] = st.hidden;
        w.W[b] = qr_orthonormalize(w.W[b] + st.delta);
      }
    }
    slot += 2;
  }
  return -total / 2.0;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("Adam matches a scalar-loop oracle") {
  std::mt19937_64 rng(1);
  std::vector<Eigen::MatrixXd> params{randn(3, 2, rng), randn(4, 1, rng)};
  std::vector<std::vector<double>> ref;
  std::vector<test::AdamOracle> oracle;
  for (const auto& p : params) {
    ref.emplace_back(p.data(), p.data() + p.size());
    oracle.emplace_back(p.size());
  }
  auto ptrs = pointers(params);
  AdamState st = adam_init(ptrs);
  const double lr = 3e-3;
  for (int step = 1; step <= 25; ++step) {
    std::vector<Eigen::MatrixXd> grads{randn(3, 2, rng), randn(4, 1, rng)};
    adam_step(st, ptrs, grads, lr);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      oracle[i].step(ref[i], std::vector<double>(grads[i].data(), grads[i].data() + grads[i].size()), lr, step);
    }
  }
  for (std::size_t i = 0; i < ref.size(); ++i) {
    for (Eigen::Index j = 0; j < params[i].size(); ++j) CHECK(std::abs(params[i].data()[j] - ref[i][j]) < 1e-12);
  }
  CHECK(st.step == 25);
}

TEST_CASE("Adam edge cases") {
  std::mt19937_64 rng(2);
  std::vector<Eigen::MatrixXd> params{randn(2, 2, rng)};
  const std::vector<Eigen::MatrixXd> before = params;
  auto ptrs = pointers(params);
  AdamState st = adam_init(ptrs);

  SUBCASE("zero gradients leave parameters unchanged") {
    const std::vector<Eigen::MatrixXd> zero{Eigen::MatrixXd::Zero(2, 2)};
    for (int i = 0; i < 5; ++i) adam_step(st, ptrs, zero, 1e-2);
    CHECK(params == before);
  }
  SUBCASE("a constant gradient moves every entry by about lr against its sign") {
    const std::vector<Eigen::MatrixXd> g{(Eigen::MatrixXd(2, 2) << 3.0, -1e-3, 50.0, -7.0).finished()};
    for (int i = 0; i < 10; ++i) adam_step(st, ptrs, g, 1e-3);
    const Eigen::MatrixXd moved = params[0] - before[0];
    CHECK((moved + 1e-2 * g[0].cwiseSign()).cwiseAbs().maxCoeff() < 1e-7);
  }
  SUBCASE("non-finite gradients are rejected before any update") {
    std::vector<Eigen::MatrixXd> g{Eigen::MatrixXd::Ones(2, 2)};
    g[0](1, 0) = std::nan("");
    try {
      adam_step(st, ptrs, g, 1e-2);
      FAIL("expected NonFiniteGradient");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFiniteGradient);
    }
    CHECK(params == before);
    CHECK(st.step == 0);
    CHECK(st.m[0].isZero());
  }
}

TEST_CASE("plateau scheduler") {
  PlateauConfig cfg;
  cfg.patience = 3;
  CHECK(plateau_scheduler(std::vector<double>{}, 1e-3, cfg) == 1e-3);
  CHECK(plateau_scheduler(std::vector<double>{1, 2, 3, 4, 5}, 1e-3, cfg) == 1e-3);
  CHECK(plateau_scheduler(std::vector<double>{5, 5, 5}, 1e-3, cfg) == 1e-3);
  CHECK(plateau_scheduler(std::vector<double>{5, 5, 5, 5}, 1e-3, cfg) == 5e-4);
  CHECK(plateau_scheduler(std::vector<double>{5, 5, 5, 5, 5, 5, 5}, 1e-3, cfg) == 2.5e-4);
  // Improvements below min_delta do not count.
  CHECK(plateau_scheduler(std::vector<double>{5, 5.00005, 5.00009, 5.00002}, 1e-3, cfg) == 5e-4);
  CHECK(plateau_scheduler(std::vector<double>{5, 5, 5, 6, 6, 6}, 1e-3, cfg) == 1e-3);
  cfg.min_lr = 4e-4;
  CHECK(plateau_scheduler(std::vector<double>(20, 1.0), 1e-3, cfg) == 4e-4);
}

TEST_CASE("unrolled loss gradient matches finite differences with frozen GRU inputs") {
  Tiny t = tiny_instance();
  const int T = 2;
  std::vector<const ChannelSample*> sp{&t.samples[0], &t.samples[1]};
  std::vector<const Clustering*> cp{&t.cl, &t.cl};
  const UnrolledLoss ul = unrolled_loss(t.params, sp, cp, Direction::uplink, t.budget, T);

  std::vector<std::vector<Eigen::MatrixXd>> inputs(T);
  const double direct = frozen_loss(t.params, t, T, {}, &inputs);
  CHECK(std::abs(direct - ul.loss) < 1e-12 * std::abs(direct));

  std::vector<Eigen::MatrixXd*> ptrs;
  t.params.visit([&](Eigen::MatrixXd& m) { ptrs.push_back(&m); });
  REQUIRE(ptrs.size() == ul.grads.size());
  std::mt19937_64 rng(6);
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    // A few random entries of every tensor.
    for (int rep = 0; rep < 3; ++rep) {
      const auto j = std::uniform_int_distribution<Eigen::Index>(0, ptrs[i]->size() - 1)(rng);
      double& x = ptrs[i]->data()[j];
      const double x0 = x, h = 1e-5;
      x = x0 + h;
      const double fp = frozen_loss(t.params, t, T, inputs, nullptr);
      x = x0 - h;
      const double fm = frozen_loss(t.params, t, T, inputs, nullptr);
      x = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double g = ul.grads[i].data()[j];
      CHECK(std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-8}) < 1e-4);
    }
  }
}

TEST_CASE("T = 0 loss is the negated stage-1 rate") {
  Tiny t = tiny_instance();
  std::vector<const ChannelSample*> sp{&t.samples[0], &t.samples[1]};
  std::vector<const Clustering*> cp{&t.cl, &t.cl};
  const UnrolledLoss ul = unrolled_loss(t.params, sp, cp, Direction::uplink, t.budget, 0);
  double expected = 0.0;
  for (const auto& s : t.samples) {
    expected += sum_rate(Direction::uplink, t.cl, design_stage1_set(t.params, s.H), s.H, t.budget).sum_rate;
  }
  CHECK(ul.loss == doctest::Approx(-expected / 2.0).epsilon(1e-12));
  CHECK(ul.mean_rate.size() == 1);
  // GRU and head parameters do not enter a zero-round loss.
  for (std::size_t i = 2 * t.params.stage1.size(); i < ul.grads.size(); ++i) CHECK(ul.grads[i].isZero());
}

TEST_CASE("unrolled rates follow designers::refine") {
  const ChannelSet set = fhc::test::desk_set(3, 21);
  const ModelParams p = init_model(4, 7, 2, {16}, 1e5, 3);
  const LinkBudget budget = link_budget(set.scenario, Direction::downlink, false);
  std::vector<Clustering> cl;
  std::vector<const ChannelSample*> sp;
  std::vector<const Clustering*> cp;
  for (const auto& s : set.samples) cl.push_back(cluster_users(s.beta, 3));
  for (std::size_t i = 0; i < 3; ++i) {
    sp.push_back(&set.samples[i]);
    cp.push_back(&cl[i]);
  }
  const UnrolledLoss ul = unrolled_loss(p, sp, cp, Direction::downlink, budget, 3, false);
  RefineConfig rc;
  rc.method = RefineMethod::gru;
  rc.direction = Direction::downlink;
  rc.T = 3;
  rc.model = &p;
  std::vector<double> mean(4, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto r = refine(rc, design_stage1_set(p, set.samples[i].H), set.samples[i].H, cl[i], budget);
    for (int t = 0; t <= 3; ++t) mean[t] += r.rates[t] / 3.0;
  }
  for (int t = 0; t <= 3; ++t) CHECK(ul.mean_rate[t] == doctest::Approx(mean[t]).epsilon(1e-10));
  CHECK(validation_rate(p, set, cl, Direction::downlink, 3) == doctest::Approx(mean[3]).epsilon(1e-12));
}

TEST_CASE("training overfits a single sample past EVD") {
  const ChannelSet one = fhc::test::desk_set(1, 31);
  const auto& s = one.samples[0];
  const Clustering cl = cluster_users(s.beta, 3);
  const LinkBudget budget = link_budget(one.scenario, Direction::uplink, false);
  const double evd = sum_rate(Direction::uplink, cl, design_evd_set(s.H, 2), s.H, budget).sum_rate;

  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 1;
  cfg.epochs = 200;
  cfg.pretrain_epochs = 150;
  cfg.unroll_T = 2;
  cfg.seed = 4;
  const double scale = std::sqrt(one.scenario.p_ul_mw() / one.scenario.noise_mw()) / 10.0;
  const ModelParams p0 = init_model(4, 7, 2, {32, 16}, scale, 8);
  const std::uint64_t checksum = dataset_checksum(one);
  const TrainResult r = train_two_stage(cfg, one, one, p0, nullptr);
  CHECK(dataset_checksum(one) == checksum);
  REQUIRE(r.log.size() == 200);
  CHECK(r.log.back().val_rate_at_T > evd);
  CHECK(r.log.front().epoch == 1);
  MESSAGE("evd " << evd << " trained " << r.log.back().val_rate_at_T);
}

TEST_CASE("training is deterministic and resumable") {
  const ChannelSet train = fhc::test::desk_set(12, 41);
  const ChannelSet val = fhc::test::desk_set(4, 42);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 5;
  cfg.epochs = 4;
  cfg.unroll_T = 2;
  cfg.pretrain_epochs = 1;
  cfg.seed = 11;
  const double scale = std::sqrt(train.scenario.p_ul_mw() / train.scenario.noise_mw()) / 10.0;
  const ModelParams p0 = init_model(4, 7, 2, {16}, scale, 12);

  const TrainResult a = train_two_stage(cfg, train, val, p0);
  const TrainResult b = train_two_stage(cfg, train, val, p0);
  CHECK(tensors(a.last.params) == tensors(b.last.params));
  CHECK(a.log.back().val_rate_at_T == b.log.back().val_rate_at_T);
  CHECK(a.last.epoch == 4);

  cfg.epochs = 2;
  const TrainResult first = train_two_stage(cfg, train, val, p0);
  const TrainResult second = train_two_stage(cfg, train, val, p0, &first.last);
  CHECK(second.log.front().epoch == 3);
  CHECK(tensors(second.last.params) == tensors(a.last.params));

  ModelParams wrong = init_model(5, 7, 2, {16}, scale, 12);
  CHECK_THROWS_AS(train_two_stage(cfg, train, val, wrong), Error);
}

}
