#include "fhc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "fhc/designers.hpp"
#include "fhc/error.hpp"
#include "json_io.hpp"

namespace fhc {

namespace {

// Sum rate over a batch as a tape node. The forward pass already has the
// closed-form dR/dW for every column, so the backward pass only rescales it.
// The same matrix is handed back as the (detached) GRU input.
ad::Var batch_rate(ad::Var wflat, std::span<const ChannelSample* const> samples,
                   std::span<const Clustering* const> clusterings, Direction direction, const LinkBudget& budget,
                   Eigen::Index k, Eigen::Index m, Eigen::MatrixXd& grad_w) {
  const Eigen::MatrixXd& w = wflat.value();
  grad_w.resize(w.rows(), w.cols());
  double total = 0.0;
  Eigen::Index col = 0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& h = samples[s]->H;
    EffectiveChannel f;
    for (std::size_t b = 0; b < h.size(); ++b) {
      f.F.push_back(w.col(col + static_cast<Eigen::Index>(b)).reshaped(k, m) * h[b]);
    }
    const RateGradient rg = rate_and_grad_F(direction, *clusterings[s], f, budget);
    total += rg.sum_rate;
    for (std::size_t b = 0; b < h.size(); ++b) {
      grad_w.col(col++) = grad_rate_wrt_W(rg.grad[b], h[b]).reshaped();
    }
  }
  Eigen::MatrixXd g = grad_w;
  return wflat.tape().record(Eigen::MatrixXd::Constant(1, 1, total), {wflat},
                             [wflat, g = std::move(g)](ad::Tape& tape, const ad::Mat& og) {
                               tape.accumulate(wflat, og(0, 0) * g);
                             });
}

std::vector<Eigen::MatrixXd*> tensor_pointers(ModelParams& p) {
  std::vector<Eigen::MatrixXd*> out;
  p.visit([&](Eigen::MatrixXd& t) { out.push_back(&t); });
  return out;
}

LinkBudget gap_free(const Scenario& s, Direction d) { return link_budget(s, d, false); }

}  // namespace

AdamState adam_init(std::span<Eigen::MatrixXd* const> params) {
  AdamState s;
  for (const auto* p : params) {
    s.m.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    s.v.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
  }
  return s;
}

void adam_step(AdamState& state, std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads,
               double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols()) {
      throw Error(ErrorCode::ShapeMismatch, "adam_step: gradient shape differs from parameter");
    }
    if (!grads[i].allFinite()) throw Error(ErrorCode::NonFiniteGradient, "gradient has non-finite entries");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i].cwiseAbs2();
    params[i]->array() -= lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + state.eps);
  }
}

double plateau_scheduler(std::span<const double> history, double initial_lr, const PlateauConfig& cfg) {
  double lr = std::max(initial_lr, cfg.min_lr);
  if (history.empty()) return lr;
  double best = history.front();
  int bad = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] > best + cfg.min_delta) {
      best = history[i];
      bad = 0;
    } else if (++bad >= cfg.patience) {
      lr = std::max(lr * cfg.factor, cfg.min_lr);
      bad = 0;
    }
  }
  return lr;
}

UnrolledLoss unrolled_loss(const ModelParams& params, std::span<const ChannelSample* const> samples,
                           std::span<const Clustering* const> clusterings, Direction direction,
                           const LinkBudget& budget, int T, bool with_grad) {
  if (samples.empty() || samples.size() != clusterings.size()) {
    throw Error(ErrorCode::ShapeMismatch, "need one clustering per sample");
  }
  const auto b_count = static_cast<Eigen::Index>(samples.front()->H.size());
  const auto cols = static_cast<Eigen::Index>(samples.size()) * b_count;
  const Eigen::Index k = params.dims;
  const Eigen::Index m = params.antennas;

  Eigen::MatrixXd x(static_cast<Eigen::Index>(m) * params.users, cols);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    for (Eigen::Index b = 0; b < b_count; ++b) {
      x.col(static_cast<Eigen::Index>(s) * b_count + b) = stage1_features(params, samples[s]->H[b]);
    }
  }

  ad::Tape tape;
  const ModelVars vars = bind_parameters(tape, params);
  ad::Var w = ad::qr_orthonormalize_columns(stage1_graph(params, vars, tape.constant(std::move(x))), k, m);
  Eigen::MatrixXd grad_w;
  std::vector<ad::Var> rates{batch_rate(w, samples, clusterings, direction, budget, k, m, grad_w)};
  ad::Var hidden = tape.constant(Eigen::MatrixXd::Zero(params.hidden_size(), cols));
  for (int t = 1; t <= T; ++t) {
    const GruGraphStep step = gru_graph(params, vars, hidden, tape.constant(grad_w));
    hidden = step.hidden;
    w = ad::qr_orthonormalize_columns(ad::add(w, step.delta), k, m);
    rates.push_back(batch_rate(w, samples, clusterings, direction, budget, k, m, grad_w));
  }
  ad::Var total = rates.front();
  for (std::size_t t = 1; t < rates.size(); ++t) total = ad::add(total, rates[t]);
  const double inv_s = 1.0 / static_cast<double>(samples.size());
  ad::Var loss = ad::scale(total, -inv_s);

  UnrolledLoss out;
  out.loss = loss.value()(0, 0);
  for (const auto& r : rates) out.mean_rate.push_back(r.value()(0, 0) * inv_s);
  if (with_grad && std::isfinite(out.loss)) {
    tape.backward(loss);
    for (const auto& v : vars.tensors) out.grads.push_back(tape.grad(v));
  }
  return out;
}

double validation_rate(const ModelParams& params, const ChannelSet& set, std::span<const Clustering> clusterings,
                       Direction direction, int T) {
  const LinkBudget budget = gap_free(set.scenario, direction);
  RefineConfig rc;
  rc.method = RefineMethod::gru;
  rc.direction = direction;
  rc.T = T;
  rc.model = &params;
  double total = 0.0;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const auto& h = set.samples[i].H;
    const TransformSet w0 = design_stage1_set(params, h);
    total += refine(rc, w0, h, clusterings[i], budget).rates.back();
  }
  return total / static_cast<double>(set.samples.size());
}

TrainResult train_two_stage(const TrainConfig& cfg, const ChannelSet& train, const ChannelSet& validation,
                            const ModelParams& params0, const Checkpoint* resume,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  if (cfg.batch_size < 1 || cfg.epochs < 0 || cfg.unroll_T < 0 || !(cfg.learning_rate > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "training needs positive batch size and learning rate, T >= 0");
  }
  if (train.samples.empty() || validation.samples.empty()) {
    throw Error(ErrorCode::InvalidConfig, "training and validation sets must be nonempty");
  }
  ModelParams params = resume ? resume->params : params0;
  const Scenario& sc = train.scenario;
  if (params.antennas != sc.antennas || params.users != sc.num_users() || params.dims != sc.compression_dim) {
    throw Error(ErrorCode::ShapeMismatch, "model dimensions do not match the dataset");
  }
  const LinkBudget budget = gap_free(sc, cfg.direction);
  std::vector<Clustering> train_cl, val_cl;
  for (const auto& s : train.samples) train_cl.push_back(cluster_users(s.beta, sc.cluster_size));
  for (const auto& s : validation.samples) val_cl.push_back(cluster_users(s.beta, validation.scenario.cluster_size));

  auto ptrs = tensor_pointers(params);
  AdamState adam = adam_init(ptrs);
  double base_lr = cfg.learning_rate;
  int epoch0 = 0;
  if (resume) {
    epoch0 = resume->epoch;
    base_lr = resume->learning_rate;
    if (!resume->adam_m.empty()) {
      adam.m = resume->adam_m;
      adam.v = resume->adam_v;
      adam.step = resume->adam_step;
    }
  }
  double lr = base_lr;

  TrainResult result;
  std::vector<double> history;
  double best = -std::numeric_limits<double>::infinity();
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train.samples.size());

  for (int e = epoch0 + 1; e <= epoch0 + cfg.epochs; ++e) {
    const int t_unroll = e <= cfg.pretrain_epochs ? 0 : cfg.unroll_T;
    if (cfg.pretrain_epochs > 0 && e == cfg.pretrain_epochs + 1) {
      // Validation switches from T = 0 to the full unroll; start a fresh plateau.
      history.clear();
      base_lr = lr;
      best = -std::numeric_limits<double>::infinity();
    }
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(e), 4));
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
    if (t_unroll > 0 && cfg.max_batches > 0) n_batches = std::min<std::size_t>(n_batches, cfg.max_batches);

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < n_batches; ++bi) {
      const std::size_t lo = bi * cfg.batch_size;
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      std::vector<const ChannelSample*> batch;
      std::vector<const Clustering*> batch_cl;
      for (std::size_t j = lo; j < hi; ++j) {
        batch.push_back(&train.samples[order[j]]);
        batch_cl.push_back(&train_cl[order[j]]);
      }
      UnrolledLoss ul = unrolled_loss(params, batch, batch_cl, cfg.direction, budget, t_unroll);
      if (!std::isfinite(ul.loss)) {
        std::string indices;
        for (std::size_t j = lo; j < hi; ++j) indices += (j > lo ? "," : "") + std::to_string(order[j]);
        if (!cfg.dump_dir.empty()) {
          detail::json dump{{"epoch", e}, {"batch", bi}, {"samples", detail::json::parse("[" + indices + "]")}};
          std::ofstream(cfg.dump_dir / "nonfinite_batch.json") << dump.dump(2) << '\n';
        }
        throw Error(ErrorCode::NonFiniteLoss,
                    "epoch " + std::to_string(e) + " batch " + std::to_string(bi) + " samples [" + indices + "]");
      }
      adam_step(adam, ptrs, ul.grads, lr);
      loss_sum += ul.loss;
    }

    EpochLog rec;
    rec.epoch = e;
    rec.train_loss = loss_sum / static_cast<double>(n_batches);
    rec.val_rate_at_T = validation_rate(params, validation, val_cl, cfg.direction, t_unroll);
    rec.lr = lr;
    rec.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.push_back(rec.val_rate_at_T);
    lr = plateau_scheduler(history, base_lr, cfg.plateau);
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_rate_at_T > best) {
      best = rec.val_rate_at_T;
      result.best = Checkpoint{params, cfg.config_digest, e, lr, {}, {}, 0};
    }
  }
  result.last = Checkpoint{params, cfg.config_digest, epoch0 + cfg.epochs, lr, adam.m, adam.v, adam.step};
  if (result.log.empty()) result.best = result.last;
  return result;
}

}  // namespace fhc
