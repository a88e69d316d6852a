#pragma once

// End-to-end training of the stage-1 DNN and the GRU meta-learner.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fhc/model.hpp"
#include "fhc/phy.hpp"
#include "fhc/scenario.hpp"

namespace fhc {

struct AdamState {
  std::vector<Eigen::MatrixXd> m, v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState adam_init(std::span<Eigen::MatrixXd* const> params);

/// One bias-corrected Adam descent step. Throws NonFiniteGradient (leaving
/// state and params untouched) if any gradient entry is not finite.
void adam_step(AdamState& state, std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads,
               double lr);

struct PlateauConfig {
  double factor = 0.5;
  int patience = 10;
  double min_lr = 1e-6;
  double min_delta = 1e-4;  // absolute improvement of the (maximized) objective
};

/// Learning rate after replaying a validation history (higher is better):
/// every `patience` consecutive epochs without a min_delta improvement over
/// the best value so far multiply the rate by `factor`, clamped at min_lr.
double plateau_scheduler(std::span<const double> history, double initial_lr, const PlateauConfig& cfg);

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 128;
  int epochs = 10;
  /// Leading epochs trained and validated with T = 0 before the full unroll;
  /// the plateau scheduler and best checkpoint restart when it ends. 0 disables.
  int pretrain_epochs = 0;
  /// Caps minibatches per epoch of the unrolled phase; 0 means a full pass.
  int max_batches = 0;
  int unroll_T = 4;
  PlateauConfig plateau;
  std::uint64_t seed = 1;
  Direction direction = Direction::uplink;
  std::filesystem::path dump_dir;  // NonFiniteLoss batch dumps, optional
  std::string config_digest;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_rate_at_T = 0.0;  // mean gap-free sum rate after the epoch's T rounds
  double lr = 0.0;
  double wallclock = 0.0;
};

struct TrainResult {
  Checkpoint best;   // best validation rate
  Checkpoint last;   // resumable state after the final epoch
  std::vector<EpochLog> log;
};

/// Loss -(1/S) sum_s sum_{t=0..T} R_t(sample s), with R gap-free and
/// unquantized, plus its gradient wrt every parameter tensor (visit order).
struct UnrolledLoss {
  double loss = 0.0;
  std::vector<double> mean_rate;  // per t, averaged over samples
  std::vector<Eigen::MatrixXd> grads;
};

UnrolledLoss unrolled_loss(const ModelParams& params, std::span<const ChannelSample* const> samples,
                           std::span<const Clustering* const> clusterings, Direction direction,
                           const LinkBudget& budget, int T, bool with_grad = true);

/// Mean gap-free sum rate after T GRU rounds over a validation set.
double validation_rate(const ModelParams& params, const ChannelSet& set, std::span<const Clustering> clusterings,
                       Direction direction, int T);

/// `resume` continues its epoch counter, learning rate and Adam moments.
TrainResult train_two_stage(const TrainConfig& cfg, const ChannelSet& train, const ChannelSet& validation,
                            const ModelParams& params0, const Checkpoint* resume = nullptr,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace fhc
