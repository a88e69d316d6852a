#pragma once

// Learned designers: the stage-1 DNN shared by all RRHs and the GRU
// meta-learner with its output head.
//
// Every tensor is an Eigen::MatrixXd (biases are single columns) so the
// optimizer and the checkpoint code can walk them uniformly. Flattening of
// K x M matrices into KM vectors is column-major throughout.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fhc/autodiff.hpp"

namespace fhc {

struct DenseLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::MatrixXd b;  // out x 1
};

/// z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br),
/// n = tanh(Wn x + Un (r . h) + bn), h' = (1 - z) . h + z . n.
struct GruParams {
  Eigen::MatrixXd wz, uz, bz;
  Eigen::MatrixXd wr, ur, br;
  Eigen::MatrixXd wn, un, bn;
};

struct ModelParams {
  int antennas = 0;   // M
  int users = 0;      // N
  int dims = 0;       // K
  std::vector<int> widths;
  double input_scale = 1.0;
  bool sort_columns = true;

  std::vector<DenseLayer> stage1;  // tanh on every layer but the last
  GruParams gru;
  DenseLayer head_hidden;  // tanh
  DenseLayer head_out;

  int hidden_size() const { return 2 * dims * antennas; }

  /// Visits every tensor in the fixed checkpoint order.
  template <typename Fn>
  void visit(Fn&& fn) {
    for (auto& l : stage1) {
      fn(l.w);
      fn(l.b);
    }
    for (auto* t : {&gru.wz, &gru.uz, &gru.bz, &gru.wr, &gru.ur, &gru.br, &gru.wn, &gru.un, &gru.bn}) fn(*t);
    fn(head_hidden.w);
    fn(head_hidden.b);
    fn(head_out.w);
    fn(head_out.b);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    const_cast<ModelParams*>(this)->visit([&](Eigen::MatrixXd& t) { fn(static_cast<const Eigen::MatrixXd&>(t)); });
  }

  std::size_t parameter_count() const;
  bool all_finite() const;
};

/// Fan-in scaled uniform weights, zero biases; the update-gate bias starts at
/// -1 so early refinement rounds lean on the previous hidden state.
ModelParams init_model(int antennas, int users, int dims, std::vector<int> widths, double input_scale,
                       std::uint64_t seed);

/// Stage-1 input for one RRH: columns of H_b sorted by decreasing norm
/// (stable), scaled by input_scale, flattened column-major.
Eigen::VectorXd stage1_features(const ModelParams& params, const Eigen::MatrixXd& h);

/// W_b^(0) = qr_orthonormalize(reshape(DNN(features))). Zero pre-QR output
/// throws DegenerateInitialization.
Eigen::MatrixXd stage1_forward(const ModelParams& params, const Eigen::MatrixXd& h);

struct GruStep {
  Eigen::VectorXd hidden;
  Eigen::MatrixXd delta;  // K x M
};

GruStep gru_step(const ModelParams& params, const Eigen::VectorXd& hidden, const Eigen::MatrixXd& grad_w);

// ---- tape versions, batched over columns ------------------------------------

struct ModelVars {
  std::vector<ad::Var> tensors;  // visit order
};

ModelVars bind_parameters(ad::Tape& tape, const ModelParams& params);

/// Pre-QR stage-1 outputs (KM x cols) for a feature matrix (MN x cols).
ad::Var stage1_graph(const ModelParams& params, const ModelVars& vars, ad::Var features);

struct GruGraphStep {
  ad::Var hidden;
  ad::Var delta;  // KM x cols
};

GruGraphStep gru_graph(const ModelParams& params, const ModelVars& vars, ad::Var hidden, ad::Var input);

// ---- checkpoints ------------------------------------------------------------

constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  ModelParams params;
  std::string config_digest;
  int epoch = 0;
  double learning_rate = 0.0;
  // Optional Adam moments in visit order (empty when not saved).
  std::vector<Eigen::MatrixXd> adam_m, adam_v;
  long adam_step = 0;
};

/// One JSON header line, then the float64 little-endian payload: every tensor
/// in visit order (column-major), followed by the Adam moments if present.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fhc
