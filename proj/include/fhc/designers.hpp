#pragma once

// Transformation-matrix designers: local EVD baselines, the learned stage-1
// initializer, iterative refinement with CP-side gradients, and the
// global-CSI gradient ascent benchmark.

#include <Eigen/Dense>

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fhc/model.hpp"
#include "fhc/phy.hpp"
#include "fhc/scenario.hpp"

namespace fhc {

/// Rows: top-K eigenvectors of H_b H_b^T.
Eigen::MatrixXd design_evd(const Eigen::MatrixXd& h, int k);

/// Rows: top-K eigenvectors of H_b diag(w) H_b^T with
/// w_n = 1 / (p * M * sum_{j != b} beta_jn + sigma^2).
Eigen::MatrixXd design_modified_evd(const Eigen::MatrixXd& h, int b, const Eigen::MatrixXd& beta, double p,
                                    double noise, int k);

TransformSet design_evd_set(std::span<const Eigen::MatrixXd> h, int k);
TransformSet design_modified_evd_set(std::span<const Eigen::MatrixXd> h, const Eigen::MatrixXd& beta, double p,
                                     double noise, int k);
TransformSet design_stage1_set(const ModelParams& params, std::span<const Eigen::MatrixXd> h);

/// Scalars exchanged between each RRH and the CP.
struct SignalingTrace {
  struct Round {
    std::vector<long> uplink;    // per RRH
    std::vector<long> downlink;  // per RRH
  };
  std::vector<Round> rounds;

  std::vector<long> totals() const;
};

enum class RefineMethod { gd, gru, adam, rmsprop };
std::string_view to_string(RefineMethod m) noexcept;
RefineMethod parse_refine_method(std::string_view s);

struct RefineConfig {
  RefineMethod method = RefineMethod::gd;
  Direction direction = Direction::uplink;
  int T = 4;
  double step = 1e-2;  // alpha for gd, learning rate for adam/rmsprop
  double beta1 = 0.9;
  double beta2 = 0.999;
  double rho = 0.99;
  double eps = 1e-8;
  /// Gradients come from the gap-free rate (the training objective); the
  /// reported trajectory always uses the budget as given.
  bool gap_free_gradient = true;
  const ModelParams* model = nullptr;  // required for gru
};

struct RefineResult {
  TransformSet w;
  SignalingTrace trace;
  std::vector<double> rates;  // sum rate of W^(t), t = 0..T
  std::vector<Eigen::VectorXd> per_user;
};

RefineResult refine(const RefineConfig& cfg, const TransformSet& w0, std::span<const Eigen::MatrixXd> h,
                    const Clustering& clustering, const LinkBudget& budget);

struct GlobalGdResult {
  TransformSet w;
  std::vector<double> rates;  // t = 0..T, nondecreasing
};

/// Gradient ascent on the budget's sum rate with global CSI. Each iteration
/// starts from min(alpha, 2 * last accepted step) and halves the step until
/// the rate does not decrease (up to 40 halvings, after which W stays put).
GlobalGdResult design_global_gd(Direction direction, std::span<const Eigen::MatrixXd> h, const Clustering& clustering,
                                const LinkBudget& budget, int T, double alpha, const TransformSet& init);

/// Per-RRH fronthaul scalars: "local" = KN, "two-stage" = (2T+1)KN,
/// "global" = MN + KM.
long overhead(std::string_view method, int m, int n, int k, int t);

}  // namespace fhc
