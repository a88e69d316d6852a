#pragma once

// Clustered uplink/downlink rates with MMSE beamforming.
//
// Conventions: every channel and transformation lives in the real field, so
// Hermitian transposes are plain transposes. For user n with cluster Theta_n
// the stacked effective channel is Fbar_n (|Theta_n| K x N), built from the
// F_b = W_b H_b blocks in cluster order. Rates are log2(1 + SINR / gap).

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "fhc/autodiff.hpp"
#include "fhc/scenario.hpp"

namespace fhc {

struct TransformSet {
  std::vector<Eigen::MatrixXd> W;  // B matrices, K x M
  bool orthonormal = false;

  /// Orthonormalizes every block with qr_orthonormalize and sets the flag.
  static TransformSet from_raw(std::vector<Eigen::MatrixXd> raw);
  /// Wraps blocks that are already semi-orthogonal; verifies within 1e-8.
  static TransformSet from_orthonormal(std::vector<Eigen::MatrixXd> w);

  std::size_t size() const { return W.size(); }
  /// max_b || W_b W_b^T - I ||_inf (elementwise max).
  double orthogonality_error() const;
};

struct EffectiveChannel {
  std::vector<Eigen::MatrixXd> F;  // B matrices, K x N
};

EffectiveChannel effective_channel(const TransformSet& w, std::span<const Eigen::MatrixXd> h);

/// Per-user transmit powers (mW), noise power (mW) and linear SINR gap.
struct LinkBudget {
  Eigen::VectorXd power;
  double noise = 1.0;
  double sinr_gap = 1.0;
};

/// Uplink: p_n = p_ul for every user. Downlink: p_n = P_dl / N.
LinkBudget link_budget(const Scenario& scenario, Direction direction, bool apply_gap = true);

/// Diagonal quantization-noise covariances, one K-vector per RRH.
struct QuantNoise {
  std::vector<Eigen::VectorXd> D;
};

/// How the quantization term enters the SINR denominator. `quadratic` is the
/// noise power c^T D c (uplink) / f^T D f (downlink); `squared` squares that
/// quadratic form.
enum class QuantNoiseForm { quadratic, squared };

struct RateReport {
  Eigen::VectorXd per_user;
  double sum_rate = 0.0;
  bool quantized = false;
};

/// Rows of the F_b blocks for b in `cluster`, stacked in cluster order.
Eigen::MatrixXd stack_cluster(std::span<const Eigen::MatrixXd> blocks, std::span<const int> cluster);

/// c_n = (Fbar P Fbar^T + sigma^2 I)^{-1} f_{n,n}.
Eigen::VectorXd ul_receive_beamformer(const Eigen::MatrixXd& fbar, Eigen::Index n, const Eigen::VectorXd& power,
                                      double noise);

/// Unit-norm c_n proportional to (Fbar P Fbar^T + sigma^2 I)^{-1} f_{n,n}; with
/// equal powers P = (P_dl / N) I. Throws ZeroEffectiveChannel if f_{n,n} = 0.
Eigen::VectorXd dl_transmit_beamformer(const Eigen::MatrixXd& fbar, Eigen::Index n, const Eigen::VectorXd& power,
                                       double noise);

/// Uplink rate of user n; `design` supplies the effective CSI the CP used to
/// build the combiner (pass `actual` for perfect CSI).
double ul_user_rate(int n, const Clustering& clustering, const EffectiveChannel& actual,
                    const EffectiveChannel& design, const LinkBudget& budget, const QuantNoise* quant = nullptr,
                    QuantNoiseForm form = QuantNoiseForm::quadratic);

/// Uplink rate computed with the unsimplified combiner (F P F^T + sigma^2 W W^T)^{-1} f
/// and noise sigma^2 ||W^T c||^2. Valid for any full-row-rank W.
double ul_user_rate_general(int n, const Clustering& clustering, const TransformSet& w,
                            std::span<const Eigen::MatrixXd> h, const LinkBudget& budget);

/// Transmit beamformers for every user (zero vector for users with p_n = 0).
std::vector<Eigen::VectorXd> dl_beamformers(const Clustering& clustering, const EffectiveChannel& design,
                                            const LinkBudget& budget);

double dl_user_rate(int n, const Clustering& clustering, const EffectiveChannel& actual,
                    std::span<const Eigen::VectorXd> beamformers, const LinkBudget& budget,
                    const QuantNoise* quant = nullptr, QuantNoiseForm form = QuantNoiseForm::quadratic);

RateReport sum_rate(Direction direction, const Clustering& clustering, const EffectiveChannel& actual,
                    const EffectiveChannel& design, const LinkBudget& budget, const QuantNoise* quant = nullptr,
                    QuantNoiseForm form = QuantNoiseForm::quadratic);

inline RateReport sum_rate(Direction direction, const Clustering& clustering, const EffectiveChannel& f,
                           const LinkBudget& budget, const QuantNoise* quant = nullptr,
                           QuantNoiseForm form = QuantNoiseForm::quadratic) {
  return sum_rate(direction, clustering, f, f, budget, quant, form);
}

/// Convenience: rate of a transform set on channels H. Non-orthonormal uplink
/// sets are evaluated with the unsimplified combiner.
RateReport sum_rate(Direction direction, const Clustering& clustering, const TransformSet& w,
                    std::span<const Eigen::MatrixXd> h, const LinkBudget& budget);

struct RateGradient {
  double sum_rate = 0.0;               // gap-free, unquantized
  std::vector<Eigen::MatrixXd> grad;   // dR/dF_b, K x N each
};

/// Gap-free unquantized sum rate and its closed-form gradient wrt every F_b.
RateGradient rate_and_grad_F(Direction direction, const Clustering& clustering, const EffectiveChannel& f,
                             const LinkBudget& budget);

inline std::vector<Eigen::MatrixXd> grad_rate_wrt_F(Direction direction, const Clustering& clustering,
                                                    const EffectiveChannel& f, const LinkBudget& budget) {
  return rate_and_grad_F(direction, clustering, f, budget).grad;
}

/// dR/dW_b = dR/dF_b H_b^T, computed at the RRH from its local CSI.
Eigen::MatrixXd grad_rate_wrt_W(const Eigen::MatrixXd& grad_f, const Eigen::MatrixXd& h);

/// Non-cooperative benchmark: every user is served by its strongest RRH alone
/// with an uncompressed M-antenna MMSE beamformer from local CSI.
RateReport single_cell_rate(Direction direction, const Clustering& clustering, std::span<const Eigen::MatrixXd> h,
                            const LinkBudget& budget);

// ---- differentiable sum rate ------------------------------------------------

/// Sum rate (with budget.sinr_gap, no quantization) composed from tape
/// primitives, one F_b Var per RRH.
ad::Var sum_rate_graph(Direction direction, std::span<const ad::Var> f, const Clustering& clustering,
                       const LinkBudget& budget);

}  // namespace fhc
