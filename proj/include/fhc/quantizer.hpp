#pragma once

// Uniform scalar quantization of the K-dimensional fronthaul symbols.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fhc/phy.hpp"
#include "fhc/scenario.hpp"

namespace fhc {

/// `printed`: D = gamma^2 sigma^2 / (3 * 4^Q), the MSE of a symbol whose two
/// (I and Q) branches are each quantized with Q bits. `per_branch`: half of
/// that, the MSE of one real branch.
enum class DistortionConvention { printed, per_branch };

struct QuantizerSpec {
  int bits_per_link = 20;  // Q_b
  int dims = 2;            // K
  double gamma = 2.0;
  Eigen::VectorXd sigma;   // per-dimension standard deviations

  int bits_per_dim() const { return bits_per_link / dims; }
  /// Throws InvalidConfig.
  void validate() const;
};

/// d = gamma * sigma / sqrt(2).
double dynamic_range(double sigma, double gamma);

struct Quantized {
  double value = 0.0;
  bool overflow = false;
};

/// Clips to [-d, d] then maps to the cell midpoint Delta * ceil(v / Delta) - Delta / 2
/// with Delta = 2d / 2^Q. Exact zero lands on -Delta / 2.
Quantized quantize(double v, double d, int bits);

double distortion(double sigma, double gamma, int bits, DistortionConvention convention = DistortionConvention::printed);

/// Expected per-dimension standard deviation of every RRH's fronthaul symbol.
/// Uplink: sqrt([F_b P F_b^T + sigma^2 I]_kk). Downlink: sqrt(sum_{n in Phi_b} p_n c_{bn,k}^2).
std::vector<Eigen::VectorXd> signal_stddev(Direction direction, const Clustering& clustering,
                                           const EffectiveChannel& f, const LinkBudget& budget);

QuantNoise quantization_noise(std::span<const Eigen::VectorXd> sigma, double gamma, int bits_per_dim,
                              DistortionConvention convention = DistortionConvention::printed);

std::vector<double> default_gamma_grid();

/// Grid point maximizing `evaluate`; ties go to the smaller gamma.
double gamma_search(const std::function<double(double)>& evaluate, std::span<const double> grid);

struct MonteCarloReport {
  RateReport rates;
  Eigen::VectorXd half_width;  // 95% confidence half-width per user
  double overflow_fraction = 0.0;
};

/// Simulates the quantized fronthaul directly. Uplink draws that overflow a
/// dimension have that row erased before the per-draw MMSE combiner is built;
/// downlink overflow is clipped at the RRH. Rates come from the empirical
/// signal-to-residual ratio, split into 10 batches for the confidence bound.
MonteCarloReport monte_carlo_rate(Direction direction, const Clustering& clustering, const TransformSet& w,
                                  std::span<const Eigen::MatrixXd> h, const LinkBudget& budget, double gamma,
                                  int bits_per_dim, int n_draws, std::uint64_t seed);

}  // namespace fhc
