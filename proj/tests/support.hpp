#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <random>

#include "fhc/scenario.hpp"

namespace fhc::test {

inline Eigen::MatrixXd randn(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-300});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Central differences of a scalar function of a matrix; step relative to the
/// largest entry.
template <typename Fn>
Eigen::MatrixXd fd_grad(Fn&& f, const Eigen::MatrixXd& x, double rel_step = 1e-6) {
  const double h = rel_step * std::max(x.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::MatrixXd g(x.rows(), x.cols());
  Eigen::MatrixXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = xp.data()[i];
    xp.data()[i] = v + h;
    const double fp = f(xp);
    xp.data()[i] = v - h;
    const double fm = f(xp);
    xp.data()[i] = v;
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline ChannelSet desk_set(int n, std::uint64_t seed) { return draw_channels(preset("desk-7cell"), n, seed); }

}  // namespace fhc::test
