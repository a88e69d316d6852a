#include "fhc/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "fhc/error.hpp"

namespace fhc {

namespace {

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::NonpositiveInput, std::string(what) + " must be > 0");
}

// Position of RRH b inside cluster theta, as a row offset into the stacked vector.
Eigen::Index cluster_offset(std::span<const int> theta, int b, Eigen::Index k) {
  const auto it = std::find(theta.begin(), theta.end(), b);
  return it == theta.end() ? -1 : static_cast<Eigen::Index>(it - theta.begin()) * k;
}

struct BatchStats {
  std::vector<Eigen::VectorXd> err2;  // per batch, per user
  std::vector<Eigen::VectorXd> count;

  BatchStats(int batches, Eigen::Index users)
      : err2(batches, Eigen::VectorXd::Zero(users)), count(batches, Eigen::VectorXd::Zero(users)) {}

  MonteCarloReport finish(const LinkBudget& budget) const {
    const auto n_users = budget.power.size();
    const auto nb = static_cast<int>(err2.size());
    auto rate = [&](double e2, double cnt, Eigen::Index n) {
      if (cnt == 0.0 || budget.power(n) == 0.0) return 0.0;
      return std::log2(1.0 + budget.power(n) / (e2 / cnt) / budget.sinr_gap);
    };
    MonteCarloReport r;
    r.rates.per_user.resize(n_users);
    r.half_width.resize(n_users);
    r.rates.quantized = true;
    for (Eigen::Index n = 0; n < n_users; ++n) {
      double e2 = 0.0, cnt = 0.0, s = 0.0, s2 = 0.0;
      for (int i = 0; i < nb; ++i) {
        e2 += err2[i](n);
        cnt += count[i](n);
        const double ri = rate(err2[i](n), count[i](n), n);
        s += ri;
        s2 += ri * ri;
      }
      r.rates.per_user(n) = rate(e2, cnt, n);
      if (nb < 2) {
        r.half_width(n) = std::numeric_limits<double>::infinity();
      } else {
        const double var = std::max(0.0, (s2 - s * s / nb) / (nb - 1));
        r.half_width(n) = 1.96 * std::sqrt(var / nb);
      }
    }
    r.rates.sum_rate = r.rates.per_user.sum();
    return r;
  }
};

}  // namespace

void QuantizerSpec::validate() const {
  if (dims < 1 || bits_per_link < 1 || bits_per_link % dims != 0) {
    throw Error(ErrorCode::InvalidConfig, "bits per link must be a positive multiple of K");
  }
  if (bits_per_dim() < 1) throw Error(ErrorCode::InvalidConfig, "need at least one bit per dimension");
  if (!(gamma > 0.0)) throw Error(ErrorCode::InvalidConfig, "gamma must be > 0");
  if (sigma.size() != dims || (sigma.array() <= 0.0).any()) {
    throw Error(ErrorCode::InvalidConfig, "need K positive standard deviations");
  }
}

double dynamic_range(double sigma, double gamma) {
  require_positive(sigma, "sigma");
  require_positive(gamma, "gamma");
  return gamma * sigma / std::sqrt(2.0);
}

Quantized quantize(double v, double d, int bits) {
  if (bits < 1) throw Error(ErrorCode::InvalidConfig, "need at least one bit");
  if (d == 0.0) return {0.0, v != 0.0};
  Quantized q;
  q.overflow = std::abs(v) > d;
  const double clipped = std::clamp(v, -d, d);
  const double levels = std::ldexp(1.0, bits);
  const double step = 2.0 * d / levels;
  // Index in [-2^Q/2 + 1, 2^Q/2]; the clamp keeps v = -d on the bottom cell.
  const double j = std::clamp(std::ceil(clipped / step), -levels / 2.0 + 1.0, levels / 2.0);
  q.value = step * j - step / 2.0;
  return q;
}

double distortion(double sigma, double gamma, int bits, DistortionConvention convention) {
  require_positive(sigma, "sigma");
  require_positive(gamma, "gamma");
  if (bits < 1) throw Error(ErrorCode::NonpositiveInput, "bits must be >= 1");
  const double d = gamma * gamma * sigma * sigma / (3.0 * std::ldexp(1.0, 2 * bits));
  return convention == DistortionConvention::printed ? d : d / 2.0;
}

std::vector<Eigen::VectorXd> signal_stddev(Direction direction, const Clustering& clustering,
                                           const EffectiveChannel& f, const LinkBudget& budget) {
  const auto n_users = static_cast<Eigen::Index>(clustering.theta.size());
  if (budget.power.size() != n_users) throw Error(ErrorCode::ShapeMismatch, "one power per user");
  std::vector<Eigen::VectorXd> out;
  out.reserve(f.F.size());
  if (direction == Direction::uplink) {
    for (const auto& fb : f.F) {
      if (fb.cols() != n_users) throw Error(ErrorCode::ShapeMismatch, "F_b must have N columns");
      Eigen::VectorXd var = (fb.array().square().rowwise() * budget.power.transpose().array()).rowwise().sum();
      out.push_back((var.array() + budget.noise).sqrt());
    }
    return out;
  }
  const auto beams = dl_beamformers(clustering, f, budget);
  for (std::size_t b = 0; b < f.F.size(); ++b) {
    const auto k = f.F[b].rows();
    Eigen::VectorXd var = Eigen::VectorXd::Zero(k);
    for (int n : clustering.phi[b]) {
      const auto off = cluster_offset(clustering.theta[n], static_cast<int>(b), k);
      if (off < 0) throw Error(ErrorCode::ShapeMismatch, "phi and theta disagree");
      var += budget.power(n) * beams[n].segment(off, k).cwiseAbs2();
    }
    out.push_back(var.cwiseSqrt());
  }
  return out;
}

QuantNoise quantization_noise(std::span<const Eigen::VectorXd> sigma, double gamma, int bits_per_dim,
                              DistortionConvention convention) {
  QuantNoise q;
  q.D.reserve(sigma.size());
  for (const auto& s : sigma) {
    Eigen::VectorXd d(s.size());
    for (Eigen::Index k = 0; k < s.size(); ++k) {
      // An idle dimension carries nothing and adds no distortion.
      d(k) = s(k) == 0.0 ? 0.0 : distortion(s(k), gamma, bits_per_dim, convention);
    }
    q.D.push_back(std::move(d));
  }
  return q;
}

std::vector<double> default_gamma_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 8; ++i) g.push_back(0.5 * i);
  return g;
}

double gamma_search(const std::function<double(double)>& evaluate, std::span<const double> grid) {
  if (grid.empty()) throw Error(ErrorCode::EmptyGrid, "gamma grid is empty");
  double best_gamma = grid.front();
  double best = evaluate(best_gamma);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double v = evaluate(grid[i]);
    if (v > best || (v == best && grid[i] < best_gamma)) {
      best = v;
      best_gamma = grid[i];
    }
  }
  return best_gamma;
}

MonteCarloReport monte_carlo_rate(Direction direction, const Clustering& clustering, const TransformSet& w,
                                  std::span<const Eigen::MatrixXd> h, const LinkBudget& budget, double gamma,
                                  int bits_per_dim, int n_draws, std::uint64_t seed) {
  if (n_draws < 1) throw Error(ErrorCode::InvalidConfig, "n_draws must be >= 1");
  const EffectiveChannel f = effective_channel(w, h);
  const auto sigma = signal_stddev(direction, clustering, f, budget);
  const auto n_users = static_cast<Eigen::Index>(clustering.theta.size());
  const auto b_count = static_cast<int>(f.F.size());
  const auto k = f.F.front().rows();
  const auto m = h.front().rows();
  std::vector<Eigen::VectorXd> d(b_count);
  for (int b = 0; b < b_count; ++b) {
    d[b] = sigma[b].unaryExpr([&](double s) { return s == 0.0 ? 0.0 : dynamic_range(s, gamma); });
  }
  const int batches = std::min(10, n_draws);
  BatchStats stats(batches, n_users);
  std::mt19937_64 rng(derive_seed(seed, 0, 3));
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::VectorXd amp = budget.power.cwiseSqrt();
  const double noise_sd = std::sqrt(budget.noise);
  long overflow = 0;
  long total = 0;

  auto quantize_block = [&](const Eigen::VectorXd& v, int b, std::vector<bool>& over) {
    Eigen::VectorXd out(v.size());
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      const auto q = quantize(v(j), d[b](j), bits_per_dim);
      out(j) = q.value;
      over[b * k + j] = q.overflow;
      overflow += q.overflow;
      ++total;
    }
    return out;
  };

  std::vector<bool> over(static_cast<std::size_t>(b_count * k));
  std::vector<Eigen::VectorXd> yq(b_count);
  if (direction == Direction::uplink) {
    std::vector<Eigen::MatrixXd> fbar(n_users);
    for (Eigen::Index n = 0; n < n_users; ++n) fbar[n] = stack_cluster(f.F, clustering.theta[n]);
    // Combiners are cached per erasure pattern; most draws share the empty one.
    std::vector<std::map<std::vector<bool>, Eigen::VectorXd>> cache(n_users);
    for (int draw = 0; draw < n_draws; ++draw) {
      Eigen::VectorXd x(n_users);
      for (Eigen::Index n = 0; n < n_users; ++n) x(n) = amp(n) * normal(rng);
      for (int b = 0; b < b_count; ++b) {
        Eigen::VectorXd noise(m);
        for (Eigen::Index j = 0; j < m; ++j) noise(j) = noise_sd * normal(rng);
        yq[b] = quantize_block(w.W[b] * (h[b] * x + noise), b, over);
      }
      const int batch = draw % batches;
      for (Eigen::Index n = 0; n < n_users; ++n) {
        if (budget.power(n) == 0.0) continue;
        const auto& theta = clustering.theta[n];
        std::vector<bool> keep;
        std::vector<Eigen::Index> rows;
        for (std::size_t j = 0; j < theta.size(); ++j) {
          for (Eigen::Index r = 0; r < k; ++r) {
            const bool ok = !over[theta[j] * k + r];
            keep.push_back(ok);
            if (ok) rows.push_back(static_cast<Eigen::Index>(j) * k + r);
          }
        }
        double err = x(n);
        if (!rows.empty()) {
          Eigen::MatrixXd fr(static_cast<Eigen::Index>(rows.size()), n_users);
          for (std::size_t r = 0; r < rows.size(); ++r) fr.row(r) = fbar[n].row(rows[r]);
          auto it = cache[n].find(keep);
          if (it == cache[n].end()) {
            Eigen::VectorXd c = ul_receive_beamformer(fr, n, budget.power, budget.noise);
            const double gain = c.dot(fr.col(n));
            it = cache[n].emplace(keep, gain > 0.0 ? Eigen::VectorXd(c / gain) : Eigen::VectorXd()).first;
          }
          if (it->second.size() > 0) {
            double est = 0.0;
            for (std::size_t r = 0; r < rows.size(); ++r) {
              const auto j = rows[r] / k;
              est += it->second(r) * yq[theta[j]](rows[r] % k);
            }
            err = est - x(n);
          }
        }
        stats.err2[batch](n) += err * err;
        stats.count[batch](n) += 1.0;
      }
    }
  } else {
    const auto beams = dl_beamformers(clustering, f, budget);
    Eigen::VectorXd gain(n_users);
    for (Eigen::Index n = 0; n < n_users; ++n) gain(n) = beams[n].dot(stack_cluster(f.F, clustering.theta[n]).col(n));
    for (int draw = 0; draw < n_draws; ++draw) {
      Eigen::VectorXd s(n_users);
      for (Eigen::Index n = 0; n < n_users; ++n) s(n) = amp(n) * normal(rng);
      for (int b = 0; b < b_count; ++b) {
        Eigen::VectorXd xb = Eigen::VectorXd::Zero(k);
        for (int n : clustering.phi[b]) xb += beams[n].segment(cluster_offset(clustering.theta[n], b, k), k) * s(n);
        yq[b] = quantize_block(xb, b, over);
      }
      const int batch = draw % batches;
      for (Eigen::Index n = 0; n < n_users; ++n) {
        if (budget.power(n) == 0.0) continue;
        double y = noise_sd * normal(rng);
        for (int b = 0; b < b_count; ++b) y += f.F[b].col(n).dot(yq[b]);
        const double err = gain(n) != 0.0 ? y / gain(n) - s(n) : s(n);
        stats.err2[batch](n) += err * err;
        stats.count[batch](n) += 1.0;
      }
    }
  }
  MonteCarloReport r = stats.finish(budget);
  r.overflow_fraction = total ? static_cast<double>(overflow) / static_cast<double>(total) : 0.0;
  return r;
}

}  // namespace fhc
