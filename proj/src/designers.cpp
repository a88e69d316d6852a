#include "fhc/designers.hpp"

#include <cmath>

#include "fhc/error.hpp"
#include "fhc/numerics.hpp"

namespace fhc {

namespace {

void require_finite(const std::vector<Eigen::MatrixXd>& w) {
  for (const auto& m : w) {
    if (!m.allFinite()) throw Error(ErrorCode::NonFiniteUpdate, "update produced non-finite entries");
  }
}

std::vector<Eigen::MatrixXd> orthonormalize_all(const std::vector<Eigen::MatrixXd>& raw) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(raw.size());
  for (const auto& w : raw) out.push_back(qr_orthonormalize(w));
  return out;
}

}  // namespace

Eigen::MatrixXd design_evd(const Eigen::MatrixXd& h, int k) {
  if (k < 1 || k >= h.rows()) throw Error(ErrorCode::InvalidConfig, "need 1 <= K < M");
  return sym_eig_topk(Eigen::MatrixXd(h * h.transpose()), k).vectors;
}

Eigen::MatrixXd design_modified_evd(const Eigen::MatrixXd& h, int b, const Eigen::MatrixXd& beta, double p,
                                    double noise, int k) {
  if (k < 1 || k >= h.rows()) throw Error(ErrorCode::InvalidConfig, "need 1 <= K < M");
  if (beta.cols() != h.cols() || b < 0 || b >= beta.rows()) throw Error(ErrorCode::ShapeMismatch, "beta shape");
  const double m = static_cast<double>(h.rows());
  const Eigen::VectorXd others = beta.colwise().sum().transpose() - beta.row(b).transpose();
  const Eigen::VectorXd weight = (p * m * others.array() + noise).inverse();
  const Eigen::MatrixXd a = h * weight.asDiagonal() * h.transpose();
  // Symmetrize away rounding so the eigensolver's symmetry check passes.
  return sym_eig_topk(Eigen::MatrixXd(0.5 * (a + a.transpose())), k).vectors;
}

TransformSet design_evd_set(std::span<const Eigen::MatrixXd> h, int k) {
  std::vector<Eigen::MatrixXd> w;
  for (const auto& hb : h) w.push_back(design_evd(hb, k));
  TransformSet t;
  t.W = std::move(w);
  t.orthonormal = true;
  return t;
}

TransformSet design_modified_evd_set(std::span<const Eigen::MatrixXd> h, const Eigen::MatrixXd& beta, double p,
                                     double noise, int k) {
  TransformSet t;
  for (std::size_t b = 0; b < h.size(); ++b) {
    t.W.push_back(design_modified_evd(h[b], static_cast<int>(b), beta, p, noise, k));
  }
  t.orthonormal = true;
  return t;
}

TransformSet design_stage1_set(const ModelParams& params, std::span<const Eigen::MatrixXd> h) {
  TransformSet t;
  for (const auto& hb : h) t.W.push_back(stage1_forward(params, hb));
  t.orthonormal = true;
  return t;
}

std::vector<long> SignalingTrace::totals() const {
  std::vector<long> out;
  for (const auto& r : rounds) {
    const std::size_t b = std::max(r.uplink.size(), r.downlink.size());
    if (out.size() < b) out.resize(b, 0);
    for (std::size_t i = 0; i < r.uplink.size(); ++i) out[i] += r.uplink[i];
    for (std::size_t i = 0; i < r.downlink.size(); ++i) out[i] += r.downlink[i];
  }
  return out;
}

std::string_view to_string(RefineMethod m) noexcept {
  switch (m) {
    case RefineMethod::gd: return "gd";
    case RefineMethod::gru: return "gru";
    case RefineMethod::adam: return "adam";
    case RefineMethod::rmsprop: return "rmsprop";
  }
  return "gd";
}

RefineMethod parse_refine_method(std::string_view s) {
  if (s == "gd") return RefineMethod::gd;
  if (s == "gru") return RefineMethod::gru;
  if (s == "adam") return RefineMethod::adam;
  if (s == "rmsprop") return RefineMethod::rmsprop;
  throw Error(ErrorCode::UnknownMethod, "unknown refinement method '" + std::string(s) + "'");
}

RefineResult refine(const RefineConfig& cfg, const TransformSet& w0, std::span<const Eigen::MatrixXd> h,
                    const Clustering& clustering, const LinkBudget& budget) {
  if (cfg.T < 0) throw Error(ErrorCode::InvalidConfig, "T must be >= 0");
  if (!w0.orthonormal) throw Error(ErrorCode::InvalidConfig, "refinement needs a semi-orthogonal start");
  if (cfg.method == RefineMethod::gru && cfg.model == nullptr) {
    throw Error(ErrorCode::MissingCheckpoint, "gru refinement needs model parameters");
  }
  const auto b_count = h.size();
  const long kn = w0.W.front().rows() * h.front().cols();
  LinkBudget grad_budget = budget;
  if (cfg.gap_free_gradient) grad_budget.sinr_gap = 1.0;

  RefineResult out;
  out.w = w0;
  std::vector<Eigen::MatrixXd> m1(b_count), m2(b_count);
  std::vector<Eigen::VectorXd> hidden(b_count);
  for (std::size_t b = 0; b < b_count; ++b) {
    m1[b] = Eigen::MatrixXd::Zero(w0.W[b].rows(), w0.W[b].cols());
    m2[b] = m1[b];
    if (cfg.model) hidden[b] = Eigen::VectorXd::Zero(cfg.model->hidden_size());
  }

  EffectiveChannel f = effective_channel(out.w, h);
  auto record = [&] {
    RateReport rep = sum_rate(cfg.direction, clustering, f, budget);
    out.rates.push_back(rep.sum_rate);
    out.per_user.push_back(std::move(rep.per_user));
  };
  record();
  for (int t = 1; t <= cfg.T; ++t) {
    // Uplink F_b, downlink dR/dF_b, local recovery of dR/dW_b.
    out.trace.rounds.push_back({std::vector<long>(b_count, kn), std::vector<long>(b_count, kn)});
    const auto grad_f = grad_rate_wrt_F(cfg.direction, clustering, f, grad_budget);
    std::vector<Eigen::MatrixXd> next(b_count);
    for (std::size_t b = 0; b < b_count; ++b) {
      const Eigen::MatrixXd g = grad_rate_wrt_W(grad_f[b], h[b]);
      switch (cfg.method) {
        case RefineMethod::gd:
          next[b] = out.w.W[b] + cfg.step * g;
          break;
        case RefineMethod::gru: {
          GruStep s = gru_step(*cfg.model, hidden[b], g);
          hidden[b] = std::move(s.hidden);
          next[b] = out.w.W[b] + s.delta;
          break;
        }
        case RefineMethod::adam: {
          m1[b] = cfg.beta1 * m1[b] + (1.0 - cfg.beta1) * g;
          m2[b] = cfg.beta2 * m2[b] + (1.0 - cfg.beta2) * g.cwiseAbs2();
          const double c1 = 1.0 - std::pow(cfg.beta1, t);
          const double c2 = 1.0 - std::pow(cfg.beta2, t);
          next[b] = out.w.W[b] +
                    cfg.step * ((m1[b] / c1).array() / ((m2[b] / c2).array().sqrt() + cfg.eps)).matrix();
          break;
        }
        case RefineMethod::rmsprop:
          m2[b] = cfg.rho * m2[b] + (1.0 - cfg.rho) * g.cwiseAbs2();
          next[b] = out.w.W[b] + cfg.step * (g.array() / (m2[b].array().sqrt() + cfg.eps)).matrix();
          break;
      }
    }
    require_finite(next);
    out.w.W = orthonormalize_all(next);
    f = effective_channel(out.w, h);
    record();
  }
  // The CP needs the final effective channels to build its beamformers.
  out.trace.rounds.push_back({std::vector<long>(b_count, kn), std::vector<long>(b_count, 0)});
  return out;
}

GlobalGdResult design_global_gd(Direction direction, std::span<const Eigen::MatrixXd> h, const Clustering& clustering,
                                const LinkBudget& budget, int T, double alpha, const TransformSet& init) {
  if (T < 0 || !(alpha > 0.0)) throw Error(ErrorCode::InvalidConfig, "need T >= 0 and alpha > 0");
  GlobalGdResult out;
  out.w = init;
  if (!out.w.orthonormal) out.w = TransformSet::from_raw(init.W);
  RateGradient rg = rate_and_grad_F(direction, clustering, effective_channel(out.w, h), budget);
  out.rates.push_back(rg.sum_rate);
  double step = alpha;
  for (int t = 1; t <= T; ++t) {
    std::vector<Eigen::MatrixXd> g(h.size());
    for (std::size_t b = 0; b < h.size(); ++b) g[b] = grad_rate_wrt_W(rg.grad[b], h[b]);
    double trial = std::min(alpha, 2.0 * step);
    bool accepted = false;
    for (int halving = 0; halving <= 40 && !accepted; ++halving, trial /= 2.0) {
      std::vector<Eigen::MatrixXd> next(h.size());
      for (std::size_t b = 0; b < h.size(); ++b) next[b] = out.w.W[b] + trial * g[b];
      require_finite(next);
      TransformSet cand;
      cand.W = orthonormalize_all(next);
      cand.orthonormal = true;
      RateGradient cand_rg = rate_and_grad_F(direction, clustering, effective_channel(cand, h), budget);
      if (cand_rg.sum_rate >= rg.sum_rate) {
        out.w = std::move(cand);
        rg = std::move(cand_rg);
        step = trial;
        accepted = true;
      }
    }
    out.rates.push_back(rg.sum_rate);
  }
  return out;
}

long overhead(std::string_view method, int m, int n, int k, int t) {
  if (m < 1 || n < 1 || k < 1 || t < 0) throw Error(ErrorCode::InvalidConfig, "dimensions must be positive");
  const long kn = static_cast<long>(k) * n;
  if (method == "local") return kn;
  if (method == "two-stage") return (2L * t + 1) * kn;
  if (method == "global") return static_cast<long>(m) * n + static_cast<long>(k) * m;
  throw Error(ErrorCode::UnknownMethod, "unknown overhead class '" + std::string(method) + "'");
}

}  // namespace fhc
