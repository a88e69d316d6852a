#include "fhc/phy.hpp"

#include <cmath>
#include <numbers>

#include "fhc/error.hpp"
#include "fhc/numerics.hpp"

namespace fhc {

namespace {

constexpr double kLn2 = std::numbers::ln2;

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

Eigen::MatrixXd gram(const Eigen::MatrixXd& fbar, const Eigen::VectorXd& power, double noise) {
  Eigen::MatrixXd a = fbar * power.asDiagonal() * fbar.transpose();
  a.diagonal().array() += noise;
  return a;
}

Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "covariance is not positive definite");
  return llt;
}

double log2_1p(double sinr, double gap) { return std::log2(1.0 + sinr / gap); }

// Rows of a stacked cluster matrix scattered back onto the per-RRH blocks.
void scatter_add(std::vector<Eigen::MatrixXd>& blocks, std::span<const int> cluster, const Eigen::MatrixXd& g) {
  Eigen::Index row = 0;
  for (int b : cluster) {
    const auto k = blocks[b].rows();
    blocks[b] += g.middleRows(row, k);
    row += k;
  }
}

Eigen::VectorXd stack_quant(const QuantNoise& q, std::span<const int> cluster) {
  Eigen::Index total = 0;
  for (int b : cluster) total += q.D[b].size();
  Eigen::VectorXd d(total);
  Eigen::Index row = 0;
  for (int b : cluster) {
    d.segment(row, q.D[b].size()) = q.D[b];
    row += q.D[b].size();
  }
  return d;
}

double quant_term(double quadratic, QuantNoiseForm form) {
  return form == QuantNoiseForm::squared ? quadratic * quadratic : quadratic;
}

}  // namespace

TransformSet TransformSet::from_raw(std::vector<Eigen::MatrixXd> raw) {
  TransformSet t;
  t.W.reserve(raw.size());
  for (const auto& w : raw) t.W.push_back(qr_orthonormalize(w));
  t.orthonormal = true;
  return t;
}

TransformSet TransformSet::from_orthonormal(std::vector<Eigen::MatrixXd> w) {
  TransformSet t;
  t.W = std::move(w);
  t.orthonormal = true;
  if (t.orthogonality_error() > 1e-8) throw Error(ErrorCode::InvalidConfig, "transform set is not semi-orthogonal");
  return t;
}

double TransformSet::orthogonality_error() const {
  double err = 0.0;
  for (const auto& w : W) {
    const Eigen::MatrixXd e = w * w.transpose() - Eigen::MatrixXd::Identity(w.rows(), w.rows());
    err = std::max(err, e.cwiseAbs().maxCoeff());
  }
  return err;
}

EffectiveChannel effective_channel(const TransformSet& w, std::span<const Eigen::MatrixXd> h) {
  require(w.W.size() == h.size(), "one transform per RRH");
  EffectiveChannel f;
  f.F.reserve(h.size());
  for (std::size_t b = 0; b < h.size(); ++b) {
    require(w.W[b].cols() == h[b].rows(), "W_b columns must match antennas");
    f.F.push_back(w.W[b] * h[b]);
  }
  return f;
}

LinkBudget link_budget(const Scenario& scenario, Direction direction, bool apply_gap) {
  LinkBudget lb;
  const int n = scenario.num_users();
  const double p = direction == Direction::uplink ? scenario.p_ul_mw() : scenario.p_dl_mw() / n;
  lb.power = Eigen::VectorXd::Constant(n, p);
  lb.noise = scenario.noise_mw();
  lb.sinr_gap = apply_gap ? scenario.sinr_gap() : 1.0;
  return lb;
}

Eigen::MatrixXd stack_cluster(std::span<const Eigen::MatrixXd> blocks, std::span<const int> cluster) {
  Eigen::Index rows = 0;
  for (int b : cluster) rows += blocks[b].rows();
  Eigen::MatrixXd out(rows, blocks[cluster.front()].cols());
  Eigen::Index row = 0;
  for (int b : cluster) {
    out.middleRows(row, blocks[b].rows()) = blocks[b];
    row += blocks[b].rows();
  }
  return out;
}

Eigen::VectorXd ul_receive_beamformer(const Eigen::MatrixXd& fbar, Eigen::Index n, const Eigen::VectorXd& power,
                                      double noise) {
  require(power.size() == fbar.cols(), "one power per user");
  return factor(gram(fbar, power, noise)).solve(fbar.col(n));
}

Eigen::VectorXd dl_transmit_beamformer(const Eigen::MatrixXd& fbar, Eigen::Index n, const Eigen::VectorXd& power,
                                       double noise) {
  require(power.size() == fbar.cols(), "one power per user");
  if (fbar.col(n).squaredNorm() == 0.0) throw Error(ErrorCode::ZeroEffectiveChannel, "f_{n,n} is zero");
  const Eigen::VectorXd u = factor(gram(fbar, power, noise)).solve(fbar.col(n));
  return u / u.norm();
}

double ul_user_rate(int n, const Clustering& clustering, const EffectiveChannel& actual,
                    const EffectiveChannel& design, const LinkBudget& budget, const QuantNoise* quant,
                    QuantNoiseForm form) {
  const auto& theta = clustering.theta[n];
  const double pn = budget.power(n);
  if (pn == 0.0) return 0.0;
  const Eigen::MatrixXd fa = stack_cluster(actual.F, theta);
  const Eigen::VectorXd c = ul_receive_beamformer(stack_cluster(design.F, theta), n, budget.power, budget.noise);
  const Eigen::VectorXd v = fa.transpose() * c;
  const double signal = pn * v(n) * v(n);
  double den = (budget.power.array() * v.array().square()).sum() - signal + budget.noise * c.squaredNorm();
  if (quant) den += quant_term(c.dot(stack_quant(*quant, theta).cwiseProduct(c)), form);
  if (!(den > 0.0)) return 0.0;
  return log2_1p(signal / den, budget.sinr_gap);
}

double ul_user_rate_general(int n, const Clustering& clustering, const TransformSet& w,
                            std::span<const Eigen::MatrixXd> h, const LinkBudget& budget) {
  const auto& theta = clustering.theta[n];
  const double pn = budget.power(n);
  if (pn == 0.0) return 0.0;
  const auto k = w.W[theta.front()].rows();
  const auto ck = static_cast<Eigen::Index>(theta.size()) * k;
  Eigen::MatrixXd fbar(ck, h[theta.front()].cols());
  Eigen::MatrixXd wwt = Eigen::MatrixXd::Zero(ck, ck);
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const auto& wb = w.W[theta[j]];
    fbar.middleRows(j * k, k) = wb * h[theta[j]];
    wwt.block(j * k, j * k, k, k) = wb * wb.transpose();
  }
  Eigen::MatrixXd a = fbar * budget.power.asDiagonal() * fbar.transpose() + budget.noise * wwt;
  const Eigen::VectorXd c = factor(a).solve(fbar.col(n));
  const Eigen::VectorXd v = fbar.transpose() * c;
  const double signal = pn * v(n) * v(n);
  const double den = (budget.power.array() * v.array().square()).sum() - signal + budget.noise * c.dot(wwt * c);
  if (!(den > 0.0)) return 0.0;
  return log2_1p(signal / den, budget.sinr_gap);
}

std::vector<Eigen::VectorXd> dl_beamformers(const Clustering& clustering, const EffectiveChannel& design,
                                            const LinkBudget& budget) {
  std::vector<Eigen::VectorXd> out(clustering.theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Eigen::MatrixXd fbar = stack_cluster(design.F, clustering.theta[i]);
    if (budget.power(i) == 0.0 || fbar.col(i).squaredNorm() == 0.0) {
      out[i] = Eigen::VectorXd::Zero(fbar.rows());
    } else {
      out[i] = dl_transmit_beamformer(fbar, static_cast<Eigen::Index>(i), budget.power, budget.noise);
    }
  }
  return out;
}

double dl_user_rate(int n, const Clustering& clustering, const EffectiveChannel& actual,
                    std::span<const Eigen::VectorXd> beamformers, const LinkBudget& budget, const QuantNoise* quant,
                    QuantNoiseForm form) {
  const double pn = budget.power(n);
  if (pn == 0.0) return 0.0;
  double signal = 0.0;
  double den = budget.noise;
  for (std::size_t i = 0; i < beamformers.size(); ++i) {
    if (budget.power(i) == 0.0) continue;
    const auto& theta = clustering.theta[i];
    double s = 0.0;
    Eigen::Index row = 0;
    for (int b : theta) {
      const auto k = actual.F[b].rows();
      s += beamformers[i].segment(row, k).dot(actual.F[b].col(n));
      row += k;
    }
    if (static_cast<int>(i) == n) {
      signal = pn * s * s;
    } else {
      den += budget.power(i) * s * s;
    }
  }
  if (quant) {
    double q = 0.0;
    for (std::size_t b = 0; b < actual.F.size(); ++b) {
      q += quant->D[b].dot(actual.F[b].col(n).cwiseAbs2());
    }
    den += quant_term(q, form);
  }
  return log2_1p(signal / den, budget.sinr_gap);
}

RateReport sum_rate(Direction direction, const Clustering& clustering, const EffectiveChannel& actual,
                    const EffectiveChannel& design, const LinkBudget& budget, const QuantNoise* quant,
                    QuantNoiseForm form) {
  const auto n_users = static_cast<int>(clustering.theta.size());
  require(budget.power.size() == n_users, "one power per user");
  RateReport r;
  r.per_user.resize(n_users);
  r.quantized = quant != nullptr;
  if (direction == Direction::uplink) {
    for (int n = 0; n < n_users; ++n) r.per_user(n) = ul_user_rate(n, clustering, actual, design, budget, quant, form);
  } else {
    const auto beams = dl_beamformers(clustering, design, budget);
    for (int n = 0; n < n_users; ++n) r.per_user(n) = dl_user_rate(n, clustering, actual, beams, budget, quant, form);
  }
  r.sum_rate = r.per_user.sum();
  return r;
}

RateReport sum_rate(Direction direction, const Clustering& clustering, const TransformSet& w,
                    std::span<const Eigen::MatrixXd> h, const LinkBudget& budget) {
  if (w.orthonormal) return sum_rate(direction, clustering, effective_channel(w, h), budget);
  if (direction == Direction::downlink) {
    throw Error(ErrorCode::InvalidConfig, "downlink rates need a semi-orthogonal transform set");
  }
  RateReport r;
  r.per_user.resize(static_cast<Eigen::Index>(clustering.theta.size()));
  for (Eigen::Index n = 0; n < r.per_user.size(); ++n) {
    r.per_user(n) = ul_user_rate_general(static_cast<int>(n), clustering, w, h, budget);
  }
  r.sum_rate = r.per_user.sum();
  return r;
}

RateGradient rate_and_grad_F(Direction direction, const Clustering& clustering, const EffectiveChannel& f,
                             const LinkBudget& budget) {
  const auto n_users = static_cast<Eigen::Index>(clustering.theta.size());
  const double gap = budget.sinr_gap;
  RateGradient out;
  out.grad.reserve(f.F.size());
  for (const auto& fb : f.F) out.grad.push_back(Eigen::MatrixXd::Zero(fb.rows(), fb.cols()));

  if (direction == Direction::uplink) {
    for (Eigen::Index n = 0; n < n_users; ++n) {
      const double pn = budget.power(n);
      if (pn == 0.0) continue;
      const auto& theta = clustering.theta[n];
      const Eigen::MatrixXd fbar = stack_cluster(f.F, theta);
      Eigen::VectorXd p_minus = budget.power;
      p_minus(n) = 0.0;
      // SINR = p_n f^T B^{-1} f with B the interference-plus-noise covariance.
      const Eigen::VectorXd x = factor(gram(fbar, p_minus, budget.noise)).solve(fbar.col(n));
      const double sinr = pn * fbar.col(n).dot(x);
      out.sum_rate += log2_1p(sinr, gap);
      const double w = 2.0 * pn / (kLn2 * (gap + sinr));
      Eigen::MatrixXd g = -w * x * ((x.transpose() * fbar) * p_minus.asDiagonal());
      g.col(n) += w * x;
      scatter_add(out.grad, theta, g);
    }
    return out;
  }

  // Downlink: unit-norm MMSE beams c_i = u_i / |u_i| with u_i = A_i^{-1} f_{i,i}.
  std::vector<Eigen::MatrixXd> fbar(n_users);
  std::vector<Eigen::VectorXd> u(n_users), c(n_users);
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llt;
  llt.reserve(n_users);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n_users, n_users);  // s(i, n) = c_i^T Fbar_i e_n
  for (Eigen::Index i = 0; i < n_users; ++i) {
    fbar[i] = stack_cluster(f.F, clustering.theta[i]);
    llt.push_back(factor(gram(fbar[i], budget.power, budget.noise)));
    if (budget.power(i) == 0.0 || fbar[i].col(i).squaredNorm() == 0.0) continue;
    u[i] = llt[i].solve(fbar[i].col(i));
    c[i] = u[i] / u[i].norm();
    s.row(i) = c[i].transpose() * fbar[i];
  }
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n_users, n_users);  // dR/ds(i, n)
  for (Eigen::Index n = 0; n < n_users; ++n) {
    const double pn = budget.power(n);
    if (pn == 0.0) continue;
    double interf = budget.noise;
    for (Eigen::Index i = 0; i < n_users; ++i) {
      if (i != n) interf += budget.power(i) * s(i, n) * s(i, n);
    }
    const double sig = pn * s(n, n) * s(n, n);
    out.sum_rate += std::log2(1.0 + sig / (gap * interf));
    const double tot = gap * interf + sig;
    adj(n, n) += 2.0 * pn * s(n, n) / (kLn2 * tot);
    for (Eigen::Index i = 0; i < n_users; ++i) {
      if (i != n) adj(i, n) += 2.0 * budget.power(i) * s(i, n) * (gap / tot - 1.0 / interf) / kLn2;
    }
  }
  for (Eigen::Index i = 0; i < n_users; ++i) {
    if (c[i].size() == 0) continue;
    const Eigen::VectorXd a = adj.row(i).transpose();
    Eigen::MatrixXd g = c[i] * a.transpose();
    const Eigen::VectorXd dc = fbar[i] * a;
    const Eigen::VectorXd du = (dc - c[i] * c[i].dot(dc)) / u[i].norm();
    const Eigen::VectorXd lambda = llt[i].solve(du);
    const Eigen::MatrixXd ga = -lambda * u[i].transpose();
    g += (ga + ga.transpose()) * fbar[i] * budget.power.asDiagonal();
    g.col(i) += lambda;
    scatter_add(out.grad, clustering.theta[i], g);
  }
  return out;
}

Eigen::MatrixXd grad_rate_wrt_W(const Eigen::MatrixXd& grad_f, const Eigen::MatrixXd& h) {
  require(grad_f.cols() == h.cols(), "dR/dF and H must share the user dimension");
  return grad_f * h.transpose();
}

RateReport single_cell_rate(Direction direction, const Clustering& clustering, std::span<const Eigen::MatrixXd> h,
                            const LinkBudget& budget) {
  // Each RRH acts as an isolated M-antenna base station on its full local CSI.
  const auto n_users = static_cast<Eigen::Index>(clustering.theta.size());
  EffectiveChannel local;
  local.F.assign(h.begin(), h.end());
  Clustering own;
  own.theta.resize(n_users);
  own.phi.resize(h.size());
  for (Eigen::Index n = 0; n < n_users; ++n) {
    const int b = clustering.theta[n].front();
    own.theta[n] = {b};
    own.phi[b].push_back(static_cast<int>(n));
  }
  return sum_rate(direction, own, local, budget);
}

// ---- differentiable sum rate ------------------------------------------------

ad::Var sum_rate_graph(Direction direction, std::span<const ad::Var> f, const Clustering& clustering,
                       const LinkBudget& budget) {
  require(!f.empty(), "need at least one RRH");
  ad::Tape& tape = f.front().tape();
  const auto n_users = static_cast<Eigen::Index>(clustering.theta.size());
  const double gap = budget.sinr_gap;
  auto stacked = [&](Eigen::Index n) {
    std::vector<ad::Var> parts;
    for (int b : clustering.theta[n]) parts.push_back(f[b]);
    return ad::vstack(parts);
  };
  auto covariance = [&](ad::Var fbar, const Eigen::VectorXd& power) {
    const Eigen::MatrixXd eye = budget.noise * Eigen::MatrixXd::Identity(fbar.rows(), fbar.rows());
    ad::Var pd = tape.constant(power.asDiagonal().toDenseMatrix());
    return ad::add(ad::matmul(ad::matmul(fbar, pd), ad::transpose(fbar)), tape.constant(eye));
  };

  std::vector<ad::Var> terms;
  if (direction == Direction::uplink) {
    for (Eigen::Index n = 0; n < n_users; ++n) {
      const double pn = budget.power(n);
      if (pn == 0.0) continue;
      ad::Var fbar = stacked(n);
      Eigen::VectorXd p_minus = budget.power;
      p_minus(n) = 0.0;
      ad::Var fn = ad::cols(fbar, n, 1);
      ad::Var x = ad::solve_psd(covariance(fbar, p_minus), fn);
      ad::Var sinr = ad::matmul(ad::transpose(fn), x);
      terms.push_back(ad::scale(ad::log(ad::add_scalar(ad::scale(sinr, pn / gap), 1.0)), 1.0 / kLn2));
    }
  } else {
    // Works with squared projections (u^T f)^2 / |u|^2 so no square root is needed.
    std::vector<ad::Var> s2(n_users);
    std::vector<bool> active(n_users, false);
    for (Eigen::Index i = 0; i < n_users; ++i) {
      if (budget.power(i) == 0.0) continue;
      ad::Var fbar = stacked(i);
      ad::Var u = ad::solve_psd(covariance(fbar, budget.power), ad::cols(fbar, i, 1));
      ad::Var t = ad::matmul(ad::transpose(u), fbar);
      ad::Var norm2 = ad::squared_norm(u);
      ad::Var ones = tape.constant(Eigen::MatrixXd::Ones(1, n_users));
      s2[i] = ad::cdiv(ad::hadamard(t, t), ad::matmul(norm2, ones));
      active[i] = true;
    }
    for (Eigen::Index n = 0; n < n_users; ++n) {
      if (!active[n]) continue;
      ad::Var interf = tape.constant(Eigen::MatrixXd::Constant(1, 1, budget.noise));
      for (Eigen::Index i = 0; i < n_users; ++i) {
        if (i != n && active[i]) interf = ad::add(interf, ad::scale(ad::cols(s2[i], n, 1), budget.power(i)));
      }
      ad::Var sig = ad::scale(ad::cols(s2[n], n, 1), budget.power(n));
      ad::Var scaled = ad::scale(interf, gap);
      terms.push_back(ad::scale(ad::sub(ad::log(ad::add(scaled, sig)), ad::log(scaled)), 1.0 / kLn2));
    }
  }
  ad::Var total = tape.constant(Eigen::MatrixXd::Zero(1, 1));
  for (const auto& t : terms) total = ad::add(total, t);
  return total;
}

}  // namespace fhc
