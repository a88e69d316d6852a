#include "fhc/autodiff.hpp"

#include <cmath>
#include <string>

#include "fhc/error.hpp"
#include "fhc/numerics.hpp"

namespace fhc::ad {

const Mat& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Mat value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (&p.tape() != this) {
      throw Error(ErrorCode::ShapeMismatch, "operands recorded on different tapes");
    }
    needs = needs || nodes_[p.id()].requires_grad;
  }
  if (!backward && needs) {
    // Forward-only primitive on a differentiable path: fail at backward time.
    backward = [](Tape&, const Mat&) {
      throw Error(ErrorCode::UnsupportedPrimitive, "no backward rule registered");
    };
  }
  nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Mat& g) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return;
  if (g.rows() != node.value.rows() || g.cols() != node.value.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient shape differs from value shape");
  }
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::backward(Var out) {
  if (out.rows() != 1 || out.cols() != 1) {
    throw Error(ErrorCode::NonScalarOutput, "backward needs a 1x1 output");
  }
  for (Node& n : nodes_) n.grad.resize(0, 0);
  visits_ = 0;
  nodes_[out.id()].grad = Mat::Ones(1, 1);
  for (std::size_t i = out.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.size() == 0) continue;
    ++visits_;
    // The closure may append to other nodes' grads but never to its own.
    const Mat g = node.grad;
    node.backward(*this, g);
  }
}

Mat Tape::grad(Var v) const {
  const Node& node = nodes_[v.id()];
  if (node.grad.size() == 0) return Mat::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::clear() {
  nodes_.clear();
  visits_ = 0;
}

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "matmul inner dimensions");
  Mat out = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(Var a) {
  return a.tape().record(a.value().transpose(), {a},
                         [a](Tape& t, const Mat& g) { t.accumulate(a, g.transpose()); });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a, b, "hadamard");
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var cdiv(Var a, Var b) {
  require_same_shape(a, b, "cdiv");
  Mat out = a.value().cwiseQuotient(b.value());
  return a.tape().record(out, {a, b}, [a, b, out](Tape& t, const Mat& g) {
    if (a.requires_grad()) t.accumulate(a, g.cwiseQuotient(b.value()));
    if (b.requires_grad()) t.accumulate(b, -g.cwiseProduct(out).cwiseQuotient(b.value()));
  });
}

Var scale(Var a, double s) {
  return a.tape().record(a.value() * s, {a}, [a, s](Tape& t, const Mat& g) { t.accumulate(a, g * s); });
}

Var add_scalar(Var a, double s) {
  return a.tape().record(a.value().array() + s, {a}, [a](Tape& t, const Mat& g) { t.accumulate(a, g); });
}

Var add_bias(Var a, Var bias) {
  if (bias.cols() != 1 || bias.rows() != a.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "add_bias needs a column vector matching rows");
  }
  Mat out = a.value().colwise() + bias.value().col(0);
  return a.tape().record(std::move(out), {a, bias}, [a, bias](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    if (bias.requires_grad()) t.accumulate(bias, g.rowwise().sum());
  });
}

Var tanh(Var a) {
  Mat out = a.value().array().tanh();
  return a.tape().record(out, {a}, [a, out](Tape& t, const Mat& g) {
    t.accumulate(a, (g.array() * (1.0 - out.array().square())).matrix());
  });
}

Var sigmoid(Var a) {
  Mat out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return a.tape().record(out, {a}, [a, out](Tape& t, const Mat& g) {
    t.accumulate(a, (g.array() * out.array() * (1.0 - out.array())).matrix());
  });
}

Var log(Var a) {
  return a.tape().record(a.value().array().log().matrix(), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

Var sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a, Mat::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var squared_norm(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a, 2.0 * g(0, 0) * a.value());
  });
}

Var solve_psd(Var a, Var b) {
  if (a.rows() != a.cols() || a.rows() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "solve_psd shape mismatch");
  }
  Eigen::LLT<Mat> llt(a.value());
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPositiveDefinite, "Cholesky pivot <= 0");
  Mat x = llt.solve(b.value());
  return a.tape().record(x, {a, b}, [a, b, x, llt](Tape& t, const Mat& g) {
    // A symmetric: dB = A^{-1} g, dA = -dB X^T.
    Mat gb = llt.solve(g);
    if (b.requires_grad()) t.accumulate(b, gb);
    if (a.requires_grad()) t.accumulate(a, -gb * x.transpose());
  });
}

Mat thin_qr_q_backward(const Mat& q, const Mat& r, const Mat& q_bar) {
  // dA = (dQ + Q copyltu(M)) R^{-T},  M = -dQ^T Q  (no R cotangent).
  const Mat mm = -q_bar.transpose() * q;
  Mat sym = mm.triangularView<Eigen::Lower>();
  sym.triangularView<Eigen::StrictlyUpper>() = mm.transpose().triangularView<Eigen::StrictlyUpper>();
  const Mat y = q_bar + q * sym;
  // X R^T = Y  <=>  R X^T = Y^T
  return r.triangularView<Eigen::Upper>().solve(y.transpose()).transpose();
}

Var qr_orthonormalize(Var w_tilde) {
  auto f = thin_qr(w_tilde.value().transpose());
  Mat out = f.Q.transpose();
  return w_tilde.tape().record(std::move(out), {w_tilde},
                               [w_tilde, q = std::move(f.Q), r = std::move(f.R)](Tape& t, const Mat& g) {
                                 t.accumulate(w_tilde, thin_qr_q_backward(q, r, g.transpose()).transpose());
                               });
}

Var qr_orthonormalize_columns(Var flat, Eigen::Index k, Eigen::Index m) {
  if (flat.rows() != k * m) throw Error(ErrorCode::ShapeMismatch, "qr_orthonormalize_columns row count");
  const Eigen::Index n = flat.cols();
  Mat out(k * m, n);
  std::vector<Mat> qs(n), rs(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Map<const Mat> w(flat.value().col(c).data(), k, m);
    auto f = thin_qr(w.transpose());
    Eigen::Map<Mat>(out.col(c).data(), k, m) = f.Q.transpose();
    qs[c] = std::move(f.Q);
    rs[c] = std::move(f.R);
  }
  return flat.tape().record(std::move(out), {flat},
                            [flat, k, m, qs = std::move(qs), rs = std::move(rs)](Tape& t, const Mat& g) {
                              Mat gin(k * m, g.cols());
                              for (Eigen::Index c = 0; c < g.cols(); ++c) {
                                Eigen::Map<const Mat> gw(g.col(c).data(), k, m);
                                Eigen::Map<Mat>(gin.col(c).data(), k, m) =
                                    thin_qr_q_backward(qs[c], rs[c], gw.transpose()).transpose();
                              }
                              t.accumulate(flat, gin);
                            });
}

Var rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw Error(ErrorCode::ShapeMismatch, "rows out of range");
  return a.tape().record(a.value().middleRows(start, count), {a}, [a, start, count](Tape& t, const Mat& g) {
    Mat full = Mat::Zero(a.rows(), a.cols());
    full.middleRows(start, count) = g;
    t.accumulate(a, full);
  });
}

Var cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw Error(ErrorCode::ShapeMismatch, "cols out of range");
  return a.tape().record(a.value().middleCols(start, count), {a}, [a, start, count](Tape& t, const Mat& g) {
    Mat full = Mat::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    t.accumulate(a, full);
  });
}

Var vstack(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "vstack of nothing");
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.cols() != parts[0].cols()) throw Error(ErrorCode::ShapeMismatch, "vstack column mismatch");
    total += p.rows();
  }
  Mat out(total, parts[0].cols());
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [keep](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (const Var& p : keep) {
      t.accumulate(p, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

Var hstack(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "hstack of nothing");
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.rows() != parts[0].rows()) throw Error(ErrorCode::ShapeMismatch, "hstack row mismatch");
    total += p.cols();
  }
  Mat out(parts[0].rows(), total);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [keep](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (const Var& p : keep) {
      t.accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Var reshape(Var a, Eigen::Index r, Eigen::Index c) {
  if (r * c != a.value().size()) throw Error(ErrorCode::ShapeMismatch, "reshape size mismatch");
  Mat out = Eigen::Map<const Mat>(a.value().data(), r, c);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a, Eigen::Map<const Mat>(g.data(), a.rows(), a.cols()));
  });
}

}  // namespace fhc::ad
