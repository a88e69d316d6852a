#include "fhc/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "fhc/error.hpp"
#include "fhc/numerics.hpp"
#include "json_io.hpp"

namespace fhc {

namespace {

ModelParams shaped(int m, int n, int k, std::vector<int> widths) {
  if (m < 1 || n < 1 || k < 1 || k >= m) throw Error(ErrorCode::InvalidConfig, "model needs 1 <= K < M and N >= 1");
  for (int w : widths) {
    if (w < 1) throw Error(ErrorCode::InvalidConfig, "layer widths must be positive");
  }
  ModelParams p;
  p.antennas = m;
  p.users = n;
  p.dims = k;
  p.widths = std::move(widths);
  int in = m * n;
  for (int w : p.widths) {
    p.stage1.push_back({Eigen::MatrixXd::Zero(w, in), Eigen::MatrixXd::Zero(w, 1)});
    in = w;
  }
  const int km = k * m;
  const int hs = p.hidden_size();
  p.stage1.push_back({Eigen::MatrixXd::Zero(km, in), Eigen::MatrixXd::Zero(km, 1)});
  for (auto* w : {&p.gru.wz, &p.gru.wr, &p.gru.wn}) *w = Eigen::MatrixXd::Zero(hs, km);
  for (auto* u : {&p.gru.uz, &p.gru.ur, &p.gru.un}) *u = Eigen::MatrixXd::Zero(hs, hs);
  for (auto* b : {&p.gru.bz, &p.gru.br, &p.gru.bn}) *b = Eigen::MatrixXd::Zero(hs, 1);
  p.head_hidden = {Eigen::MatrixXd::Zero(hs, hs), Eigen::MatrixXd::Zero(hs, 1)};
  p.head_out = {Eigen::MatrixXd::Zero(km, hs), Eigen::MatrixXd::Zero(km, 1)};
  return p;
}

Eigen::VectorXd dense(const DenseLayer& l, const Eigen::VectorXd& x) { return l.w * x + l.b.col(0); }

Eigen::VectorXd sigmoid(const Eigen::VectorXd& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

void check_dims(const ModelParams& p, const Eigen::MatrixXd& h) {
  if (h.rows() != p.antennas || h.cols() != p.users) {
    throw Error(ErrorCode::ShapeMismatch, "H_b is " + std::to_string(h.rows()) + "x" + std::to_string(h.cols()) +
                                              ", model expects " + std::to_string(p.antennas) + "x" +
                                              std::to_string(p.users));
  }
}

}  // namespace

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const Eigen::MatrixXd& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = std::isfinite(input_scale);
  visit([&](const Eigen::MatrixXd& t) { ok = ok && t.allFinite(); });
  return ok;
}

ModelParams init_model(int antennas, int users, int dims, std::vector<int> widths, double input_scale,
                       std::uint64_t seed) {
  ModelParams p = shaped(antennas, users, dims, std::move(widths));
  p.input_scale = input_scale;
  std::mt19937_64 rng(seed);
  auto fill = [&](Eigen::MatrixXd& w) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
  };
  for (auto& l : p.stage1) fill(l.w);
  for (auto* w : {&p.gru.wz, &p.gru.uz, &p.gru.wr, &p.gru.ur, &p.gru.wn, &p.gru.un}) fill(*w);
  p.gru.bz.setConstant(-1.0);
  fill(p.head_hidden.w);
  fill(p.head_out.w);
  return p;
}

Eigen::VectorXd stage1_features(const ModelParams& params, const Eigen::MatrixXd& h) {
  check_dims(params, h);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(h.cols()));
  std::iota(order.begin(), order.end(), 0);
  if (params.sort_columns) {
    const Eigen::VectorXd norms = h.colwise().squaredNorm().transpose();
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return norms(a) > norms(b); });
  }
  Eigen::VectorXd x(h.size());
  for (std::size_t j = 0; j < order.size(); ++j) {
    x.segment(static_cast<Eigen::Index>(j) * h.rows(), h.rows()) = params.input_scale * h.col(order[j]);
  }
  return x;
}

Eigen::MatrixXd stage1_forward(const ModelParams& params, const Eigen::MatrixXd& h) {
  Eigen::VectorXd x = stage1_features(params, h);
  for (std::size_t i = 0; i < params.stage1.size(); ++i) {
    x = dense(params.stage1[i], x);
    if (i + 1 < params.stage1.size()) x = x.array().tanh();
  }
  const Eigen::MatrixXd w_tilde = Eigen::Map<const Eigen::MatrixXd>(x.data(), params.dims, params.antennas);
  try {
    return qr_orthonormalize(w_tilde);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::RankDeficient) throw;
    throw Error(ErrorCode::DegenerateInitialization, "stage-1 output is rank deficient");
  }
}

GruStep gru_step(const ModelParams& params, const Eigen::VectorXd& hidden, const Eigen::MatrixXd& grad_w) {
  const auto& g = params.gru;
  if (hidden.size() != params.hidden_size() || grad_w.rows() != params.dims || grad_w.cols() != params.antennas) {
    throw Error(ErrorCode::ShapeMismatch, "gru_step input shapes do not match the model");
  }
  const Eigen::VectorXd x = grad_w.reshaped();
  const Eigen::VectorXd z = sigmoid(g.wz * x + g.uz * hidden + g.bz.col(0));
  const Eigen::VectorXd r = sigmoid(g.wr * x + g.ur * hidden + g.br.col(0));
  const Eigen::VectorXd n = (g.wn * x + g.un * r.cwiseProduct(hidden) + g.bn.col(0)).array().tanh();
  GruStep out;
  out.hidden = hidden + z.cwiseProduct(n - hidden);
  const Eigen::VectorXd a = dense(params.head_hidden, out.hidden).array().tanh();
  const Eigen::VectorXd d = dense(params.head_out, a);
  out.delta = d.reshaped(params.dims, params.antennas);
  return out;
}

ModelVars bind_parameters(ad::Tape& tape, const ModelParams& params) {
  ModelVars v;
  params.visit([&](const Eigen::MatrixXd& t) { v.tensors.push_back(tape.parameter(t)); });
  return v;
}

ad::Var stage1_graph(const ModelParams& params, const ModelVars& vars, ad::Var features) {
  ad::Var x = features;
  const std::size_t layers = params.stage1.size();
  for (std::size_t i = 0; i < layers; ++i) {
    x = ad::add_bias(ad::matmul(vars.tensors[2 * i], x), vars.tensors[2 * i + 1]);
    if (i + 1 < layers) x = ad::tanh(x);
  }
  return x;
}

GruGraphStep gru_graph(const ModelParams& params, const ModelVars& vars, ad::Var hidden, ad::Var input) {
  const std::size_t base = 2 * params.stage1.size();
  auto t = [&](std::size_t i) { return vars.tensors[base + i]; };
  auto gate = [&](std::size_t w, std::size_t u, std::size_t b, ad::Var h) {
    return ad::add_bias(ad::add(ad::matmul(t(w), input), ad::matmul(t(u), h)), t(b));
  };
  ad::Var z = ad::sigmoid(gate(0, 1, 2, hidden));
  ad::Var r = ad::sigmoid(gate(3, 4, 5, hidden));
  ad::Var n = ad::tanh(gate(6, 7, 8, ad::hadamard(r, hidden)));
  GruGraphStep out;
  out.hidden = ad::add(hidden, ad::hadamard(z, ad::sub(n, hidden)));
  ad::Var a = ad::tanh(ad::add_bias(ad::matmul(t(9), out.hidden), t(10)));
  out.delta = ad::add_bias(ad::matmul(t(11), a), t(12));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const ModelParams& p = ckpt.params;
  const bool with_adam = !ckpt.adam_m.empty();
  detail::json header{{"format", "fhc-checkpoint"},
                      {"version", kCheckpointFormatVersion},
                      {"antennas", p.antennas},
                      {"users", p.users},
                      {"dims", p.dims},
                      {"widths", p.widths},
                      {"input_scale", p.input_scale},
                      {"sort_columns", p.sort_columns},
                      {"config_digest", ckpt.config_digest},
                      {"epoch", ckpt.epoch},
                      {"learning_rate", ckpt.learning_rate},
                      {"adam_step", ckpt.adam_step},
                      {"has_adam", with_adam}};
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os << header.dump() << '\n';
  auto write = [&](const Eigen::MatrixXd& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) detail::write_f64(os, t.data()[i]);
  };
  p.visit(write);
  if (with_adam) {
    for (const auto& t : ckpt.adam_m) write(t);
    for (const auto& t : ckpt.adam_v) write(t);
  }
  if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::MissingCheckpoint, "cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::FormatError, "empty checkpoint");
  Checkpoint c;
  bool with_adam = false;
  try {
    const auto h = detail::json::parse(line);
    if (h.value("format", "") != "fhc-checkpoint") throw Error(ErrorCode::FormatError, "not a checkpoint file");
    if (h.value("version", 0) != kCheckpointFormatVersion) {
      throw Error(ErrorCode::FormatError, "unsupported checkpoint version");
    }
    c.params = shaped(h.at("antennas").get<int>(), h.at("users").get<int>(), h.at("dims").get<int>(),
                      h.at("widths").get<std::vector<int>>());
    c.params.input_scale = h.at("input_scale").get<double>();
    c.params.sort_columns = h.at("sort_columns").get<bool>();
    c.config_digest = h.at("config_digest").get<std::string>();
    c.epoch = h.at("epoch").get<int>();
    c.learning_rate = h.at("learning_rate").get<double>();
    c.adam_step = h.at("adam_step").get<long>();
    with_adam = h.at("has_adam").get<bool>();
  } catch (const detail::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("bad checkpoint header: ") + e.what());
  }
  auto read = [&](Eigen::MatrixXd& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = detail::read_f64(is);
  };
  c.params.visit(read);
  if (with_adam) {
    for (auto* moments : {&c.adam_m, &c.adam_v}) {
      c.params.visit([&](const Eigen::MatrixXd& t) {
        moments->push_back(Eigen::MatrixXd(t.rows(), t.cols()));
        read(moments->back());
      });
    }
  }
  if (is.peek() != std::ifstream::traits_type::eof()) throw Error(ErrorCode::FormatError, "trailing checkpoint bytes");
  return c;
}

}  // namespace fhc
