#include "fhc/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "fhc/designers.hpp"
#include "json_io.hpp"

namespace fhc {

namespace {

using detail::json;

json default_config() {
  json bits = json::array();
  for (int q = 1; q <= 12; ++q) bits.push_back(q);
  return json{
      {"scenario", {{"preset", "desk-7cell"}}},
      {"direction", "ul"},
      {"seed", 1},
      {"data", {{"samples", 100}, {"seed", 1}}},
      {"methods", {"single-cell", "evd", "modified-evd"}},
      {"T", 4},
      {"refine", {{"gd_step", 1e-2}, {"adam_step", 1e-2}, {"rmsprop_step", 1e-2}}},
      {"global_gd", {{"T", 200}, {"alpha", 1.0}}},
      {"quantizer",
       {{"bits_per_dim", {0}},
        {"sweep_bits", bits},
        {"gamma_grid", default_gamma_grid()},
        {"convention", "printed"},
        {"form", "quadratic"}}},
      {"train",
       {{"widths", {256, 128}},
        {"learning_rate", 1e-4},
        {"batch_size", 128},
        {"epochs", 10},
        {"pretrain_epochs", 0},
        {"max_batches", 0},
        {"unroll_T", 4},
        {"seed", 1},
        {"init_seed", 1},
        {"input_scale", nullptr},
        {"plateau", {{"factor", 0.5}, {"patience", 10}, {"min_lr", 1e-6}, {"min_delta", 1e-4}}}}},
      {"paths",
       {{"train", ""}, {"validation", ""}, {"dataset", ""}, {"checkpoint", ""}, {"output_dir", "."}}},
  };
}

[[noreturn]] void config_error(const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); }

bool scenario_key(const std::string& key) {
  return key == "preset" || detail::scenario_to_json(Scenario{}).contains(key);
}

// Every key in `patch` must already exist in `base` (scenario keys excepted).
void check_keys(const json& base, const json& patch, const std::string& where) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (path == "scenario") {
      if (!it->is_object()) config_error("scenario must be an object");
      for (auto s = it->begin(); s != it->end(); ++s) {
        if (!scenario_key(s.key())) config_error("unknown scenario key '" + s.key() + "'");
      }
      continue;
    }
    if (!base.contains(it.key())) config_error("unknown config key '" + path + "'");
    if (base.at(it.key()).is_object()) {
      if (!it->is_object()) config_error("'" + path + "' must be an object");
      check_keys(base.at(it.key()), *it, path);
    }
  }
}

void apply_override(json& root, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) config_error("override '" + text + "' is not key=value");
  const std::string key = text.substr(0, eq);
  const std::string raw = text.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &root;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) config_error("unknown config key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  const bool in_scenario = parts.size() == 2 && parts[0] == "scenario";
  if (in_scenario ? !scenario_key(parts.back()) : !node->contains(parts.back())) {
    config_error("unknown config key '" + key + "'");
  }
  (*node)[parts.back()] = value;
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error(std::string("config key '") + key + "': " + e.what());
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Eigen::VectorXd quantized_per_user(const ExperimentConfig& cfg, const Clustering& cl, const TransformSet& w,
                                   std::span<const Eigen::MatrixXd> h, const LinkBudget& budget, int bits) {
  const EffectiveChannel f = effective_channel(w, h);
  const auto sigma = signal_stddev(cfg.direction, cl, f, budget);
  auto rate_at = [&](double gamma) {
    const QuantNoise q = quantization_noise(sigma, gamma, bits, cfg.convention);
    return sum_rate(cfg.direction, cl, f, budget, &q, cfg.form);
  };
  const double gamma = gamma_search([&](double g) { return rate_at(g).sum_rate; }, cfg.gamma_grid);
  return rate_at(gamma).per_user;
}

// Regularized incomplete beta I_x(a, b), continued fraction (modified Lentz).
double incomplete_beta(double x, double a, double b) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(1.0 - x, b, a);
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x)) / a;
  const double tiny = 1e-300;
  double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double result = d;
  for (int m = 1; m <= 500; ++m) {
    for (int half = 0; half < 2; ++half) {
      const double num = half == 0 ? m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m))
                                   : -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
      d = 1.0 + num * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      result *= c * d;
    }
    if (std::abs(c * d - 1.0) < 1e-15) break;
  }
  return front * result;
}

double t_quantile_975(double dof) {
  double lo = 0.0, hi = 1e3;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_sf(mid, dof) > 0.025 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void mean_ci(const std::vector<double>& v, double& mean, double& ci) {
  const double n = static_cast<double>(v.size());
  mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  ci = 0.0;
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  ci = t_quantile_975(n - 1.0) * std::sqrt(ss / (n - 1.0) / n);
}

}  // namespace

std::vector<std::string> known_methods() {
  return {"single-cell", "evd",      "modified-evd", "dnn-local", "dnn+gd",
          "dnn+gru",     "dnn+adam", "dnn+rmsprop",  "global-gd"};
}

ExperimentConfig load_config(const std::filesystem::path* file, std::span<const std::string> overrides) {
  json root = default_config();
  if (file) {
    std::ifstream is(*file);
    if (!is) throw Error(ErrorCode::IoError, "cannot open config " + file->string());
    json user;
    try {
      user = json::parse(is);
    } catch (const json::exception& e) {
      config_error(std::string("config is not valid JSON: ") + e.what());
    }
    if (!user.is_object()) config_error("config must be a JSON object");
    check_keys(root, user, "");
    if (user.contains("paths")) {
      for (auto& [key, value] : user["paths"].items()) {
        if (value.is_string() && !value.get<std::string>().empty()) {
          std::filesystem::path p = value.get<std::string>();
          if (p.is_relative()) value = (file->parent_path() / p).lexically_normal().string();
        }
      }
    }
    if (user.contains("scenario")) root["scenario"] = json::object();
    root.merge_patch(user);
  }
  for (const auto& o : overrides) apply_override(root, o);

  ExperimentConfig cfg;
  json scen = root.at("scenario");
  const std::string preset_name = scen.value("preset", "desk-7cell");
  scen.erase("preset");
  cfg.scenario = detail::scenario_from_json(scen, preset(preset_name));
  cfg.scenario.validate();
  root["scenario"] = detail::scenario_to_json(cfg.scenario);
  root["scenario"]["preset"] = preset_name;

  cfg.direction = parse_direction(get<std::string>(root, "direction"));
  cfg.seed = get<std::uint64_t>(root, "seed");
  const json& data = root.at("data");
  cfg.data_samples = get<int>(data, "samples");
  cfg.data_seed = get<std::uint64_t>(data, "seed");
  cfg.methods = get<std::vector<std::string>>(root, "methods");
  const auto known = known_methods();
  for (const auto& m : cfg.methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw Error(ErrorCode::UnknownMethod, "unknown method '" + m + "'");
    }
  }
  cfg.T = get<int>(root, "T");
  const json& ref = root.at("refine");
  cfg.gd_step = get<double>(ref, "gd_step");
  cfg.adam_step = get<double>(ref, "adam_step");
  cfg.rmsprop_step = get<double>(ref, "rmsprop_step");
  const json& gg = root.at("global_gd");
  cfg.global_T = get<int>(gg, "T");
  cfg.global_alpha = get<double>(gg, "alpha");

  const json& q = root.at("quantizer");
  cfg.bits_per_dim = get<std::vector<int>>(q, "bits_per_dim");
  cfg.sweep_bits = get<std::vector<int>>(q, "sweep_bits");
  cfg.gamma_grid = get<std::vector<double>>(q, "gamma_grid");
  const auto conv = get<std::string>(q, "convention");
  if (conv != "printed" && conv != "per_branch") config_error("quantizer.convention must be printed or per_branch");
  cfg.convention = conv == "printed" ? DistortionConvention::printed : DistortionConvention::per_branch;
  const auto form = get<std::string>(q, "form");
  if (form != "quadratic" && form != "squared") config_error("quantizer.form must be quadratic or squared");
  cfg.form = form == "quadratic" ? QuantNoiseForm::quadratic : QuantNoiseForm::squared;

  const json& tr = root.at("train");
  cfg.widths = get<std::vector<int>>(tr, "widths");
  cfg.train.learning_rate = get<double>(tr, "learning_rate");
  cfg.train.batch_size = get<int>(tr, "batch_size");
  cfg.train.epochs = get<int>(tr, "epochs");
  cfg.train.pretrain_epochs = get<int>(tr, "pretrain_epochs");
  cfg.train.max_batches = get<int>(tr, "max_batches");
  cfg.train.unroll_T = get<int>(tr, "unroll_T");
  cfg.train.seed = get<std::uint64_t>(tr, "seed");
  cfg.init_seed = get<std::uint64_t>(tr, "init_seed");
  if (!tr.at("input_scale").is_null()) cfg.input_scale = get<double>(tr, "input_scale");
  const json& pl = tr.at("plateau");
  cfg.train.plateau.factor = get<double>(pl, "factor");
  cfg.train.plateau.patience = get<int>(pl, "patience");
  cfg.train.plateau.min_lr = get<double>(pl, "min_lr");
  cfg.train.plateau.min_delta = get<double>(pl, "min_delta");
  cfg.train.direction = cfg.direction;

  const json& paths = root.at("paths");
  cfg.train_set = get<std::string>(paths, "train");
  cfg.validation_set = get<std::string>(paths, "validation");
  cfg.dataset = get<std::string>(paths, "dataset");
  cfg.checkpoint = get<std::string>(paths, "checkpoint");
  cfg.output_dir = get<std::string>(paths, "output_dir");
  cfg.train.dump_dir = cfg.output_dir;

  if (cfg.data_samples < 1) config_error("data.samples must be >= 1");
  if (cfg.T < 0 || cfg.global_T < 0 || cfg.train.unroll_T < 0) config_error("iteration counts must be >= 0");
  for (double s : {cfg.gd_step, cfg.adam_step, cfg.rmsprop_step, cfg.global_alpha, cfg.train.learning_rate}) {
    if (!(s > 0.0)) config_error("step sizes must be positive");
  }
  for (const auto* list : {&cfg.bits_per_dim, &cfg.sweep_bits}) {
    for (int b : *list) {
      if (b < 0 || b > 30) config_error("bits_per_dim must be in [0, 30]");
    }
  }
  if (cfg.gamma_grid.empty()) config_error("quantizer.gamma_grid is empty");
  for (double g : cfg.gamma_grid) {
    if (!(g > 0.0)) config_error("gamma grid entries must be positive");
  }
  if (cfg.widths.empty()) config_error("train.widths is empty");
  for (int w : cfg.widths) {
    if (w < 1) config_error("train.widths must be positive");
  }
  if (cfg.train.batch_size < 1 || cfg.train.epochs < 0 || cfg.train.pretrain_epochs < 0 || cfg.train.max_batches < 0) {
    config_error("train batch/epoch counts out of range");
  }
  if (cfg.input_scale && !(*cfg.input_scale > 0.0)) config_error("train.input_scale must be positive");

  detail::Fnv1a h;
  h.add(root.at("scenario").dump());
  h.add(root.at("direction").dump());
  h.add(root.at("train").dump());
  cfg.digest = hex64(h.value());
  cfg.resolved = root.dump(2);
  return cfg;
}

std::vector<ResultRow> evaluate(const ExperimentConfig& cfg, const ChannelSet& set, const ModelParams* model,
                                std::span<const int> bits) {
  const Scenario& sc = set.scenario;
  const int m = sc.antennas, n = sc.num_users(), k = sc.compression_dim;
  const LinkBudget budget = link_budget(sc, cfg.direction);
  for (const auto& name : cfg.methods) {
    if (name.rfind("dnn", 0) == 0 && model == nullptr) {
      throw Error(ErrorCode::MissingCheckpoint, "method '" + name + "' needs a trained checkpoint");
    }
  }
  if (model && (model->antennas != m || model->users != n || model->dims != k)) {
    throw Error(ErrorCode::ShapeMismatch, "checkpoint dimensions do not match the dataset");
  }

  std::vector<ResultRow> rows;
  for (std::size_t s = 0; s < set.samples.size(); ++s) {
    const auto& sample = set.samples[s];
    const auto& h = sample.H;
    const Clustering cl = cluster_users(sample.beta, sc.cluster_size);
    auto emit = [&](const std::string& method, int t, int q, const Eigen::VectorXd& per_user, long ovh) {
      for (int u = 0; u < n; ++u) {
        rows.push_back({static_cast<int>(s), u, method, t, q, per_user(u), ovh, set.seed});
      }
    };
    auto emit_quantized = [&](const std::string& method, int t, const TransformSet& w, long ovh) {
      for (int q : bits) {
        if (q > 0) emit(method, t, q, quantized_per_user(cfg, cl, w, h, budget, q), ovh);
      }
    };
    const bool unquantized = std::find(bits.begin(), bits.end(), 0) != bits.end();
    auto emit_design = [&](const std::string& method, int t, const TransformSet& w, long ovh) {
      if (unquantized) emit(method, t, 0, sum_rate(cfg.direction, cl, w, h, budget).per_user, ovh);
      emit_quantized(method, t, w, ovh);
    };

    for (const auto& method : cfg.methods) {
      const long local = overhead("local", m, n, k, 0);
      if (method == "single-cell") {
        if (unquantized) emit(method, 0, 0, single_cell_rate(cfg.direction, cl, h, budget).per_user, 0);
      } else if (method == "evd") {
        emit_design(method, 0, design_evd_set(h, k), local);
      } else if (method == "modified-evd") {
        emit_design(method, 0, design_modified_evd_set(h, sample.beta, budget.power(0), budget.noise, k), local);
      } else if (method == "dnn-local") {
        emit_design(method, 0, design_stage1_set(*model, h), local);
      } else if (method == "global-gd") {
        const GlobalGdResult g =
            design_global_gd(cfg.direction, h, cl, budget, cfg.global_T, cfg.global_alpha, design_evd_set(h, k));
        emit_design(method, cfg.global_T, g.w, overhead("global", m, n, k, 0));
      } else {
        RefineConfig rc;
        rc.method = parse_refine_method(method.substr(4));
        rc.direction = cfg.direction;
        rc.T = cfg.T;
        rc.step = rc.method == RefineMethod::adam      ? cfg.adam_step
                  : rc.method == RefineMethod::rmsprop ? cfg.rmsprop_step
                                                       : cfg.gd_step;
        rc.model = model;
        const RefineResult r = refine(rc, design_stage1_set(*model, h), h, cl, budget);
        if (unquantized) {
          for (int t = 0; t <= cfg.T; ++t) emit(method, t, 0, r.per_user[t], overhead("two-stage", m, n, k, t));
        }
        emit_quantized(method, cfg.T, r.w, overhead("two-stage", m, n, k, cfg.T));
      }
    }
  }
  return rows;
}

const char* const kCsvHeader = "sample,user,method,T,bits_per_dim,rate_bps_hz,overhead_scalars,seed";

void write_csv(const std::filesystem::path& path, std::span<const ResultRow> rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os << kCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.sample << ',' << r.user << ',' << r.method << ',' << r.T << ',' << r.bits_per_dim << ',' << fmt17(r.rate)
       << ',' << r.overhead << ',' << r.seed << '\n';
  }
  if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::vector<ResultRow> read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw Error(ErrorCode::FormatError, "unexpected CSV header");
  std::vector<ResultRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw Error(ErrorCode::FormatError, "CSV row has " + std::to_string(f.size()) + " fields");
    try {
      rows.push_back({std::stoi(f[0]), std::stoi(f[1]), f[2], std::stoi(f[3]), std::stoi(f[4]), std::stod(f[5]),
                      std::stol(f[6]), std::stoull(f[7])});
    } catch (const std::exception&) {
      throw Error(ErrorCode::FormatError, "bad CSV row: " + line);
    }
  }
  return rows;
}

std::vector<double> per_sample_means(std::span<const ResultRow> rows, const std::string& method, int T, int bits) {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    if (r.method != method || r.T != T || r.bits_per_dim != bits) continue;
    auto& a = acc[r.sample];
    a.first += r.rate;
    ++a.second;
  }
  std::vector<double> out;
  for (const auto& [sample, a] : acc) out.push_back(a.first / a.second);
  return out;
}

std::vector<GroupSummary> summarize(std::span<const ResultRow> rows) {
  std::vector<GroupSummary> groups;
  for (const auto& r : rows) {
    const bool seen = std::any_of(groups.begin(), groups.end(), [&](const GroupSummary& g) {
      return g.method == r.method && g.T == r.T && g.bits_per_dim == r.bits_per_dim;
    });
    if (!seen) groups.push_back({r.method, r.T, r.bits_per_dim, 0, 0, 0, 0, 0, r.overhead});
  }
  for (auto& g : groups) {
    std::map<int, std::pair<double, int>> acc;
    for (const auto& r : rows) {
      if (r.method != g.method || r.T != g.T || r.bits_per_dim != g.bits_per_dim) continue;
      acc[r.sample].first += r.rate;
      ++acc[r.sample].second;
    }
    std::vector<double> user_means, sums;
    for (const auto& [sample, a] : acc) {
      user_means.push_back(a.first / a.second);
      sums.push_back(a.first);
    }
    g.samples = static_cast<int>(acc.size());
    mean_ci(user_means, g.mean_user_rate, g.ci95_user_rate);
    mean_ci(sums, g.mean_sum_rate, g.ci95_sum_rate);
  }
  return groups;
}

double student_t_sf(double t, double dof) {
  if (!(dof > 0.0)) throw Error(ErrorCode::InvalidConfig, "degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double tail = 0.5 * incomplete_beta(dof / (dof + t * t), dof / 2.0, 0.5);
  return t >= 0.0 ? tail : 1.0 - tail;
}

PairedTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw Error(ErrorCode::ShapeMismatch, "paired test needs two equal-length samples of size >= 2");
  }
  PairedTest out;
  out.n = static_cast<int>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double n = static_cast<double>(d.size());
  out.mean_diff = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - out.mean_diff) * (x - out.mean_diff);
  const double se = std::sqrt(ss / (n - 1.0) / n);
  if (se == 0.0) {
    out.t = out.mean_diff == 0.0 ? 0.0 : std::copysign(INFINITY, out.mean_diff);
  } else {
    out.t = out.mean_diff / se;
  }
  out.p_two_sided = std::min(1.0, 2.0 * student_t_sf(std::abs(out.t), n - 1.0));
  return out;
}

std::string summary_json(std::span<const GroupSummary> groups, const std::string& extra_json) {
  json out = json::parse(extra_json);
  json arr = json::array();
  for (const auto& g : groups) {
    arr.push_back({{"method", g.method},
                   {"T", g.T},
                   {"bits_per_dim", g.bits_per_dim},
                   {"samples", g.samples},
                   {"mean_user_rate", g.mean_user_rate},
                   {"ci95_user_rate", g.ci95_user_rate},
                   {"mean_sum_rate", g.mean_sum_rate},
                   {"ci95_sum_rate", g.ci95_sum_rate},
                   {"overhead_scalars", g.overhead}});
  }
  out["groups"] = arr;
  return out.dump(2);
}

int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnknownMethod:
    case ErrorCode::MissingCheckpoint:
    case ErrorCode::UnsupportedLayout:
    case ErrorCode::EmptyGrid:
      return 1;
    default:
      return 2;
  }
}

}  // namespace fhc
