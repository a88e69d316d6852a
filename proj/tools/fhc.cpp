#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fhc/designers.hpp"
#include "fhc/error.hpp"
#include "fhc/experiment.hpp"
#include "fhc/model.hpp"
#include "fhc/scenario.hpp"
#include "fhc/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a config value, e.g. --set train.epochs=5");
  cmd->add_option("-o,--out-dir", c.out_dir, "output directory (paths.output_dir)");
}

void push_path(std::vector<std::string>& ov, const char* key, const std::string& value) {
  if (!value.empty()) ov.push_back(std::string(key) + "=" + json(fs::absolute(value).string()).dump());
}

fhc::ExperimentConfig resolve(const Common& c, std::vector<std::string> extra) {
  std::vector<std::string> ov = c.overrides;
  push_path(ov, "paths.output_dir", c.out_dir);
  ov.insert(ov.end(), extra.begin(), extra.end());
  const fs::path file = c.config;
  return fhc::load_config(c.config.empty() ? nullptr : &file, ov);
}

fs::path prepare_out(const fhc::ExperimentConfig& cfg, const std::string& config_name) {
  fs::create_directories(cfg.output_dir);
  std::ofstream(cfg.output_dir / config_name) << cfg.resolved << '\n';
  return cfg.output_dir;
}

fs::path require_path(const fs::path& p, const char* what) {
  if (p.empty()) throw fhc::Error(fhc::ErrorCode::InvalidConfig, std::string("no ") + what + " path given");
  return p;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::optional<fhc::ModelParams> load_model_if_needed(const fhc::ExperimentConfig& cfg) {
  bool learned = false;
  for (const auto& m : cfg.methods) learned |= m.rfind("dnn", 0) == 0;
  if (!learned) return std::nullopt;
  if (cfg.checkpoint.empty()) {
    throw fhc::Error(fhc::ErrorCode::MissingCheckpoint, "learned methods need --checkpoint");
  }
  fhc::Checkpoint ck = fhc::load_checkpoint(cfg.checkpoint);
  if (ck.config_digest != cfg.digest) {
    std::cerr << "note: checkpoint digest " << ck.config_digest << " differs from config digest " << cfg.digest
              << '\n';
  }
  return std::move(ck.params);
}

void print_groups(const std::vector<fhc::GroupSummary>& groups) {
  std::printf("%-14s %4s %5s %8s %12s %10s %10s\n", "method", "T", "bits", "samples", "user_rate", "ci95", "overhead");
  for (const auto& g : groups) {
    std::printf("%-14s %4d %5d %8d %12.6f %10.6f %10ld\n", g.method.c_str(), g.T, g.bits_per_dim, g.samples,
                g.mean_user_rate, g.ci95_user_rate, g.overhead);
  }
}

int run_eval(const fhc::ExperimentConfig& cfg, const std::vector<int>& bits, const std::string& stem) {
  const fs::path out = prepare_out(cfg, stem + "_config.json");
  const auto model = load_model_if_needed(cfg);
  const fhc::ChannelSet set = fhc::load_dataset(require_path(cfg.dataset, "dataset"));
  const auto rows = fhc::evaluate(cfg, set, model ? &*model : nullptr, bits);
  fhc::write_csv(out / (stem + ".csv"), rows);
  const auto groups = fhc::summarize(rows);
  json extra{{"dataset", cfg.dataset.string()}, {"samples", set.samples.size()}, {"config_digest", cfg.digest}};
  std::ofstream(out / (stem + "_summary.json")) << fhc::summary_json(groups, extra.dump()) << '\n';
  print_groups(groups);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fronthaul compression designers: data generation, training and evaluation"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, sweep_c, report_c;

  auto* gen = app.add_subcommand("gen-data", "draw a channel dataset");
  add_common(gen, gen_c);
  std::string gen_out;
  std::optional<int> gen_samples;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--out", gen_out, "dataset file to write")->required();
  gen->add_option("-n,--samples", gen_samples, "number of samples (data.samples)");
  gen->add_option("--seed", gen_seed, "dataset seed (data.seed)");

  auto* train = app.add_subcommand("train", "train the stage-1 DNN and GRU refiner");
  add_common(train, train_c);
  std::string train_set, val_set, resume;
  std::optional<int> epochs;
  train->add_option("--train", train_set, "training dataset");
  train->add_option("--validation", val_set, "validation dataset");
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_option("--epochs", epochs, "epochs to run (train.epochs)");

  auto* eval = app.add_subcommand("eval", "evaluate designers on a dataset");
  add_common(eval, eval_c);
  std::string eval_data, eval_ckpt, eval_methods;
  std::optional<int> eval_T;
  eval->add_option("--dataset", eval_data, "dataset to evaluate");
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint for learned methods");
  eval->add_option("--methods", eval_methods, "comma-separated method list");
  eval->add_option("-T,--rounds", eval_T, "refinement rounds");

  auto* sweep = app.add_subcommand("quant-sweep", "evaluate designers over quantizer resolutions");
  add_common(sweep, sweep_c);
  std::string sweep_data, sweep_ckpt, sweep_methods, sweep_bits;
  sweep->add_option("--dataset", sweep_data, "dataset to evaluate");
  sweep->add_option("--checkpoint", sweep_ckpt, "trained checkpoint for learned methods");
  sweep->add_option("--methods", sweep_methods, "comma-separated method list");
  sweep->add_option("--bits", sweep_bits, "comma-separated bits per dimension");

  auto* report = app.add_subcommand("report", "summarize results CSVs with paired comparisons");
  add_common(report, report_c);
  std::vector<std::string> report_csv;
  std::string compare;
  report->add_option("--csv", report_csv, "results CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("--compare", compare, "comma-separated methods, each tested against the next");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  auto methods_override = [](const std::string& list) {
    return std::string("methods=") + json(split(list)).dump();
  };

  try {
    if (gen->parsed()) {
      std::vector<std::string> extra;
      if (gen_samples) extra.push_back("data.samples=" + std::to_string(*gen_samples));
      if (gen_seed) extra.push_back("data.seed=" + std::to_string(*gen_seed));
      const fhc::ExperimentConfig cfg = resolve(gen_c, extra);
      const fs::path out = fs::absolute(gen_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      const fhc::ChannelSet set = fhc::draw_channels(cfg.scenario, cfg.data_samples, cfg.data_seed);
      fhc::save_dataset(out, set);
      std::ofstream(fs::path(out).concat(".config.json")) << cfg.resolved << '\n';
      std::printf("samples %zu checksum %016llx\n", set.samples.size(),
                  static_cast<unsigned long long>(fhc::dataset_checksum(set)));
      return 0;
    }

    if (train->parsed()) {
      std::vector<std::string> extra;
      push_path(extra, "paths.train", train_set);
      push_path(extra, "paths.validation", val_set);
      if (epochs) extra.push_back("train.epochs=" + std::to_string(*epochs));
      fhc::ExperimentConfig cfg = resolve(train_c, extra);
      const fs::path out = prepare_out(cfg, "train_config.json");
      const fhc::ChannelSet tr = fhc::load_dataset(require_path(cfg.train_set, "training set"));
      const fhc::ChannelSet va = fhc::load_dataset(require_path(cfg.validation_set, "validation set"));
      std::optional<fhc::Checkpoint> from;
      if (!resume.empty()) from = fhc::load_checkpoint(resume);
      const auto& sc = tr.scenario;
      fhc::ModelParams p0;
      if (!from) {
        const fhc::LinkBudget b = fhc::link_budget(sc, cfg.direction, false);
        const double scale = cfg.input_scale.value_or(std::sqrt(b.power(0) / b.noise) / 10.0);
        p0 = fhc::init_model(sc.antennas, sc.num_users(), sc.compression_dim, cfg.widths, scale, cfg.init_seed);
      }
      cfg.train.config_digest = cfg.digest;
      std::ofstream log(out / "train_log.jsonl", from ? std::ios::app : std::ios::trunc);
      const auto result = fhc::train_two_stage(cfg.train, tr, va, p0, from ? &*from : nullptr,
                                               [&](const fhc::EpochLog& e) {
                                                 json rec{{"epoch", e.epoch},
                                                          {"train_loss", e.train_loss},
                                                          {"val_rate_at_T", e.val_rate_at_T},
                                                          {"lr", e.lr},
                                                          {"wallclock", e.wallclock}};
                                                 log << rec.dump() << std::endl;
                                                 std::printf("epoch %d loss %.6f val %.6f lr %.3g\n", e.epoch,
                                                             e.train_loss, e.val_rate_at_T, e.lr);
                                                 std::fflush(stdout);
                                               });
      fhc::save_checkpoint(out / "best.ckpt", result.best);
      fhc::save_checkpoint(out / "last.ckpt", result.last);
      return 0;
    }

    if (eval->parsed()) {
      std::vector<std::string> extra;
      push_path(extra, "paths.dataset", eval_data);
      push_path(extra, "paths.checkpoint", eval_ckpt);
      if (!eval_methods.empty()) extra.push_back(methods_override(eval_methods));
      if (eval_T) extra.push_back("T=" + std::to_string(*eval_T));
      const fhc::ExperimentConfig cfg = resolve(eval_c, extra);
      return run_eval(cfg, cfg.bits_per_dim, "results");
    }

    if (sweep->parsed()) {
      std::vector<std::string> extra;
      push_path(extra, "paths.dataset", sweep_data);
      push_path(extra, "paths.checkpoint", sweep_ckpt);
      if (!sweep_methods.empty()) extra.push_back(methods_override(sweep_methods));
      if (!sweep_bits.empty()) extra.push_back("quantizer.sweep_bits=[" + sweep_bits + "]");
      const fhc::ExperimentConfig cfg = resolve(sweep_c, extra);
      return run_eval(cfg, cfg.sweep_bits, "quant_sweep");
    }

    if (report->parsed()) {
      const fhc::ExperimentConfig cfg = resolve(report_c, {});
      const fs::path out = prepare_out(cfg, "report_config.json");
      std::vector<fhc::ResultRow> rows;
      for (const auto& f : report_csv) {
        auto r = fhc::read_csv(f);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      const auto groups = fhc::summarize(rows);
      print_groups(groups);
      json comparisons = json::array();
      const auto names = split(compare);
      auto final_t = [&](const std::string& m) {
        int t = -1;
        for (const auto& g : groups) {
          if (g.method == m && g.bits_per_dim == 0) t = std::max(t, g.T);
        }
        if (t < 0) throw fhc::Error(fhc::ErrorCode::InvalidConfig, "no unquantized rows for '" + m + "'");
        return t;
      };
      for (std::size_t i = 0; i + 1 < names.size(); ++i) {
        const auto a = fhc::per_sample_means(rows, names[i], final_t(names[i]), 0);
        const auto b = fhc::per_sample_means(rows, names[i + 1], final_t(names[i + 1]), 0);
        const fhc::PairedTest t = fhc::paired_t_test(a, b);
        comparisons.push_back({{"a", names[i]}, {"b", names[i + 1]}, {"n", t.n}, {"mean_diff", t.mean_diff},
                               {"t", t.t}, {"p_two_sided", t.p_two_sided}});
        std::printf("%s vs %s: diff %.6f t %.3f p %.3g (n=%d)\n", names[i].c_str(), names[i + 1].c_str(),
                    t.mean_diff, t.t, t.p_two_sided, t.n);
      }
      json extra{{"comparisons", comparisons}};
      std::ofstream(out / "report.json") << fhc::summary_json(groups, extra.dump()) << '\n';
      return 0;
    }
  } catch (const fhc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return fhc::exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
