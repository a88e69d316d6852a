#pragma once

// Experiment plumbing behind the fhc command-line tool: configuration,
// per-method evaluation, the results CSV, and summary statistics.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fhc/error.hpp"
#include "fhc/model.hpp"
#include "fhc/phy.hpp"
#include "fhc/quantizer.hpp"
#include "fhc/scenario.hpp"
#include "fhc/training.hpp"

namespace fhc {

struct ExperimentConfig {
  Scenario scenario;
  Direction direction = Direction::uplink;
  std::uint64_t seed = 1;

  int data_samples = 100;
  std::uint64_t data_seed = 1;

  std::vector<std::string> methods;
  int T = 4;
  double gd_step = 1e-2;
  double adam_step = 1e-2;
  double rmsprop_step = 1e-2;
  int global_T = 200;
  double global_alpha = 1.0;

  std::vector<int> bits_per_dim{0};  // eval; 0 = unquantized
  std::vector<int> sweep_bits;       // quant-sweep
  std::vector<double> gamma_grid;
  DistortionConvention convention = DistortionConvention::printed;
  QuantNoiseForm form = QuantNoiseForm::quadratic;

  TrainConfig train;
  std::vector<int> widths{256, 128};
  std::uint64_t init_seed = 1;
  std::optional<double> input_scale;  // default sqrt(p / sigma^2) / 10

  std::filesystem::path train_set, validation_set, dataset, checkpoint, output_dir;

  /// Fully resolved configuration as pretty-printed JSON.
  std::string resolved;
  /// FNV-1a of the parts that determine a trained model.
  std::string digest;
};

/// Defaults, then the JSON file (if any), then "dotted.key=value" overrides.
/// Values in overrides are parsed as JSON and fall back to plain strings.
/// Relative paths in the file resolve against the file's directory.
ExperimentConfig load_config(const std::filesystem::path* file, std::span<const std::string> overrides);

std::vector<std::string> known_methods();

struct ResultRow {
  int sample = 0;
  int user = 0;
  std::string method;
  int T = 0;
  int bits_per_dim = 0;
  double rate = 0.0;
  long overhead = 0;
  std::uint64_t seed = 0;
};

/// Per-user rates for every configured method. Unquantized rows cover every
/// refinement round t = 0..T; quantized rows cover the final design only.
/// Learned methods throw MissingCheckpoint when `model` is null.
std::vector<ResultRow> evaluate(const ExperimentConfig& cfg, const ChannelSet& set, const ModelParams* model,
                                std::span<const int> bits);

extern const char* const kCsvHeader;
void write_csv(const std::filesystem::path& path, std::span<const ResultRow> rows);
std::vector<ResultRow> read_csv(const std::filesystem::path& path);

struct GroupSummary {
  std::string method;
  int T = 0;
  int bits_per_dim = 0;
  int samples = 0;
  double mean_user_rate = 0.0;
  double ci95_user_rate = 0.0;  // half-width over per-sample means
  double mean_sum_rate = 0.0;
  double ci95_sum_rate = 0.0;
  long overhead = 0;
};

std::vector<GroupSummary> summarize(std::span<const ResultRow> rows);

struct PairedTest {
  int n = 0;
  double mean_diff = 0.0;  // a - b
  double t = 0.0;
  double p_two_sided = 1.0;
};

PairedTest paired_t_test(std::span<const double> a, std::span<const double> b);

/// Upper-tail probability P(T > t) of Student's t with `dof` degrees of freedom.
double student_t_sf(double t, double dof);

/// Mean per-user rate of each sample for one (method, T, bits) group, in sample order.
std::vector<double> per_sample_means(std::span<const ResultRow> rows, const std::string& method, int T, int bits);

std::string summary_json(std::span<const GroupSummary> groups, const std::string& extra_json = "{}");

/// 1 for configuration problems, 2 for runtime failures.
int exit_code(ErrorCode code) noexcept;

}  // namespace fhc
