#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fhc {

enum class Field { real, complex };
enum class Direction { uplink, downlink };

std::string_view to_string(Field f) noexcept;
std::string_view to_string(Direction d) noexcept;
Field parse_field(std::string_view s);
Direction parse_direction(std::string_view s);

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double x) { return 10.0 * std::log10(x); }

/// Full parameterization of a network instance. Powers are stored in dBm and
/// converted to mW on demand; channel gains are dimensionless.
struct Scenario {
  std::string name = "custom";
  int num_rrh = 7;            // B
  int antennas = 4;           // M
  int users_per_cell = 1;     // N = B * users_per_cell
  int compression_dim = 2;    // K
  int cluster_size = 3;       // |Theta_n|
  double inter_site_distance = 150.0;
  double rrh_height = 30.0;
  double p_ul_dbm = 23.0;
  double p_dl_dbm = 35.5;
  double noise_psd_dbm_hz = -169.0;
  double bandwidth_hz = 20e6;
  double sinr_gap_db = 6.0;
  double carrier_hz = 2.9e9;
  Field field = Field::real;
  bool wraparound = true;

  int num_users() const { return num_rrh * users_per_cell; }
  double noise_dbm() const { return noise_psd_dbm_hz + 10.0 * std::log10(bandwidth_hz); }
  double noise_mw() const { return db_to_linear(noise_dbm()); }
  double p_ul_mw() const { return db_to_linear(p_ul_dbm); }
  double p_dl_mw() const { return db_to_linear(p_dl_dbm); }
  double sinr_gap() const { return db_to_linear(sinr_gap_db); }

  /// Throws InvalidConfig on any violated invariant.
  void validate() const;

  bool operator==(const Scenario&) const = default;
};

/// Named configurations: paper-19cell-M8, paper-19cell-M32, desk-7cell.
Scenario preset(std::string_view name);
std::vector<std::string> preset_names();

/// RRH sites on a hexagonal lattice plus the translations of the wrap-around
/// tiling (the zero offset is always first).
struct Topology {
  Eigen::Matrix2Xd sites;
  Eigen::Matrix2Xd image_offsets;
  double inter_site_distance = 0.0;

  /// Horizontal distance from `point` to the nearest image of `site`.
  double wrapped_distance(const Eigen::Vector2d& point, int site) const;
  /// `point` shifted by the image offset that brings it closest to `site`.
  Eigen::Vector2d wrapped_displacement(const Eigen::Vector2d& point, int site) const;
};

Topology build_topology(const Scenario& scenario);

/// 41.74 + 29 log10(d) with d the 3-D distance in meters.
double pathloss_db(double d3d);

/// True when `offset` (relative to a site) lies in that site's hexagonal cell.
bool inside_hex_cell(const Eigen::Vector2d& offset, double inter_site_distance);

struct ChannelSample {
  Eigen::MatrixXd beta;                 // B x N, linear large-scale gains
  std::vector<Eigen::MatrixXd> H;       // B matrices, M x N
  Eigen::Matrix2Xd user_positions;      // may be empty after loading from disk

  bool operator==(const ChannelSample& o) const {
    return beta == o.beta && H == o.H && user_positions == o.user_positions;
  }
};

struct ChannelSet {
  Scenario scenario;
  std::uint64_t seed = 0;
  std::vector<ChannelSample> samples;
};

/// Independent per-sample random stream derived from (seed, index, stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream = 0);

ChannelSet draw_channels(const Scenario& scenario, int n_samples, std::uint64_t seed);
/// One sample; exposed so user positions can be fixed in tests.
ChannelSample channel_from_positions(const Scenario& scenario, const Topology& topo,
                                     const Eigen::Matrix2Xd& user_positions, std::uint64_t stream_seed);

struct Clustering {
  std::vector<std::vector<int>> theta;  // per user, serving RRHs by descending beta
  std::vector<std::vector<int>> phi;    // per RRH, users it serves (ascending)
};

Clustering cluster_users(const Eigen::MatrixXd& beta, int cluster_size);

/// H + E with E i.i.d. N(0, 10^(dBm/10)); beta untouched.
ChannelSet inject_csi_error(const ChannelSet& set, double error_variance_dbm, std::uint64_t seed);

// Dataset persistence. The file is one JSON header line followed by a
// little-endian float64 payload; per sample: beta row-major (B x N) then
// H_b row-major (M x N) for b = 0..B-1.
constexpr int kDatasetFormatVersion = 1;
void save_dataset(const std::filesystem::path& path, const ChannelSet& set);
ChannelSet load_dataset(const std::filesystem::path& path);
/// FNV-1a over the payload bytes, used as a run digest.
std::uint64_t dataset_checksum(const ChannelSet& set);

}  // namespace fhc
