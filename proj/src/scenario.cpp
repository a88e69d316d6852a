#include "fhc/scenario.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "fhc/error.hpp"

namespace fhc {

std::string_view to_string(Field f) noexcept { return f == Field::real ? "real" : "complex"; }
std::string_view to_string(Direction d) noexcept { return d == Direction::uplink ? "ul" : "dl"; }

Field parse_field(std::string_view s) {
  if (s == "real") return Field::real;
  if (s == "complex") return Field::complex;
  throw Error(ErrorCode::InvalidConfig, "unknown field '" + std::string(s) + "'");
}

Direction parse_direction(std::string_view s) {
  if (s == "ul" || s == "uplink") return Direction::uplink;
  if (s == "dl" || s == "downlink") return Direction::downlink;
  throw Error(ErrorCode::InvalidConfig, "unknown direction '" + std::string(s) + "'");
}

void Scenario::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
  if (num_rrh < 1 || antennas < 1 || users_per_cell < 1 || compression_dim < 1) fail("dimensions must be positive");
  if (compression_dim >= antennas) fail("need K < M");
  if (cluster_size < 1 || cluster_size > num_rrh) fail("need 1 <= cluster_size <= B");
  if (num_rrh != 1 && num_rrh != 7 && num_rrh != 19) fail("B must be 1, 7 or 19 (hexagonal layouts)");
  for (double v : {inter_site_distance, rrh_height, p_ul_dbm, p_dl_dbm, noise_psd_dbm_hz, bandwidth_hz,
                   sinr_gap_db, carrier_hz}) {
    if (!std::isfinite(v)) fail("non-finite scenario parameter");
  }
  if (inter_site_distance <= 0.0 || bandwidth_hz <= 0.0 || rrh_height < 0.0) fail("nonpositive geometry or bandwidth");
  if (field == Field::complex) fail("complex field is not compiled into this build");
}

Scenario preset(std::string_view name) {
  Scenario s;
  s.name = std::string(name);
  if (name == "paper-19cell-M8" || name == "paper-19cell-M32") {
    s.num_rrh = 19;
    s.users_per_cell = 2;
    s.antennas = name == "paper-19cell-M8" ? 8 : 32;
    s.cluster_size = name == "paper-19cell-M8" ? 7 : 17;
    s.compression_dim = 2;
    s.p_dl_dbm = 42.8;
  } else if (name == "desk-7cell") {
    s.num_rrh = 7;
    s.users_per_cell = 1;
    s.antennas = 4;
    s.cluster_size = 3;
    s.compression_dim = 2;
    // Same per-user downlink power as the 19-cell preset (42.8 dBm over 38 users).
    s.p_dl_dbm = 35.5;
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown preset '" + std::string(name) + "'");
  }
  return s;
}

std::vector<std::string> preset_names() { return {"paper-19cell-M8", "paper-19cell-M32", "desk-7cell"}; }

double Topology::wrapped_distance(const Eigen::Vector2d& point, int site) const {
  return (wrapped_displacement(point, site) - sites.col(site)).norm();
}

Eigen::Vector2d Topology::wrapped_displacement(const Eigen::Vector2d& point, int site) const {
  Eigen::Vector2d best = point;
  double best_d = (point - sites.col(site)).norm();
  for (Eigen::Index k = 1; k < image_offsets.cols(); ++k) {
    const Eigen::Vector2d cand = point + image_offsets.col(k);
    const double d = (cand - sites.col(site)).norm();
    if (d < best_d) {
      best_d = d;
      best = cand;
    }
  }
  return best;
}

Topology build_topology(const Scenario& scenario) {
  const double d = scenario.inter_site_distance;
  const int b = scenario.num_rrh;
  if (b != 1 && b != 7 && b != 19) {
    throw Error(ErrorCode::UnsupportedLayout, "no hexagonal layout with " + std::to_string(b) + " sites");
  }
  const Eigen::Vector2d a1(d, 0.0);
  const Eigen::Vector2d a2(d / 2.0, d * std::sqrt(3.0) / 2.0);
  const std::array<Eigen::Vector2d, 6> ring{a1, a2, a2 - a1, -a1, -a2, a1 - a2};

  std::vector<Eigen::Vector2d> sites{Eigen::Vector2d::Zero()};
  if (b >= 7) sites.insert(sites.end(), ring.begin(), ring.end());
  if (b >= 19) {
    for (int k = 0; k < 6; ++k) {
      sites.push_back(2.0 * ring[k]);
      sites.push_back(ring[k] + ring[(k + 1) % 6]);
    }
  }
  Topology topo;
  topo.inter_site_distance = d;
  topo.sites.resize(2, b);
  for (int i = 0; i < b; ++i) topo.sites.col(i) = sites[i];

  std::vector<Eigen::Vector2d> offsets{Eigen::Vector2d::Zero()};
  if (scenario.wraparound && b > 1) {
    // The 7-site cluster tiles the plane with translations 2a1 + a2; the
    // 19-site cluster with 3a1 + 2a2 (and their 60-degree rotations).
    Eigen::Vector2d t = b == 7 ? Eigen::Vector2d(2.0 * a1 + a2) : Eigen::Vector2d(3.0 * a1 + 2.0 * a2);
    const Eigen::Rotation2Dd rot(M_PI / 3.0);
    for (int k = 0; k < 6; ++k) {
      offsets.push_back(t);
      t = rot * t;
    }
  }
  topo.image_offsets.resize(2, static_cast<Eigen::Index>(offsets.size()));
  for (std::size_t i = 0; i < offsets.size(); ++i) topo.image_offsets.col(static_cast<Eigen::Index>(i)) = offsets[i];
  return topo;
}

double pathloss_db(double d3d) {
  if (!(d3d > 0.0)) throw Error(ErrorCode::NonpositiveDistance, "distance must be > 0");
  return 41.74 + 29.0 * std::log10(d3d);
}

bool inside_hex_cell(const Eigen::Vector2d& offset, double inter_site_distance) {
  // Cell edges are perpendicular bisectors towards the six neighbours.
  for (double deg : {0.0, 60.0, 120.0}) {
    const double rad = deg * M_PI / 180.0;
    if (std::abs(offset.x() * std::cos(rad) + offset.y() * std::sin(rad)) > inter_site_distance / 2.0) return false;
  }
  return true;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ index) ^ (stream * 0xd1b54a32d192ed03ULL));
}

ChannelSample channel_from_positions(const Scenario& scenario, const Topology& topo,
                                     const Eigen::Matrix2Xd& user_positions, std::uint64_t stream_seed) {
  const int b_count = scenario.num_rrh;
  const auto n_count = user_positions.cols();
  ChannelSample s;
  s.user_positions = user_positions;
  s.beta.resize(b_count, n_count);
  for (int b = 0; b < b_count; ++b) {
    for (Eigen::Index n = 0; n < n_count; ++n) {
      const double horizontal = topo.wrapped_distance(user_positions.col(n), b);
      const double d3d = std::hypot(horizontal, scenario.rrh_height);
      s.beta(b, n) = db_to_linear(-pathloss_db(d3d));
    }
  }
  std::mt19937_64 rng(stream_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  s.H.reserve(b_count);
  for (int b = 0; b < b_count; ++b) {
    Eigen::MatrixXd h(scenario.antennas, n_count);
    // Column-wise fill keeps the draw order independent of Eigen storage.
    for (Eigen::Index n = 0; n < n_count; ++n) {
      const double amp = std::sqrt(s.beta(b, n));
      for (int m = 0; m < scenario.antennas; ++m) h(m, n) = amp * normal(rng);
    }
    s.H.push_back(std::move(h));
  }
  return s;
}

ChannelSet draw_channels(const Scenario& scenario, int n_samples, std::uint64_t seed) {
  scenario.validate();
  if (n_samples < 1) throw Error(ErrorCode::InvalidConfig, "n_samples must be >= 1");
  const Topology topo = build_topology(scenario);
  const double d = scenario.inter_site_distance;
  const double r = d / std::sqrt(3.0);

  ChannelSet set;
  set.scenario = scenario;
  set.seed = seed;
  set.samples.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i), 0));
    std::uniform_real_distribution<double> unif(-r, r);
    Eigen::Matrix2Xd pos(2, scenario.num_users());
    for (int b = 0; b < scenario.num_rrh; ++b) {
      for (int u = 0; u < scenario.users_per_cell; ++u) {
        Eigen::Vector2d off;
        do {
          off = Eigen::Vector2d(unif(rng), unif(rng));
        } while (!inside_hex_cell(off, d));
        pos.col(b * scenario.users_per_cell + u) = topo.sites.col(b) + off;
      }
    }
    set.samples.push_back(channel_from_positions(scenario, topo, pos, derive_seed(seed, i, 1)));
  }
  return set;
}

Clustering cluster_users(const Eigen::MatrixXd& beta, int cluster_size) {
  const auto b_count = beta.rows();
  const auto n_count = beta.cols();
  if (cluster_size < 1 || cluster_size > b_count) {
    throw Error(ErrorCode::InvalidConfig, "cluster_size must be in [1, B]");
  }
  Clustering c;
  c.theta.resize(n_count);
  c.phi.resize(b_count);
  std::vector<int> order(b_count);
  for (Eigen::Index n = 0; n < n_count; ++n) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return beta(x, n) > beta(y, n); });
    c.theta[n].assign(order.begin(), order.begin() + cluster_size);
    for (int b : c.theta[n]) c.phi[b].push_back(static_cast<int>(n));
  }
  return c;
}

ChannelSet inject_csi_error(const ChannelSet& set, double error_variance_dbm, std::uint64_t seed) {
  ChannelSet out = set;
  const double sd = std::sqrt(db_to_linear(error_variance_dbm));
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    std::mt19937_64 rng(derive_seed(seed, i, 2));
    std::normal_distribution<double> normal(0.0, sd);
    for (auto& h : out.samples[i].H) {
      for (Eigen::Index n = 0; n < h.cols(); ++n) {
        for (Eigen::Index m = 0; m < h.rows(); ++m) h(m, n) += normal(rng);
      }
    }
  }
  return out;
}

}  // namespace fhc
