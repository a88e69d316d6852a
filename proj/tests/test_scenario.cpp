#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "fhc/error.hpp"
#include "fhc/scenario.hpp"
#include "support.hpp"

using namespace fhc;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("fhc_test_" + name);
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an fhc::Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_SUITE("scenario") {

TEST_CASE("presets") {
  const Scenario desk = preset("desk-7cell");
  CHECK(desk.num_rrh == 7);
  CHECK(desk.num_users() == 7);
  CHECK(desk.antennas == 4);
  const Scenario m32 = preset("paper-19cell-M32");
  CHECK(m32.num_users() == 38);
  CHECK(m32.cluster_size == 17);
  CHECK(preset("paper-19cell-M8").antennas == 8);
  CHECK(code_of([] { preset("nope"); }) == ErrorCode::InvalidConfig);
  CHECK(desk.noise_dbm() == doctest::Approx(-95.9897).epsilon(1e-5));
  // Same per-user downlink power as the 19-cell preset.
  CHECK(std::abs(desk.p_dl_dbm - 10 * std::log10(7.0) - (m32.p_dl_dbm - 10 * std::log10(38.0))) < 0.05);
}

TEST_CASE("validate rejects inconsistent scenarios") {
  Scenario s = preset("desk-7cell");
  s.compression_dim = 4;
  CHECK(code_of([&] { s.validate(); }) == ErrorCode::InvalidConfig);
  s = preset("desk-7cell");
  s.cluster_size = 8;
  CHECK_THROWS_AS(s.validate(), Error);
  s = preset("desk-7cell");
  s.field = Field::complex;
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("path loss") {
  CHECK(pathloss_db(1.0) == doctest::Approx(41.74));
  CHECK(pathloss_db(10.0) == doctest::Approx(70.74));
  CHECK(pathloss_db(100.0) - pathloss_db(10.0) == doctest::Approx(29.0));
  CHECK(code_of([] { pathloss_db(0.0); }) == ErrorCode::NonpositiveDistance);
}

TEST_CASE("hexagonal layouts") {
  Scenario s = preset("desk-7cell");
  const Topology t7 = build_topology(s);
  CHECK(t7.sites.cols() == 7);
  for (int b = 1; b < 7; ++b) CHECK(t7.sites.col(b).norm() == doctest::Approx(150.0));

  s.num_rrh = 5;
  CHECK(code_of([&] { build_topology(s); }) == ErrorCode::UnsupportedLayout);
  s.num_rrh = 1;
  CHECK(build_topology(s).sites.cols() == 1);
}

TEST_CASE("wrap-around makes every site see the same neighbourhood") {
  Scenario s = preset("desk-7cell");
  const Topology t7 = build_topology(s);
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j) {
      if (i != j) CHECK(t7.wrapped_distance(t7.sites.col(i), j) == doctest::Approx(150.0));
    }
  }
  s = preset("paper-19cell-M8");
  const Topology t19 = build_topology(s);
  CHECK(t19.sites.cols() == 19);
  for (int i = 0; i < 19; ++i) {
    std::vector<double> dist;
    for (int j = 0; j < 19; ++j) {
      if (j != i) dist.push_back(t19.wrapped_distance(t19.sites.col(i), j) / 150.0);
    }
    std::sort(dist.begin(), dist.end());
    CHECK(dist[0] == doctest::Approx(1.0));
    CHECK(dist[5] == doctest::Approx(1.0));
    CHECK(dist[6] == doctest::Approx(std::sqrt(3.0)));
    CHECK(dist[11] == doctest::Approx(std::sqrt(3.0)));
    CHECK(dist[12] == doctest::Approx(2.0));
    CHECK(dist[17] == doctest::Approx(2.0));
  }
}

TEST_CASE("draws are reproducible and consistent with the path-loss law") {
  const Scenario s = preset("desk-7cell");
  const auto a = test::desk_set(20, 5);
  const auto b = test::desk_set(20, 5);
  const auto c = test::desk_set(20, 6);
  CHECK(dataset_checksum(a) == dataset_checksum(b));
  CHECK(dataset_checksum(a) != dataset_checksum(c));
  const Topology topo = build_topology(s);
  for (const auto& smp : a.samples) {
    for (int n = 0; n < 7; ++n) {
      const Eigen::Vector2d off = smp.user_positions.col(n) - topo.sites.col(n);
      CHECK(inside_hex_cell(off, 150.0));
      for (int bb = 0; bb < 7; ++bb) {
        const double d3 = std::hypot(topo.wrapped_distance(smp.user_positions.col(n), bb), 30.0);
        CHECK(smp.beta(bb, n) == doctest::Approx(std::pow(10.0, -pathloss_db(d3) / 10.0)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("small-scale fading has unit variance relative to beta") {
  const auto set = test::desk_set(400, 9);
  double acc = 0.0;
  long count = 0;
  for (const auto& smp : set.samples) {
    for (int b = 0; b < 7; ++b) {
      for (int n = 0; n < 7; ++n) {
        acc += smp.H[b].col(n).squaredNorm() / smp.beta(b, n);
        count += smp.H[b].rows();
      }
    }
  }
  CHECK(acc / count == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("user-centric clustering") {
  Eigen::MatrixXd beta(3, 2);
  beta << 0.1, 0.5,
          0.3, 0.5,
          0.2, 0.1;
  const Clustering c = cluster_users(beta, 2);
  CHECK(c.theta[0] == std::vector<int>{1, 2});
  CHECK(c.theta[1] == std::vector<int>{0, 1});  // tie keeps index order
  CHECK(c.phi[0] == std::vector<int>{1});
  CHECK(c.phi[1] == std::vector<int>{0, 1});
  CHECK(c.phi[2] == std::vector<int>{0});
  CHECK_THROWS_AS(cluster_users(beta, 4), Error);
}

TEST_CASE("dataset round-trip is bit exact") {
  const auto set = test::desk_set(10, 3);
  const auto path = temp_path("ds.bin");
  save_dataset(path, set);
  const ChannelSet back = load_dataset(path);
  CHECK(back.scenario == set.scenario);
  CHECK(back.seed == set.seed);
  REQUIRE(back.samples.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(back.samples[i].beta == set.samples[i].beta);
    CHECK(back.samples[i].H == set.samples[i].H);
  }
  CHECK(dataset_checksum(back) == dataset_checksum(set));

  // Truncation and trailing garbage are both rejected.
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  CHECK(code_of([&] { load_dataset(path); }) == ErrorCode::FormatError);
  save_dataset(path, set);
  std::ofstream(path, std::ios::app | std::ios::binary) << "xx";
  CHECK(code_of([&] { load_dataset(path); }) == ErrorCode::FormatError);
  CHECK(code_of([] { load_dataset("/nonexistent/ds.bin"); }) == ErrorCode::IoError);
  std::filesystem::remove(path);
}

TEST_CASE("CSI error injection") {
  const auto set = test::desk_set(200, 4);
  const auto noisy = inject_csi_error(set, -100.0, 17);
  double acc = 0.0;
  long count = 0;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    CHECK(noisy.samples[i].beta == set.samples[i].beta);
    for (int b = 0; b < 7; ++b) {
      acc += (noisy.samples[i].H[b] - set.samples[i].H[b]).squaredNorm();
      count += set.samples[i].H[b].size();
    }
  }
  CHECK(acc / count == doctest::Approx(1e-10).epsilon(0.03));
}

}
