#pragma once

// Private JSON and binary helpers shared by the dataset, checkpoint and
// experiment code.

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "fhc/error.hpp"
#include "fhc/scenario.hpp"

namespace fhc::detail {

using nlohmann::json;

inline json scenario_to_json(const Scenario& s) {
  return json{{"name", s.name},
              {"num_rrh", s.num_rrh},
              {"antennas", s.antennas},
              {"users_per_cell", s.users_per_cell},
              {"compression_dim", s.compression_dim},
              {"cluster_size", s.cluster_size},
              {"inter_site_distance", s.inter_site_distance},
              {"rrh_height", s.rrh_height},
              {"p_ul_dbm", s.p_ul_dbm},
              {"p_dl_dbm", s.p_dl_dbm},
              {"noise_psd_dbm_hz", s.noise_psd_dbm_hz},
              {"bandwidth_hz", s.bandwidth_hz},
              {"sinr_gap_db", s.sinr_gap_db},
              {"carrier_hz", s.carrier_hz},
              {"field", std::string(to_string(s.field))},
              {"wraparound", s.wraparound}};
}

/// Fields missing from `j` keep the values already in `base`.
inline Scenario scenario_from_json(const json& j, Scenario base = {}) {
  Scenario s = std::move(base);
  try {
    if (j.contains("name")) s.name = j.at("name").get<std::string>();
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("num_rrh", s.num_rrh);
    get("antennas", s.antennas);
    get("users_per_cell", s.users_per_cell);
    get("compression_dim", s.compression_dim);
    get("cluster_size", s.cluster_size);
    get("inter_site_distance", s.inter_site_distance);
    get("rrh_height", s.rrh_height);
    get("p_ul_dbm", s.p_ul_dbm);
    get("p_dl_dbm", s.p_dl_dbm);
    get("noise_psd_dbm_hz", s.noise_psd_dbm_hz);
    get("bandwidth_hz", s.bandwidth_hz);
    get("sinr_gap_db", s.sinr_gap_db);
    get("carrier_hz", s.carrier_hz);
    get("wraparound", s.wraparound);
    if (j.contains("field")) s.field = parse_field(j.at("field").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("scenario: ") + e.what());
  }
  return s;
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  os.write(buf, 8);
}

inline double read_f64(std::istream& is) {
  char buf[8];
  if (!is.read(buf, 8)) throw Error(ErrorCode::FormatError, "payload truncated");
  std::uint64_t bits;
  std::memcpy(&bits, buf, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

/// 64-bit FNV-1a, fed one float64 at a time in little-endian byte order.
class Fnv1a {
 public:
  void add(double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h_ ^= (bits >> (8 * i)) & 0xffu;
      h_ *= 0x100000001b3ULL;
    }
  }
  void add(std::string_view s) {
    for (unsigned char c : s) {
      h_ ^= c;
      h_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace fhc::detail
