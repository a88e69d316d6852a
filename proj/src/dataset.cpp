#include <fstream>
#include <string>

#include "fhc/scenario.hpp"
#include "json_io.hpp"

namespace fhc {

namespace {

template <typename Sink>
void visit_payload(const ChannelSample& s, Sink&& sink) {
  for (Eigen::Index b = 0; b < s.beta.rows(); ++b)
    for (Eigen::Index n = 0; n < s.beta.cols(); ++n) sink(s.beta(b, n));
  for (const auto& h : s.H)
    for (Eigen::Index m = 0; m < h.rows(); ++m)
      for (Eigen::Index n = 0; n < h.cols(); ++n) sink(h(m, n));
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const ChannelSet& set) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  detail::json header{{"format", "fhc-dataset"},
                      {"version", kDatasetFormatVersion},
                      {"field", std::string(to_string(set.scenario.field))},
                      {"seed", set.seed},
                      {"samples", set.samples.size()},
                      {"scenario", detail::scenario_to_json(set.scenario)}};
  os << header.dump() << '\n';
  for (const auto& s : set.samples) visit_payload(s, [&](double v) { detail::write_f64(os, v); });
  if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

ChannelSet load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::FormatError, "missing header in " + path.string());
  detail::json header;
  try {
    header = detail::json::parse(line);
  } catch (const detail::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("bad dataset header: ") + e.what());
  }
  if (header.value("format", "") != "fhc-dataset") throw Error(ErrorCode::FormatError, "not a dataset file");
  if (header.value("version", 0) != kDatasetFormatVersion) {
    throw Error(ErrorCode::FormatError, "unsupported dataset version");
  }
  ChannelSet set;
  set.scenario = detail::scenario_from_json(header.at("scenario"));
  set.seed = header.at("seed").get<std::uint64_t>();
  const auto count = header.at("samples").get<std::size_t>();
  const int b_count = set.scenario.num_rrh;
  const int n_count = set.scenario.num_users();
  const int m_count = set.scenario.antennas;
  set.samples.resize(count);
  for (auto& s : set.samples) {
    s.beta.resize(b_count, n_count);
    for (int b = 0; b < b_count; ++b)
      for (int n = 0; n < n_count; ++n) s.beta(b, n) = detail::read_f64(is);
    s.H.assign(b_count, Eigen::MatrixXd(m_count, n_count));
    for (auto& h : s.H)
      for (int m = 0; m < m_count; ++m)
        for (int n = 0; n < n_count; ++n) h(m, n) = detail::read_f64(is);
  }
  if (is.peek() != std::ifstream::traits_type::eof()) {
    throw Error(ErrorCode::FormatError, "trailing bytes after payload");
  }
  return set;
}

std::uint64_t dataset_checksum(const ChannelSet& set) {
  detail::Fnv1a h;
  for (const auto& s : set.samples) visit_payload(s, [&](double v) { h.add(v); });
  return h.value();
}

}  // namespace fhc
