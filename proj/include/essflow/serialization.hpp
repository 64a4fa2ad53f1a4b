#ifndef ESSFLOW_SERIALIZATION_HPP
#define ESSFLOW_SERIALIZATION_HPP

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "essflow/core.hpp"
#include "essflow/ess.hpp"
#include "essflow/multifidelity.hpp"
#include "essflow/oracle.hpp"

namespace essflow {

using Json = nlohmann::ordered_json;

namespace detail {
inline void append_coords(std::string& out, const char* prefix, std::size_t d) {
  for (std::size_t k = 0; k < d; ++k) {
    out += ',';
    out += prefix;
    out += std::to_string(k + 1);
  }
}
inline void append_values(std::string& out, std::span<const double> v) {
  for (double a : v) {
    out += ',';
    out += format_double(a);
  }
}
}  // namespace detail

/// step,z1..zd,x1..xd,log_g
inline std::string sample_csv(const SampleSet& s) {
  std::string out = "step";
  const std::size_t d = s.z.empty() ? 0 : s.z.front().size();
  detail::append_coords(out, "z", d);
  detail::append_coords(out, "x", d);
  out += ",log_g\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s.step_indices[i]);
    detail::append_values(out, s.z[i]);
    detail::append_values(out, s.x[i]);
    out += ',';
    out += format_double(s.log_g[i]);
    out += '\n';
  }
  return out;
}

/// z, coarse x, fine x, raw log-weight, normalized weight.
inline std::string weighted_csv(const WeightedSampleSet& w) {
  std::string out = "index";
  const std::size_t d = w.z.empty() ? 0 : w.z.front().size();
  detail::append_coords(out, "z", d);
  detail::append_coords(out, "coarse_x", d);
  detail::append_coords(out, "fine_x", d);
  out += ",log_weight,weight\n";
  for (std::size_t i = 0; i < w.size(); ++i) {
    out += std::to_string(i);
    detail::append_values(out, w.z[i]);
    detail::append_values(out, w.coarse_x[i]);
    detail::append_values(out, w.fine_x[i]);
    out += ',' + format_double(w.log_weights[i]) + ',' + format_double(w.weights[i]) + '\n';
  }
  return out;
}

/// z1,z2,density at cell centers.
inline std::string grid_csv(const GridPosterior& g) {
  std::string out = "z1,z2,density\n";
  for (std::size_t c = 0; c < g.masses().size(); ++c) {
    const auto ctr = g.grid().center(c);
    out += format_double(ctr[0]) + ',' + format_double(ctr[1]) + ',' +
           format_double(std::exp(g.log_density()[c])) + '\n';
  }
  return out;
}

inline std::string loss_csv(std::span<const double> trace) {
  std::string out = "iteration,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i)
    out += std::to_string(i) + ',' + format_double(trace[i]) + '\n';
  return out;
}

inline Json to_json(const ChainCounters& c) {
  return {{"steps", c.steps},
          {"potential_evaluations", c.potential_evaluations},
          {"shrinks", c.shrinks},
          {"diverged_proposals", c.diverged_proposals},
          {"max_shrinks_in_step", c.max_shrinks_in_step}};
}

inline Json to_json(const ChainConfig& c) {
  return {{"steps", c.steps},         {"burn_in", c.burn_in}, {"thinning", c.thinning},
          {"chains", c.chains},       {"max_shrinks", c.max_shrinks}, {"seed", c.seed}};
}

inline Json to_json(const ChainDiagnostics& d) {
  Json rhat = Json::array();
  for (const auto& r : d.rhat) rhat.push_back(r ? Json(*r) : Json(nullptr));
  return {{"split_rhat", rhat}, {"integrated_autocorrelation_time", d.iat}};
}

/// Writes `content` to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace essflow

#endif  // ESSFLOW_SERIALIZATION_HPP
