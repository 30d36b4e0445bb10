#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qlmf/core/errors.hpp"
#include "qlmf/dmft/fixed_point.hpp"
#include "qlmf/dmft/stability.hpp"

namespace qlmf {

inline constexpr const char* kCodeVersion = "1.0.0";
inline constexpr const char* kDmftSchema = "dmft-v1";

// 17 significant digits; non-finite values as inf, -inf, nan.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json json_double(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

inline std::string utc_timestamp() {
  std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path);
  out << body;
  if (!out) throw IoError("write failed: " + path);
}

// Joins fields with commas.
inline std::string csv_row(const std::vector<std::string>& fields) {
  std::string s;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) s += ',';
    s += fields[i];
  }
  return s;
}

// ---------------------------------------------------------------------------
// DMFT records.

inline const std::vector<std::string>& dmft_csv_columns() {
  static const std::vector<std::string> cols = {"schema", "p", "gamma", "t", "k", "a", "b", "q",
                                                "chi", "z_crit", "phi", "regime", "residual"};
  return cols;
}

inline std::string dmft_csv_header() { return csv_row(dmft_csv_columns()); }

inline std::string dmft_csv_record(const FixedPointSolution& s) {
  return csv_row({kDmftSchema, std::to_string(s.p), fmt_double(s.gamma), fmt_double(s.t), fmt_double(s.k),
                  fmt_double(s.a), fmt_double(s.b), fmt_double(s.q), fmt_double(s.chi), fmt_double(s.z_crit),
                  fmt_double(s.phi), to_string(s.regime), fmt_double(s.residual)});
}

inline nlohmann::json dmft_json(const FixedPointSolution& s) {
  return {{"schema", kDmftSchema}, {"p", s.p},           {"gamma", s.gamma},
          {"t", s.t},              {"k", s.k},           {"a", s.a},
          {"b", s.b},              {"q", s.q},           {"chi", json_double(s.chi)},
          {"z_crit", json_double(s.z_crit)},             {"phi", s.phi},
          {"regime", to_string(s.regime)},               {"residual", s.residual}};
}

inline FixedPointSolution dmft_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kDmftSchema) throw IoError("expected schema dmft-v1");
  auto num = [&](const char* key, double missing) {
    const auto& v = j.at(key);
    return v.is_null() ? missing : v.get<double>();
  };
  FixedPointSolution s;
  s.p = j.at("p").get<int>();
  s.gamma = j.at("gamma").get<double>();
  s.t = j.at("t").get<double>();
  s.k = j.at("k").get<double>();
  s.a = j.at("a").get<double>();
  s.b = j.at("b").get<double>();
  s.q = j.at("q").get<double>();
  s.chi = num("chi", NAN);
  s.z_crit = num("z_crit", INFINITY);
  s.phi = j.at("phi").get<double>();
  s.regime = j.at("regime").get<std::string>() == "interior" ? Regime::Interior : Regime::Boundary;
  s.residual = j.at("residual").get<double>();
  s.extinction = std::isinf(s.z_crit) ? 0.0 : normal_sf(s.z_crit);
  return s;
}

}  // namespace qlmf
