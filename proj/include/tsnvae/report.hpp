#pragma once

// Benchmark tables: per-method success rate and final positioning error.

#include "tsnvae/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace tsnvae {

struct BenchmarkRow {
  std::string method;
  std::size_t successes = 0;
  std::size_t trials = 0;
  double mean_error = 0.0;  // m
  double std_error = 0.0;   // m

  double success_rate() const { return trials ? static_cast<double>(successes) / static_cast<double>(trials) : 0.0; }
  friend bool operator==(const BenchmarkRow&, const BenchmarkRow&) = default;
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  std::string config_fingerprint;

  friend bool operator==(const BenchmarkReport&, const BenchmarkReport&) = default;
};

inline BenchmarkRow summarize_trials(std::string method, const std::vector<double>& final_errors, double tol) {
  BenchmarkRow r;
  r.method = std::move(method);
  r.trials = final_errors.size();
  double s = 0.0;
  for (double e : final_errors) {
    s += e;
    if (e <= tol) ++r.successes;
  }
  if (r.trials) r.mean_error = s / static_cast<double>(r.trials);
  double ss = 0.0;
  for (double e : final_errors) ss += (e - r.mean_error) * (e - r.mean_error);
  if (r.trials > 1) r.std_error = std::sqrt(ss / static_cast<double>(r.trials - 1));
  return r;
}

// Success rate descending, then mean error ascending.
inline void sort_rows(std::vector<BenchmarkRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const BenchmarkRow& a, const BenchmarkRow& b) {
    // compare a.successes/a.trials with b.successes/b.trials exactly
    const auto lhs = a.successes * b.trials, rhs = b.successes * a.trials;
    if (lhs != rhs) return lhs > rhs;
    return a.mean_error < b.mean_error;
  });
}

inline std::string format_success(const BenchmarkRow& r) {
  const double pct = r.trials ? 100.0 * static_cast<double>(r.successes) / static_cast<double>(r.trials) : 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.0f%% (%zu/%zu)", pct, r.successes, r.trials);
  return buf;
}

// Millimetres as "mean±std"; errors of 50 mm or more print as "≫50".
inline std::string format_accuracy(const BenchmarkRow& r) {
  const double mean_mm = r.mean_error * 1e3, std_mm = r.std_error * 1e3;
  if (mean_mm >= 50.0) return "≫50";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f±%.1f", mean_mm, std_mm);
  return buf;
}

inline std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

inline std::string format_table(const BenchmarkReport& rep) {
  std::vector<std::array<std::string, 3>> cells{{"Method", "Success rate", "Accuracy [mm]"}};
  for (const auto& r : rep.rows) cells.push_back({r.method, format_success(r), format_accuracy(r)});
  std::array<std::size_t, 3> w{};
  for (const auto& row : cells)
    for (std::size_t c = 0; c < 3; ++c) w[c] = std::max(w[c], display_width(row[c]));
  std::ostringstream os;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      os << cells[i][c] << std::string(w[c] - display_width(cells[i][c]), ' ');
      os << (c + 1 < 3 ? "  " : "\n");
    }
    if (i == 0) os << std::string(w[0] + w[1] + w[2] + 4, '-') << '\n';
  }
  return os.str();
}

inline void to_json(nlohmann::json& j, const BenchmarkRow& r) {
  j = {{"method", r.method},         {"successes", r.successes}, {"trials", r.trials},
       {"mean_error", r.mean_error}, {"std_error", r.std_error}};
}

inline void from_json(const nlohmann::json& j, BenchmarkRow& r) {
  r.method = j.at("method").get<std::string>();
  r.successes = j.at("successes").get<std::size_t>();
  r.trials = j.at("trials").get<std::size_t>();
  r.mean_error = j.at("mean_error").get<double>();
  r.std_error = j.at("std_error").get<double>();
}

inline void to_json(nlohmann::json& j, const BenchmarkReport& r) {
  j = {{"config_fingerprint", r.config_fingerprint}, {"rows", r.rows}};
}

inline void from_json(const nlohmann::json& j, BenchmarkReport& r) {
  r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  r.rows = j.at("rows").get<std::vector<BenchmarkRow>>();
}

// Writes `<stem>.json` and `<stem>.txt`.
inline void export_report(const BenchmarkReport& rep, const std::string& stem) {
  const std::string js = nlohmann::json(rep).dump(2) + "\n";
  const std::string txt = format_table(rep);
  write_file(stem + ".json", std::vector<std::uint8_t>(js.begin(), js.end()));
  write_file(stem + ".txt", std::vector<std::uint8_t>(txt.begin(), txt.end()));
}

}  // namespace tsnvae
