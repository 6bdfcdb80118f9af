#pragma once

// CSV tables. Metadata rides in leading "# key = value" lines, then one header
// row whose column names carry units. Files are written whole: to a temporary
// sibling first, then renamed over the target.

#include <atomic>
#include <charconv>
#include <cmath>
#include <limits>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "atomcount/detect.hpp"
#include "atomcount/errors.hpp"
#include "atomcount/fit.hpp"
#include "atomcount/markov.hpp"
#include "atomcount/trace.hpp"

namespace atomcount {

/// Replace `path` with `content` atomically within its directory.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot rename onto " + path.string() + ": " + ec.message());
  }
}

namespace detail {

// shortest text that reads back to the same double
inline std::string fmt(double x) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

struct CsvDoc {
  std::map<std::string, std::string> meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::string trim_cell(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim_cell(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvDoc read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  CsvDoc doc;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq != std::string::npos)
        doc.meta[trim_cell(line.substr(1, eq - 1))] = trim_cell(line.substr(eq + 1));
      continue;
    }
    if (doc.header.empty()) doc.header = split_csv_line(line);
    else doc.rows.push_back(split_csv_line(line));
  }
  return doc;
}

inline double cell_double(const std::string& s, const std::string& where) {
  double x = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error(where + ": bad number '" + s + "'");
  return x;
}

inline std::int64_t cell_int(const std::string& s, const std::string& where) {
  std::int64_t x = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error(where + ": bad integer '" + s + "'");
  return x;
}

inline std::uint64_t cell_uint(const std::string& s, const std::string& where) {
  std::uint64_t x = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error(where + ": bad seed '" + s + "'");
  return x;
}

inline void expect_header(const CsvDoc& doc, const std::vector<std::string>& cols, const std::string& path) {
  if (doc.header != cols) throw std::runtime_error(path + ": unexpected columns");
  for (const auto& r : doc.rows)
    if (r.size() != cols.size()) throw std::runtime_error(path + ": ragged row");
}

inline const std::string& meta_at(const CsvDoc& doc, const std::string& key, const std::string& path) {
  auto it = doc.meta.find(key);
  if (it == doc.meta.end()) throw std::runtime_error(path + ": missing '# " + key + "' line");
  return it->second;
}

}  // namespace detail

// ---- event log

inline std::string event_log_csv(const EventLog& log) {
  std::string s;
  s += "# duration_s = " + detail::fmt(log.duration) + "\n";
  s += "# seed = " + std::to_string(log.seed) + "\n";
  s += "# n0 = " + std::to_string(log.n0) + "\n";
  s += "time_s,kind,n_before,n_after\n";
  for (const auto& e : log.events) {
    s += detail::fmt(e.time);
    s += ',';
    s += to_string(e.kind);
    s += ',' + std::to_string(e.n_before) + ',' + std::to_string(e.n_after()) + '\n';
  }
  return s;
}

inline EventLog read_event_log(const std::string& path) {
  const auto doc = detail::read_csv(path);
  detail::expect_header(doc, {"time_s", "kind", "n_before", "n_after"}, path);
  EventLog log;
  log.duration = detail::cell_double(detail::meta_at(doc, "duration_s", path), path);
  log.seed = detail::cell_uint(detail::meta_at(doc, "seed", path), path);
  log.n0 = static_cast<int>(detail::cell_int(detail::meta_at(doc, "n0", path), path));
  for (const auto& r : doc.rows) {
    Event e;
    e.time = detail::cell_double(r[0], path);
    if (r[1] == "load") e.kind = EventKind::load;
    else if (r[1] == "loss1") e.kind = EventKind::loss1;
    else if (r[1] == "loss2") e.kind = EventKind::loss2;
    else throw std::runtime_error(path + ": unknown event kind '" + r[1] + "'");
    e.n_before = static_cast<int>(detail::cell_int(r[2], path));
    if (e.n_after() != detail::cell_int(r[3], path)) throw std::runtime_error(path + ": n_after inconsistent");
    log.events.push_back(e);
  }
  try {
    log.check();
  } catch (const std::logic_error& err) {
    throw std::runtime_error(path + ": " + err.what());
  }
  return log;
}

// ---- fluorescence trace

inline std::string trace_csv(const FluorescenceTrace& tr) {
  std::string s;
  s += "# per_atom_rate_hz = " + detail::fmt(tr.per_atom_rate) + "\n";
  s += "# bg_rate_hz = " + detail::fmt(tr.bg_rate) + "\n";
  s += "# bin_width_s = " + detail::fmt(tr.bin_width) + "\n";
  s += "# seed = " + std::to_string(tr.seed) + "\n";
  s += "t_start_s,counts\n";
  for (std::size_t i = 0; i < tr.counts.size(); ++i)
    s += detail::fmt(tr.bin_start(i)) + ',' + std::to_string(tr.counts[i]) + '\n';
  return s;
}

inline FluorescenceTrace read_trace(const std::string& path) {
  const auto doc = detail::read_csv(path);
  detail::expect_header(doc, {"t_start_s", "counts"}, path);
  FluorescenceTrace tr;
  tr.per_atom_rate = detail::cell_double(detail::meta_at(doc, "per_atom_rate_hz", path), path);
  tr.bg_rate = detail::cell_double(detail::meta_at(doc, "bg_rate_hz", path), path);
  tr.bin_width = detail::cell_double(detail::meta_at(doc, "bin_width_s", path), path);
  tr.seed = detail::cell_uint(detail::meta_at(doc, "seed", path), path);
  if (!(tr.bin_width > 0.0)) throw std::runtime_error(path + ": bin width must be positive");
  tr.counts.reserve(doc.rows.size());
  for (const auto& r : doc.rows) {
    const auto c = detail::cell_int(r[1], path);
    if (c < 0) throw std::runtime_error(path + ": negative count");
    tr.counts.push_back(c);
  }
  return tr;
}

// ---- rate table and fit

inline std::string rate_table_csv(const EventRateTable& t) {
  std::string s = "# duration_s = " + detail::fmt(t.duration) + "\n";
  s += "n,occupancy_s,n_load,n_loss1,n_loss2,load_rate_per_s,load_err_per_s,loss1_rate_per_s,"
       "loss1_err_per_s,loss2_rate_per_s,loss2_err_per_s\n";
  for (const auto& r : t.rows) {
    if (r.occupancy <= 0.0) continue;
    s += std::to_string(r.n) + ',' + detail::fmt(r.occupancy) + ',' + std::to_string(r.n_load) + ',' +
         std::to_string(r.n_loss1) + ',' + std::to_string(r.n_loss2) + ',' + detail::fmt(r.load_rate()) +
         ',' + detail::fmt(r.load_error()) + ',' + detail::fmt(r.loss1_rate()) + ',' +
         detail::fmt(r.loss1_error()) + ',' + detail::fmt(r.loss2_rate()) + ',' +
         detail::fmt(r.loss2_error()) + '\n';
  }
  return s;
}

/// One fitted parameter; `injected` is NaN when unknown.
struct ReportRow {
  std::string name;
  std::string unit;
  double injected;
  Estimate recovered;
};

inline std::vector<ReportRow> fit_rows(const FitResult& f, const RateModel* truth = nullptr) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {
      {"load_rate", "1/s", truth ? truth->load_rate : nan, f.load_rate},
      {"bg_lifetime", "s", truth ? 1.0 / truth->bg_rate : nan, f.bg_lifetime},
      {"beta1_over_v", "1/s", truth ? truth->b1 : nan, f.b1},
      {"beta2_over_v", "1/s", truth ? 2.0 * truth->b2 : nan, f.beta2_over_v},
      {"beta_over_v", "1/s", truth ? truth->b1 + 2.0 * truth->b2 : nan, f.beta_total_over_v},
  };
}

inline std::string fit_report_csv(const std::vector<ReportRow>& rows, double chi2, int dof) {
  std::string s = "# chi2 = " + detail::fmt(chi2) + "\n# dof = " + std::to_string(dof) + "\n";
  s += "parameter,unit,injected,recovered,error,pull\n";
  for (const auto& r : rows) {
    const double pull = std::isnan(r.injected) ? r.injected : r.recovered.pull(r.injected);
    s += r.name + ',' + r.unit + ',' + detail::fmt(r.injected) + ',' + detail::fmt(r.recovered.value) + ',' +
         detail::fmt(r.recovered.error) + ',' + detail::fmt(pull) + '\n';
  }
  return s;
}

// ---- stationary distribution

inline std::string stationary_csv(const StationaryResult& st, const RateModel& m) {
  std::string s = "# n_max = " + std::to_string(st.n_max) + "\n";
  s += "# boundary_mass = " + detail::fmt(st.boundary_mass) + "\n";
  s += "n,probability,load_rate_per_s,loss1_rate_per_s,loss2_rate_per_s\n";
  for (const auto& r : expected_event_rates(st.p, m))
    s += std::to_string(r.n) + ',' + detail::fmt(r.probability) + ',' + detail::fmt(r.load) + ',' +
         detail::fmt(r.loss1) + ',' + detail::fmt(r.loss2) + '\n';
  return s;
}

// ---- detection quality

inline std::string detection_report_csv(const Calibration& cal, const DetectionReport& rep) {
  std::string s = "metric,value\n";
  auto row = [&](const std::string& k, double v) { s += k + ',' + detail::fmt(v) + '\n'; };
  row("per_atom_rate_hz", cal.per_atom_rate);
  row("per_atom_rate_err_hz", cal.per_atom_rate_err);
  row("bg_rate_hz", cal.bg_rate);
  row("bg_rate_err_hz", cal.bg_rate_err);
  row("calibration_levels", cal.levels);
  row("bins", static_cast<double>(rep.bins));
  row("max_level", rep.max_level);
  row("snr", rep.snr);
  row("spikes_suppressed", static_cast<double>(rep.spikes_suppressed));
  row("merged_transitions", static_cast<double>(rep.merged_transitions));
  row("multi_step", static_cast<double>(rep.multi_step));
  row("excursions", static_cast<double>(rep.excursions));
  row("split_pairs", static_cast<double>(rep.split_pairs));
  row("ambiguous", static_cast<double>(rep.ambiguous()));
  row("misclassification_estimate", rep.misclassification_estimate);
  return s;
}

}  // namespace atomcount
