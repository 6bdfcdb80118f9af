// atomcount: simulate, synthesize, detect and fit few-atom trap counting data.

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include <cstdio>
#include <filesystem>
#include <future>
#include <iostream>
#include <string>
#include <vector>

#include "atomcount/config.hpp"
#include "atomcount/csv_io.hpp"
#include "atomcount/pipeline.hpp"

namespace fs = std::filesystem;
using namespace atomcount;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3, kDetection = 4 };

struct Flags {
  std::string config;
  std::string preset;
  std::vector<std::string> set;
  std::string out_dir;
  std::string seed;
};

RunConfig load(const Flags& f) {
  RunConfig cfg;
  if (!f.preset.empty()) apply_preset(cfg, f.preset);
  if (!f.config.empty()) apply_config_file(cfg, f.config);
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (!f.seed.empty()) apply_setting(cfg, "sim.seed", f.seed);
  if (!f.out_dir.empty()) cfg.io.out_dir = f.out_dir;
  cfg.validate();
  return cfg;
}

fs::path out(const RunConfig& cfg, const std::string& name) { return fs::path(cfg.io.out_dir) / name; }

void save(const RunConfig& cfg, const std::string& name, const std::string& content) {
  write_file_atomic(out(cfg, name), content);
  std::cout << "wrote " << out(cfg, name).string() << "\n";
}

void save_config(const RunConfig& cfg) { write_file_atomic(out(cfg, "config_used.cfg"), dump_config(cfg)); }

EventLog simulate_from(const RunConfig& cfg, const RateModel& m) {
  return simulate(m, cfg.sim.n0, cfg.sim.duration, stage_seed(cfg.sim.seed, Stage::simulate));
}

void print_model(const RateModel& m) {
  std::printf("rates: R = %.6g /s, tau = %.6g s, b1 = %.6g /s, b2 = %.6g /s (beta2/V = %.6g /s)\n",
              m.load_rate, 1.0 / m.bg_rate, m.b1, m.b2, 2.0 * m.b2);
}

int cmd_simulate(const RunConfig& cfg) {
  const RateModel m = rate_model(cfg, cfg.sim.seed);
  print_model(m);
  const EventLog log = simulate_from(cfg, m);
  const EventRateTable t = tabulate(log);
  std::printf("events: %zu (load %zu, loss1 %zu, loss2 %zu), <N> = %.4f\n", log.events.size(),
              log.count(EventKind::load), log.count(EventKind::loss1), log.count(EventKind::loss2),
              t.mean_n());
  save(cfg, "events.csv", event_log_csv(log));
  return kOk;
}

int cmd_synth(const RunConfig& cfg) {
  EventLog log;
  if (!cfg.io.events.empty()) {
    log = read_event_log(cfg.io.events);
  } else {
    log = simulate_from(cfg, rate_model(cfg, cfg.sim.seed));
    save(cfg, "events.csv", event_log_csv(log));
  }
  const FluorescenceTrace tr = synthesize(log, cfg.synth.per_atom_rate, cfg.synth.bg_rate, cfg.synth.bin_width,
                                          stage_seed(cfg.sim.seed, Stage::synthesize));
  std::printf("bins: %zu, level SNR at N = 1: %.3g\n", tr.counts.size(),
              level_snr(tr.per_atom_rate, tr.bg_rate, tr.bin_width, 1));
  save(cfg, "trace.csv", trace_csv(tr));
  return kOk;
}

int cmd_detect(const RunConfig& cfg) {
  const std::string path = cfg.io.trace.empty() ? out(cfg, "trace.csv").string() : cfg.io.trace;
  const FluorescenceTrace tr = read_trace(path);
  const Calibration cal = calibrate(tr);
  const Detection d = detect(tr, cal, cfg.detect);
  std::printf("calibration: %.6g counts/s per atom, bg %.6g counts/s (%d levels)\n", cal.per_atom_rate,
              cal.bg_rate, cal.levels);
  std::printf("detected: %zu events (load %zu, loss1 %zu, loss2 %zu), SNR %.3g, ambiguous %zu\n",
              d.log.events.size(), d.log.count(EventKind::load), d.log.count(EventKind::loss1),
              d.log.count(EventKind::loss2), d.report.snr, d.report.ambiguous());
  save(cfg, "detected_events.csv", event_log_csv(d.log));
  save(cfg, "detection_report.csv", detection_report_csv(cal, d.report));
  return kOk;
}

std::string fit_report(const FitResult& f, const EventRateTable& t, const RateModel* truth) {
  std::string s = fit_report_csv(fit_rows(f, truth), f.chi2, f.dof);
  try {
    const QuadraticCheck q = fit_loss2_with_linear_term(t);
    s = "# loss2_linear_term_per_s = " + detail::fmt(q.linear.value) + " +- " + detail::fmt(q.linear.error) +
        "\n" + s;
  } catch (const NumericalError&) {
    // too few populated rows for the three-term check
  }
  return s;
}

void print_fit(const FitResult& f, const RateModel* truth) {
  for (const auto& r : fit_rows(f, truth)) {
    if (truth)
      std::printf("  %-13s %12.6g +- %-11.4g injected %-12.6g pull %+.2f\n", r.name.c_str(), r.recovered.value,
                  r.recovered.error, r.injected, r.recovered.pull(r.injected));
    else
      std::printf("  %-13s %12.6g +- %.4g %s\n", r.name.c_str(), r.recovered.value, r.recovered.error,
                  r.unit.c_str());
  }
}

int cmd_fit(const RunConfig& cfg) {
  const std::string path = cfg.io.events.empty() ? out(cfg, "detected_events.csv").string() : cfg.io.events;
  const EventLog log = read_event_log(path);
  const EventRateTable t = tabulate(log);
  const FitResult f = fit_rates(t);
  std::printf("<N> = %.4f over %.6g s, chi2/dof = %.4g/%d\n", t.mean_n(), t.duration, f.chi2, f.dof);
  print_fit(f, nullptr);
  save(cfg, "rate_table.csv", rate_table_csv(t));
  save(cfg, "fit_report.csv", fit_report(f, t, nullptr));
  return kOk;
}

// The curve is always the Landau-Zener thermal average; A_formula is the
// scaling law it is compared against.
int cmd_shield(const RunConfig& cfg) {
  ShieldingParams p = cfg.shielding;
  p.model = SuppressionModel::landau_zener;
  const std::vector<double> grid = s0_grid(cfg.shield.s0_min, cfg.shield.s0_max, cfg.shield.s0_step);
  std::vector<double> a_fits(cfg.shield.temperatures.size());
  std::vector<std::future<std::string>> jobs;
  for (std::size_t i = 0; i < cfg.shield.temperatures.size(); ++i) {
    jobs.push_back(std::async(std::launch::async, [&, i] {
      const double t = cfg.shield.temperatures[i];
      std::vector<double> ps;
      for (double s : grid) ps.push_back(suppression_ratio(s, t, p));
      const double a_fit = fit_decay_constant(grid, ps);
      const double a_law = scaling_constant(t);
      a_fits[i] = a_fit;
      std::string rows = detail::fmt(t * 1e6) + ",0,1," + detail::fmt(a_fit) + ',' + detail::fmt(a_law) + '\n';
      for (std::size_t j = 0; j < grid.size(); ++j) {
        if (grid[j] == 0.0) continue;
        rows += detail::fmt(t * 1e6) + ',' + detail::fmt(grid[j]) + ',' + detail::fmt(ps[j]) + ',' +
                detail::fmt(a_fit) + ',' + detail::fmt(a_law) + '\n';
      }
      return rows;
    }));
  }
  std::string s = "T_uK,s0,P_HCC,A_fitted,A_formula\n";
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const std::string rows = jobs[i].get();
    s += rows;
    const double t = cfg.shield.temperatures[i];
    std::printf("T = %6.1f uK: A_fitted = %.4g, A_formula = %.4g\n", t * 1e6, a_fits[i], scaling_constant(t));
  }
  save(cfg, "shield.csv", s);
  return kOk;
}

int cmd_scan(const RunConfig& cfg) {
  const TrapConfig trap = effective_trap(cfg);
  const auto pts = repump_scan(trap, cfg.channels, cfg.shielding, cfg.scan.s0_values, cfg.scan.duration,
                               cfg.sim.seed, cfg.sim.mc_trials);
  const SuppressionFit f = fit_repump_decay(pts);
  const Estimate beta = extrapolate_beta_hcc_r0(f, trap.r0, cfg.scan.dr0);
  std::string s = "s0,beta2_over_v_per_s,sigma_per_s,model_per_s\n";
  for (const auto& p : pts)
    s += detail::fmt(p.s0) + ',' + detail::fmt(p.rate) + ',' + detail::fmt(p.sigma) + ',' +
         detail::fmt(f.model(p.s0)) + '\n';
  save(cfg, "repump_scan.csv", s);
  std::string r = "# chi2 = " + detail::fmt(f.chi2) + "\n# dof = " + std::to_string(f.dof) + "\n";
  r += "parameter,unit,value,error\n";
  r += "offset,1/s," + detail::fmt(f.offset.value) + ',' + detail::fmt(f.offset.error) + '\n';
  r += "amplitude,1/s," + detail::fmt(f.amplitude.value) + ',' + detail::fmt(f.amplitude.error) + '\n';
  r += "decay_constant,1," + detail::fmt(f.decay.value) + ',' + detail::fmt(f.decay.error) + '\n';
  r += "temperature,uK," + detail::fmt(f.temperature.value * 1e6) + ',' + detail::fmt(f.temperature.error * 1e6) + '\n';
  r += "beta_hcc,cm3/s," + detail::fmt(beta.value) + ',' + detail::fmt(beta.error) + '\n';
  save(cfg, "repump_fit.csv", r);
  std::printf("A = %.3f +- %.3f, T = %.0f +- %.0f uK, beta_HCC = %.3g +- %.2g cm^3/s (injected %.3g)\n",
              f.decay.value, f.decay.error, f.temperature.value * 1e6, f.temperature.error * 1e6, beta.value,
              beta.error, cfg.channels.beta_hcc);
  return kOk;
}

std::uint64_t member_seed(std::uint64_t seed, int k) {
  return k == 0 ? seed : stream_seed(seed, 0x1000u + static_cast<std::uint64_t>(k));
}

int cmd_pipeline(const RunConfig& cfg) {
  if (!cfg.scan.s0_values.empty()) return cmd_scan(cfg);
  const RateModel m = rate_model(cfg, cfg.sim.seed);
  print_model(m);
  std::vector<std::future<Recovery>> jobs;
  for (int k = 0; k < cfg.sim.ensemble; ++k)
    jobs.push_back(std::async(std::launch::async, [&, k] {
      return closed_loop(m, cfg.sim.n0, cfg.sim.duration, cfg.synth, member_seed(cfg.sim.seed, k), cfg.detect);
    }));
  std::vector<Recovery> runs;
  for (auto& j : jobs) runs.push_back(j.get());  // first failure propagates

  std::string s = "member,seed,parameter,unit,injected,recovered,error,pull\n";
  std::string q = "member,true_events,detected_events,snr,spikes_suppressed,excursions,split_pairs,ambiguous,"
                  "misclassification_estimate,fit_chi2,fit_dof\n";
  bool within = true;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const Recovery& r = runs[k];
    const std::string head = std::to_string(k) + ',' + std::to_string(member_seed(cfg.sim.seed, static_cast<int>(k)));
    for (const auto& row : fit_rows(r.fit, &m)) {
      const double pull = row.recovered.pull(row.injected);
      within = within && std::abs(pull) < 3.0;
      s += head + ',' + row.name + ',' + row.unit + ',' + detail::fmt(row.injected) + ',' +
           detail::fmt(row.recovered.value) + ',' + detail::fmt(row.recovered.error) + ',' + detail::fmt(pull) + '\n';
    }
    const auto& rep = r.detection.report;
    q += std::to_string(k) + ',' + std::to_string(r.truth.events.size()) + ',' +
         std::to_string(r.detection.log.events.size()) + ',' + detail::fmt(rep.snr) + ',' +
         std::to_string(rep.spikes_suppressed) + ',' + std::to_string(rep.excursions) + ',' +
         std::to_string(rep.split_pairs) + ',' + std::to_string(rep.ambiguous()) + ',' +
         detail::fmt(rep.misclassification_estimate) + ',' + detail::fmt(r.fit.chi2) + ',' +
         std::to_string(r.fit.dof) + '\n';
  }
  const Recovery& first = runs.front();
  std::printf("member 0: %zu true events, %zu detected, <N> = %.4f\n", first.truth.events.size(),
              first.detection.log.events.size(), first.table.mean_n());
  print_fit(first.fit, &m);
  std::printf("all pulls below 3 sigma: %s\n", within ? "yes" : "no");
  save(cfg, "events.csv", event_log_csv(first.truth));
  save(cfg, "trace.csv", trace_csv(first.trace));
  save(cfg, "detected_events.csv", event_log_csv(first.detection.log));
  save(cfg, "detection_report.csv", detection_report_csv(first.calibration, first.detection.report));
  save(cfg, "rate_table.csv", rate_table_csv(first.table));
  save(cfg, "fit_report.csv", fit_report(first.fit, first.table, &m));
  save(cfg, "pipeline_report.csv", s);
  save(cfg, "pipeline_quality.csv", q);
  return kOk;
}

int cmd_oracle(const RunConfig& cfg) {
  const RateModel m = rate_model(cfg, cfg.sim.seed);
  print_model(m);
  const StationaryResult st = master_stationary(m);
  std::printf("stationary <N> = %.6g (n_max %d, boundary mass %.2g)\n", mean_of(st.p), st.n_max,
              st.boundary_mass);
  save(cfg, "stationary.csv", stationary_csv(st, m));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-atom trap counting: simulation, synthetic fluorescence, step detection and rate fits"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags flags;
  app.add_option("--config", flags.config, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--preset", flags.preset, "built-in preset applied before --config")
      ->check(CLI::IsMember({"fig2", "fig4a", "fig4b", "fig4c"}));
  app.add_option("--seed", flags.seed, "top-level seed, 0 to 2^64-1 (overrides sim.seed)");
  app.add_option("--out-dir", flags.out_dir, "output directory (overrides io.out_dir)");
  app.add_option("--set", flags.set, "extra key=value settings, applied last");

  using Cmd = int (*)(const RunConfig&);
  const std::vector<std::tuple<std::string, std::string, Cmd>> cmds{
      {"simulate", "simulate the atom-number chain and write events.csv", cmd_simulate},
      {"synth", "synthesize a binned fluorescence trace (trace.csv)", cmd_synth},
      {"detect", "calibrate and detect events in a trace", cmd_detect},
      {"fit", "tabulate per-N event rates and fit R, tau, beta1/V, beta2/V", cmd_fit},
      {"shield", "suppression curves P_HCC(s0) and decay constants", cmd_shield},
      {"pipeline", "closed-loop recovery, or the repump scan when scan.s0_values is set", cmd_pipeline},
      {"oracle", "stationary distribution and expected event rates from the master equation", cmd_oracle},
  };
  Cmd chosen = nullptr;
  for (const auto& [name, help, fn] : cmds) {
    auto* sub = app.add_subcommand(name, help);
    sub->callback([&chosen, f = fn] { chosen = f; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const RunConfig cfg = load(flags);
    save_config(cfg);
    return chosen(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const DetectionError& e) {
    std::cerr << "detection failure: " << e.what() << "\n";
    return kDetection;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
