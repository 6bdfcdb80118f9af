#pragma once

// Run configuration: flat "section.key = value" text, unit suffixes in the
// key names, unknown keys rejected. Built-in presets use the same syntax.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "atomcount/collisions.hpp"
#include "atomcount/detect.hpp"
#include "atomcount/errors.hpp"
#include "atomcount/markov.hpp"
#include "atomcount/pipeline.hpp"
#include "atomcount/trap.hpp"

namespace atomcount {

enum class RateSource { direct, physics };

struct SimSection {
  double duration = 1e5;     // s
  int n0 = 2;
  std::uint64_t seed = 1;
  int ensemble = 1;
  RateSource rates = RateSource::direct;
  // direct chain coefficients; bg rate comes from trap.bg_lifetime_s
  double b1 = 0.007;
  double b2 = 0.0012;
  double target_mean = 2.6;  // > 0: solve the load rate for this <N>
  std::int64_t mc_trials = 200000;
};

struct ShieldSection {
  std::vector<double> temperatures{125e-6, 316e-6, 705e-6};  // K
  double s0_min = 2.0;
  double s0_max = 50.0;
  double s0_step = 1.0;
};

struct ScanSection {
  std::vector<double> s0_values;  // empty: no repump scan
  double duration = 2e4;          // s per point
  double dr0 = 2e-6;              // m, trap-size uncertainty for the volume
};

struct IoSection {
  std::string out_dir = ".";
  std::string events;  // input event log for synth / fit
  std::string trace;   // input trace for detect
};

struct RunConfig {
  TrapConfig trap{.bg_lifetime = 90.0};
  bool depth_from_model = false;
  ChannelSet channels;
  ShieldingParams shielding;
  SimSection sim;
  SynthParams synth;
  DetectOptions detect;
  ShieldSection shield;
  ScanSection scan;
  IoSection io;

  /// Re-check every section; throws ConfigError.
  void validate() const;
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& key, const std::string& why) {
  throw ConfigError("config: " + key + ": " + why);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || p != end || !std::isfinite(x)) config_fail(key, "not a number: '" + v + "'");
  return x;
}

template <class T = std::int64_t>
T parse_int(const std::string& key, const std::string& v) {
  if (std::is_unsigned_v<T> && !v.empty() && v.front() == '-') config_fail(key, "must be >= 0");
  T x = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec == std::errc::result_out_of_range) config_fail(key, "out of range: '" + v + "'");
  if (ec != std::errc() || p != end) config_fail(key, "not an integer: '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  config_fail(key, "not a boolean: '" + v + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_double(key, item));
  }
  return out;
}

inline std::string format_double(double x) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

// after a unit conversion the last digit is noise; 15 digits print 506, not
// 505.99999999999994, and survive a dump/parse cycle unchanged
inline std::string format_converted(double x) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 15);
  return std::string(buf, p);
}

inline std::string format_list(const std::vector<double>& v, double scale) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_converted(v[i] * scale);
  return s;
}

struct KeyBinding {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// field accessors take a mutable config; getters only read through them
// numeric field stored as value * scale
template <class Field>
KeyBinding number(std::string key, Field field, double scale = 1.0) {
  return {key,
          [=](RunConfig& c, const std::string& v) { std::invoke(field, c) = parse_double(key, v) * scale; },
          [=](const RunConfig& c) {
            const double v = std::invoke(field, const_cast<RunConfig&>(c));
            return scale == 1.0 ? format_double(v) : format_converted(v / scale);
          }};
}

template <class Field>
KeyBinding integer(std::string key, Field field) {
  return {key,
          [=](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(std::invoke(field, c))>;
            std::invoke(field, c) = parse_int<T>(key, v);
          },
          [=](const RunConfig& c) { return std::to_string(std::invoke(field, const_cast<RunConfig&>(c))); }};
}

template <class Field>
KeyBinding boolean(std::string key, Field field) {
  return {key, [=](RunConfig& c, const std::string& v) { std::invoke(field, c) = parse_bool(key, v); },
          [=](const RunConfig& c) { return std::string(std::invoke(field, const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

inline const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> table = [] {
    using C = RunConfig;
    std::vector<KeyBinding> t;
    t.push_back(number("trap.detuning_gamma", [](C& c) -> double& { return c.trap.detuning; }));
    t.push_back(number("trap.intensity_mw_cm2", [](C& c) -> double& { return c.trap.intensity_total; },
                       units::kMilliwattPerCm2ToSI));
    t.push_back(number("trap.repump_s0", [](C& c) -> double& { return c.trap.repump_sat; }));
    t.push_back(number("trap.gradient_g_cm", [](C& c) -> double& { return c.trap.gradient; },
                       units::kGaussPerCmToTeslaPerM));
    t.push_back(number("trap.r0_um", [](C& c) -> double& { return c.trap.r0; }, 1e-6));
    t.push_back(number("trap.temperature_uk", [](C& c) -> double& { return c.trap.temperature; }, 1e-6));
    t.push_back(number("trap.depth_min_k", [](C& c) -> double& { return c.trap.depth_min; }));
    t.push_back(boolean("trap.depth_from_model", [](C& c) -> bool& { return c.depth_from_model; }));
    t.push_back(number("trap.depth_anisotropy", [](C& c) -> double& { return c.trap.depth_anisotropy; }));
    t.push_back(number("trap.load_rate_per_s", [](C& c) -> double& { return c.trap.load_rate; }));
    t.push_back(number("trap.bg_lifetime_s", [](C& c) -> double& { return c.trap.bg_lifetime; }));

    t.push_back(number("channels.beta_hcc_cm3_s", [](C& c) -> double& { return c.channels.beta_hcc; }));
    t.push_back(number("channels.beta_re_cm3_s", [](C& c) -> double& { return c.channels.beta_re; }));
    t.push_back(number("channels.beta_fcc_cm3_s", [](C& c) -> double& { return c.channels.beta_fcc; }));
    t.push_back(number("channels.re_energy_scale_k", [](C& c) -> double& { return c.channels.re_energy_scale; }));
    t.push_back(number("channels.depth_jitter", [](C& c) -> double& { return c.channels.depth_jitter; }));
    t.push_back(number("channels.angular_spread_rad", [](C& c) -> double& { return c.channels.angular_spread; }));

    t.push_back(number("shielding.repump_detuning_ghz", [](C& c) -> double& { return c.shielding.repump_detuning; }, 1e9));
    t.push_back({"shielding.c3_au",
                 [](C& c, const std::string& v) {
                   const double au = parse_double("shielding.c3_au", v);
                   if (!(au > 0.0)) config_fail("shielding.c3_au", "must be positive");
                   c.shielding.c3 = units::hartree_bohr3_to_si(au);
                 },
                 [](const C& c) { return format_converted(units::si_to_hartree_bohr3(c.shielding.c3)); }});
    t.push_back(number("shielding.rabi_coeff", [](C& c) -> double& { return c.shielding.rabi_coeff; }));
    t.push_back({"shielding.model",
                 [](C& c, const std::string& v) {
                   if (v == "scaling_law") c.shielding.model = SuppressionModel::scaling_law;
                   else if (v == "landau_zener") c.shielding.model = SuppressionModel::landau_zener;
                   else config_fail("shielding.model", "expected scaling_law or landau_zener, got '" + v + "'");
                 },
                 [](const C& c) {
                   return std::string(c.shielding.model == SuppressionModel::scaling_law ? "scaling_law"
                                                                                         : "landau_zener");
                 }});
    t.push_back({"shielding.temperatures_uk",
                 [](C& c, const std::string& v) {
                   c.shield.temperatures = parse_list("shielding.temperatures_uk", v);
                   for (double& x : c.shield.temperatures) x *= 1e-6;
                 },
                 [](const C& c) { return format_list(c.shield.temperatures, 1e6); }});
    t.push_back(number("shielding.s0_min", [](C& c) -> double& { return c.shield.s0_min; }));
    t.push_back(number("shielding.s0_max", [](C& c) -> double& { return c.shield.s0_max; }));
    t.push_back(number("shielding.s0_step", [](C& c) -> double& { return c.shield.s0_step; }));

    t.push_back(number("sim.duration_s", [](C& c) -> double& { return c.sim.duration; }));
    t.push_back(integer("sim.n0", [](C& c) -> int& { return c.sim.n0; }));
    t.push_back(integer("sim.seed", [](C& c) -> std::uint64_t& { return c.sim.seed; }));
    t.push_back(integer("sim.ensemble", [](C& c) -> int& { return c.sim.ensemble; }));
    t.push_back({"sim.rates",
                 [](C& c, const std::string& v) {
                   if (v == "direct") c.sim.rates = RateSource::direct;
                   else if (v == "physics") c.sim.rates = RateSource::physics;
                   else config_fail("sim.rates", "expected direct or physics, got '" + v + "'");
                 },
                 [](const C& c) { return std::string(c.sim.rates == RateSource::direct ? "direct" : "physics"); }});
    t.push_back(number("sim.b1_per_s", [](C& c) -> double& { return c.sim.b1; }));
    t.push_back(number("sim.b2_per_s", [](C& c) -> double& { return c.sim.b2; }));
    t.push_back(number("sim.target_mean", [](C& c) -> double& { return c.sim.target_mean; }));
    t.push_back(integer("sim.mc_trials", [](C& c) -> std::int64_t& { return c.sim.mc_trials; }));

    t.push_back(number("synth.per_atom_rate_hz", [](C& c) -> double& { return c.synth.per_atom_rate; }));
    t.push_back(number("synth.bg_rate_hz", [](C& c) -> double& { return c.synth.bg_rate; }));
    t.push_back(number("synth.bin_width_ms", [](C& c) -> double& { return c.synth.bin_width; }, 1e-3));

    t.push_back(number("detect.min_snr", [](C& c) -> double& { return c.detect.min_snr; }));
    t.push_back(number("detect.excursion_sigma", [](C& c) -> double& { return c.detect.excursion_sigma; }));
    t.push_back(number("detect.excursion_floor", [](C& c) -> double& { return c.detect.excursion_floor; }));
    t.push_back(number("detect.guard_sigma", [](C& c) -> double& { return c.detect.guard_sigma; }));
    t.push_back(number("detect.split_sigma", [](C& c) -> double& { return c.detect.split_sigma; }));
    t.push_back(number("detect.split_floor", [](C& c) -> double& { return c.detect.split_floor; }));
    t.push_back(boolean("detect.reconstruct_excursions", [](C& c) -> bool& { return c.detect.reconstruct_excursions; }));

    t.push_back({"scan.s0_values",
                 [](C& c, const std::string& v) { c.scan.s0_values = parse_list("scan.s0_values", v); },
                 [](const C& c) { return format_list(c.scan.s0_values, 1.0); }});
    t.push_back(number("scan.duration_s", [](C& c) -> double& { return c.scan.duration; }));
    t.push_back(number("scan.dr0_um", [](C& c) -> double& { return c.scan.dr0; }, 1e-6));

    t.push_back({"io.out_dir", [](C& c, const std::string& v) { c.io.out_dir = v; },
                 [](const C& c) { return c.io.out_dir; }});
    t.push_back({"io.events", [](C& c, const std::string& v) { c.io.events = v; },
                 [](const C& c) { return c.io.events; }});
    t.push_back({"io.trace", [](C& c, const std::string& v) { c.io.trace = v; },
                 [](const C& c) { return c.io.trace; }});
    return t;
  }();
  return table;
}

}  // namespace detail

/// Parse "key = value" lines; '#' starts a comment. Duplicate keys within one
/// text are an error.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text,
                                                                          const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::map<std::string, int> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError("config: " + where + ": expected key = value");
    std::string key = detail::trim(std::string_view(body).substr(0, eq));
    std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("config: " + where + ": empty key");
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh)
      throw ConfigError("config: " + where + ": duplicate key " + key + " (first on line " +
                        std::to_string(it->second) + ")");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& b : detail::bindings()) {
    if (b.key == key) {
      b.set(cfg, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

inline void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin) {
  for (const auto& [k, v] : parse_config_text(text, origin)) apply_setting(cfg, k, v);
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path);
}

/// Every key with its current value, one "key = value" per line.
inline std::string dump_config(const RunConfig& cfg) {
  std::string s;
  for (const auto& b : detail::bindings()) s += b.key + " = " + b.get(cfg) + "\n";
  return s;
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& b : detail::bindings()) k.push_back(b.key);
  return k;
}

// Presets. fig4a-c differ in the cooling-light saturation (0.87, 1.74, 5.19 at
// -3.35 gamma with I_S = 1.1 mW/cm^2) and the cloud temperature that A(T)
// = 4.2, 9.2, 16.9 implies.
inline const std::map<std::string, std::string>& presets() {
  static const std::map<std::string, std::string> p{
      {"fig2",
       "# <N> = 2.6 operating point for counting statistics\n"
       "sim.rates = direct\n"
       "sim.duration_s = 100000\n"
       "sim.n0 = 2\n"
       "sim.target_mean = 2.6\n"
       "sim.b1_per_s = 0.007\n"
       "sim.b2_per_s = 0.0012\n"
       "trap.bg_lifetime_s = 90\n"
       "synth.per_atom_rate_hz = 10000\n"
       "synth.bg_rate_hz = 500\n"
       "synth.bin_width_ms = 100\n"},
      {"fig4a",
       "# repump scan, s = 0.87\n"
       "sim.rates = physics\n"
       "sim.target_mean = 0\n"
       "trap.intensity_mw_cm2 = 43.92\n"
       "trap.temperature_uk = 316\n"
       "trap.r0_um = 10\n"
       "trap.bg_lifetime_s = 50\n"
       "trap.load_rate_per_s = 0.1\n"
       "scan.s0_values = 0,1,2,3,4,6,8,10,12,16,20,25,30\n"
       "scan.duration_s = 20000\n"
       "sim.mc_trials = 100000\n"},
      {"fig4b",
       "# repump scan, s = 1.74\n"
       "sim.rates = physics\n"
       "sim.target_mean = 0\n"
       "trap.intensity_mw_cm2 = 87.83\n"
       "trap.temperature_uk = 506\n"
       "trap.r0_um = 10\n"
       "trap.bg_lifetime_s = 50\n"
       "trap.load_rate_per_s = 0.1\n"
       "scan.s0_values = 0,1,2,3,4,6,8,10,12,16,20,25,30\n"
       "scan.duration_s = 20000\n"
       "sim.mc_trials = 100000\n"},
      {"fig4c",
       "# repump scan, s = 5.19\n"
       "sim.rates = physics\n"
       "sim.target_mean = 0\n"
       "trap.intensity_mw_cm2 = 262.0\n"
       "trap.temperature_uk = 705\n"
       "trap.r0_um = 10\n"
       "trap.bg_lifetime_s = 50\n"
       "trap.load_rate_per_s = 0.1\n"
       "scan.s0_values = 0,1,2,3,4,6,8,10,12,16,20,25,30\n"
       "scan.duration_s = 20000\n"
       "sim.mc_trials = 100000\n"},
  };
  return p;
}

inline void apply_preset(RunConfig& cfg, const std::string& name) {
  const auto& p = presets();
  auto it = p.find(name);
  if (it == p.end()) throw ConfigError("config: unknown preset '" + name + "'");
  apply_config_text(cfg, it->second, "preset " + name);
}

inline void RunConfig::validate() const {
  auto wrap = [](auto&& f) {
    try {
      f();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  };
  wrap([&] { trap.validate(); });
  wrap([&] { channels.validate(); });
  wrap([&] { shielding.validate(); });
  auto need = [](bool ok, const std::string& key, const std::string& why) {
    if (!ok) detail::config_fail(key, why);
  };
  need(sim.duration > 0.0, "sim.duration_s", "must be positive");
  need(sim.n0 >= 0, "sim.n0", "must be >= 0");
  need(sim.ensemble >= 1, "sim.ensemble", "must be >= 1");
  need(sim.b1 >= 0.0, "sim.b1_per_s", "must be >= 0");
  need(sim.b2 >= 0.0, "sim.b2_per_s", "must be >= 0");
  need(sim.target_mean >= 0.0, "sim.target_mean", "must be >= 0");
  need(sim.mc_trials > 0, "sim.mc_trials", "must be positive");
  need(synth.per_atom_rate > 0.0, "synth.per_atom_rate_hz", "must be positive");
  need(synth.bg_rate >= 0.0, "synth.bg_rate_hz", "must be >= 0");
  need(synth.bin_width > 0.0, "synth.bin_width_ms", "must be positive");
  need(detect.min_snr >= 0.0, "detect.min_snr", "must be >= 0");
  need(detect.excursion_sigma > 0.0, "detect.excursion_sigma", "must be positive");
  need(detect.guard_sigma >= 0.0, "detect.guard_sigma", "must be >= 0");
  need(detect.split_sigma > 0.0, "detect.split_sigma", "must be positive");
  need(!shield.temperatures.empty(), "shielding.temperatures_uk", "needs at least one value");
  for (double t : shield.temperatures) need(t > 0.0, "shielding.temperatures_uk", "must be positive");
  need(shield.s0_step > 0.0, "shielding.s0_step", "must be positive");
  need(shield.s0_min >= 0.0 && shield.s0_max > shield.s0_min, "shielding.s0_max",
       "needs 0 <= s0_min < s0_max");
  for (double s : scan.s0_values) need(s >= 0.0, "scan.s0_values", "must be >= 0");
  need(scan.duration > 0.0, "scan.duration_s", "must be positive");
  need(scan.dr0 >= 0.0, "scan.dr0_um", "must be >= 0");
  need(!io.out_dir.empty(), "io.out_dir", "must not be empty");
}

/// Trap with the depth taken from the closed-form model when requested.
inline TrapConfig effective_trap(const RunConfig& cfg) {
  TrapConfig t = cfg.trap;
  if (cfg.depth_from_model) t.depth_min = model_depth_min(t);
  return t;
}

/// Chain rates for a configuration; `seed` drives the outcome Monte Carlo.
inline RateModel rate_model(const RunConfig& cfg, std::uint64_t seed) {
  RateModel m;
  const TrapConfig trap = effective_trap(cfg);
  if (cfg.sim.rates == RateSource::direct) {
    m = {trap.load_rate, 1.0 / trap.bg_lifetime, cfg.sim.b1, cfg.sim.b2};
  } else {
    const EffectiveBetas betas = effective_betas(trap, cfg.channels, cfg.shielding,
                                                 stage_seed(seed, Stage::channels), cfg.sim.mc_trials);
    m = rate_model_from(trap, betas);
  }
  if (cfg.sim.target_mean > 0.0) m.load_rate = load_rate_for_mean(m, cfg.sim.target_mean);
  return m;
}

}  // namespace atomcount
