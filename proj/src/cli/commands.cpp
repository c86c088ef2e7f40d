#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "fwm/cli.hpp"

namespace fwm::cli {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + cfg.out_dir.string() + ": " + ec.message());
  return cfg.out_dir;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); }

std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

double ghz(double rad_per_s) { return rad_per_s / kTwoPi / 1e9; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

json analysis_json(const stream::AnalysisReport& r) {
  json j;
  j["duration_s"] = r.duration;
  j["singles_signal"] = r.singles_signal;
  j["singles_idler"] = r.singles_idler;
  j["rate_signal"] = r.rate_signal;
  j["rate_idler"] = r.rate_idler;
  j["coincidences"] = r.coincidences;
  j["accidentals"] = r.accidentals;
  j["coincidence_rate"] = r.coincidence_rate;
  j["corrected_coincidence_rate"] = opt(r.corrected_coincidence_rate);
  j["pair_rate_estimate"] = opt(r.pair_rate_estimate);
  j["gsi_peak"] = opt(r.gsi_peak);
  j["gsi_peak_delay_ps"] = opt(r.gsi_peak_delay_ps);
  j["heralding"] = opt(r.heralding);
  j["heralding_corrected"] = opt(r.heralding_corrected);
  j["linewidth_rad_per_s"] = opt(r.linewidth);
  j["linewidth_ghz"] = r.linewidth ? json(ghz(*r.linewidth)) : json(nullptr);
  j["linewidth_status"] = r.linewidth_status;
  return j;
}

std::string histogram_csv(const stream::CoincidenceHistogram& h) {
  std::string s = "delay_ps,counts\n";
  for (std::size_t k = 0; k < h.counts.size(); ++k)
    s += fmt::format("{},{}\n", h.delays_ps[k], h.counts[k]);
  return s;
}

std::string gsi_csv(const stream::CoincidenceHistogram& h) {
  std::string s = "delay_ps,gsi\n";
  if (h.singles_signal == 0 || h.singles_idler == 0 || !(h.duration > 0.0)) return s;
  const auto g = stream::gsi_from_histogram(h);
  for (std::size_t k = 0; k < g.g.size(); ++k) s += fmt::format("{},{}\n", g.delays_ps[k], g.g[k]);
  return s;
}

struct SweepPoint {
  std::vector<double> coords;
  stream::PairStreamParams params;
};

void apply_axis(stream::PairStreamParams& p, const std::string& name, double v) {
  if (name == "pair_rate") p.pair_rate = v;
  else if (name == "corr_sigma_ps") p.corr_sigma = v * 1e-12;
  else if (name == "eff_signal") p.eff_signal = v;
  else if (name == "eff_idler") p.eff_idler = v;
  else if (name == "jitter_signal_ps") p.jitter_signal = v * 1e-12;
  else if (name == "jitter_idler_ps") p.jitter_idler = v * 1e-12;
  else if (name == "dead_signal_ns") p.dead_signal = v * 1e-9;
  else if (name == "dead_idler_ns") p.dead_idler = v * 1e-9;
  else if (name == "bg_signal") p.bg_signal = v;
  else if (name == "bg_idler") p.bg_idler = v;
  else if (name == "duration_s") p.duration = v;
}

std::vector<SweepPoint> expand_grid(const SweepConfig& c, std::uint64_t seed) {
  std::vector<std::vector<double>> values;
  for (const auto& axis : c.grid) {
    auto v = axis.values;
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    values.push_back(std::move(v));
  }
  std::vector<SweepPoint> points;
  std::vector<std::size_t> idx(values.size(), 0);
  for (;;) {
    SweepPoint pt{{}, c.base.params};
    double pump = 0.0, coupling = 0.0;
    bool power = false;
    for (std::size_t a = 0; a < values.size(); ++a) {
      const double v = values[a][idx[a]];
      pt.coords.push_back(v);
      const auto& name = c.grid[a].name;
      if (name == "pump_mw") pump = v, power = true;
      else if (name == "coupling_mw") coupling = v, power = true;
      else apply_axis(pt.params, name, v);
    }
    if (power) pt.params.pair_rate = *c.k_per_mw2 * pump * coupling;
    pt.params.seed = splitmix64(seed ^ splitmix64(points.size()));
    points.push_back(std::move(pt));

    // Odometer with the last axis fastest: lexicographic order.
    std::size_t a = values.size();
    while (a > 0) {
      --a;
      if (++idx[a] < values[a].size()) break;
      idx[a] = 0;
      if (a == 0) return points;
    }
    if (values.empty()) return points;
  }
}

struct SweepRow {
  std::optional<stream::AnalysisReport> report;
  std::string status = "ok";
  int code = kOk;
};

SweepRow run_point(const SweepConfig& c, const stream::PairStreamParams& p) {
  SweepRow row;
  try {
    const auto [sig, idl] = stream::synthesize_time_tags(p);
    stream::AnalysisOptions o;
    o.bin_width_ps = c.bin_width_ps;
    o.span_ps = c.span_ps;
    o.window_ps = c.window_ps;
    o.duration = p.duration;
    o.dead_signal = p.dead_signal;
    o.dead_idler = p.dead_idler;
    o.jitter_signal = p.jitter_signal;
    o.jitter_idler = p.jitter_idler;
    if (c.correct_efficiency) {
      o.eff_signal = p.eff_signal;
      o.eff_idler = p.eff_idler;
    }
    row.report = stream::analyze(sig, idl, o);
  } catch (...) {
    row.code = exit_code_for(std::current_exception());
    try {
      throw;
    } catch (const std::exception& e) {
      row.status = "error: " + sanitize(e.what());
    } catch (...) {
      row.status = "error: unknown";
    }
  }
  return row;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) mx += std::log(x[i]), my += std::log(y[i]);
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace

void cmd_scan(const RunConfig& cfg, std::ostream& log) {
  const auto& c = std::get<ScanConfig>(cfg.body);
  const auto grid = c.v_min ? atomic::linear_grid(*c.v_min, *c.v_max, c.points)
                            : atomic::default_velocity_grid(c.vapor, c.points);
  const auto profile = atomic::velocity_scan(c.params, c.vapor, grid, {c.normalize, cfg.workers});

  const auto out = prepare_out(cfg);
  std::string csv = "velocity_mps,raw,weighted\n";
  for (std::size_t i = 0; i < grid.size(); ++i)
    csv += fmt::format("{},{},{}\n", profile.velocities[i], profile.raw[i], profile.weighted[i]);
  write_text(out / "scan_profile.csv", csv);

  const double peak = profile.velocities[atomic::argmax(profile.weighted)];
  const double raw_peak = profile.velocities[atomic::argmax(profile.raw)];
  const double resonance = atomic::resonant_velocity(c.params.delta_2, c.params);
  json j;
  j["omega_p_mhz"] = rad_per_s_to_mhz(c.params.omega_p);
  j["omega_c_mhz"] = rad_per_s_to_mhz(c.params.omega_c);
  j["delta_mhz"] = rad_per_s_to_mhz(c.params.delta_1);
  j["two_photon_detuning_mhz"] = rad_per_s_to_mhz(c.params.delta_2);
  j["temperature_c"] = c.vapor.temperature - kCelsiusOffset;
  j["points"] = grid.size();
  j["grid_step_mps"] = grid.size() > 1 ? grid[1] - grid[0] : 0.0;
  j["normalized"] = profile.normalized;
  j["peak_velocity_mps"] = peak;
  j["raw_peak_velocity_mps"] = raw_peak;
  j["resonant_velocity_mps"] = resonance;
  j["single_photon_resonance_mps"] = -c.params.delta_1 / c.params.pump_wavenumber();
  j["sigma_velocity_mps"] = c.vapor.sigma_velocity();
  try {
    j["mb_overlap"] = atomic::profile_mb_overlap(profile, c.vapor);
  } catch (const atomic::DegenerateProfile&) {
    j["mb_overlap"] = nullptr;
  }
  write_json(out / "scan_summary.json", j);
  log << fmt::format("scan: {} points, weighted peak {:.2f} m/s, resonance {:.2f} m/s\n",
                     grid.size(), peak, resonance);
}

void cmd_tags(const RunConfig& cfg, std::ostream& log) {
  const auto& c = std::get<TagsConfig>(cfg.body);
  const auto [sig, idl] = stream::synthesize_time_tags(c.params);
  const auto out = prepare_out(cfg);
  const std::string name = c.csv ? "tags.csv" : "tags.bin";
  stream::write_tags((out / name).string(), sig, idl);

  const double d = c.params.duration;
  json j;
  j["file"] = name;
  j["seed"] = c.params.seed;
  j["duration_s"] = d;
  j["pair_rate"] = c.params.pair_rate;
  j["singles_signal"] = sig.size();
  j["singles_idler"] = idl.size();
  j["rate_signal"] = static_cast<double>(sig.size()) / d;
  j["rate_idler"] = static_cast<double>(idl.size()) / d;
  write_json(out / "tags_summary.json", j);
  log << fmt::format("tags: signal {:.6g} /s, idler {:.6g} /s\n", static_cast<double>(sig.size()) / d,
                     static_cast<double>(idl.size()) / d);
}

void cmd_analyze(const RunConfig& cfg, std::ostream& log) {
  const auto& c = std::get<AnalyzeConfig>(cfg.body);
  const auto [sig, idl] = stream::read_tags(c.tags.string());
  const auto report = stream::analyze(sig, idl, c.options);

  const auto out = prepare_out(cfg);
  write_text(out / "histogram.csv", histogram_csv(report.histogram));
  write_text(out / "gsi.csv", gsi_csv(report.histogram));
  write_json(out / "analysis.json", analysis_json(report));
  log << fmt::format("analyze: {} coincidences, g_si peak {}, heralding {}\n", report.coincidences,
                     report.gsi_peak ? fmt::format("{:.4g}", *report.gsi_peak) : "n/a",
                     report.heralding ? fmt::format("{:.4f}", *report.heralding) : "n/a");
}

void cmd_tomo(const RunConfig& cfg, std::ostream& log) {
  const auto& c = std::get<TomoConfig>(cfg.body);
  const auto out = prepare_out(cfg);
  tomo::TomographyCounts counts;
  if (c.counts) {
    counts = tomo::read_counts_csv(c.counts->string());
  } else {
    const tomo::DensityMatrix4 truth = c.state == "phi_plus" ? tomo::bell_phi_plus()
                                       : c.state == "werner" ? tomo::werner_state(c.werner_p)
                                                             : tomo::maximally_mixed();
    const auto settings = tomo::default_settings();
    counts = tomo::simulate_counts(tomo::apply_phase_retarder(truth, c.phase_rad), settings,
                                   c.n_per_setting, cfg.seed);
    tomo::write_counts_csv((out / "tomo_counts.csv").string(), counts);
  }
  if (c.flux) counts.flux = c.flux;

  const auto result = tomo::ml_reconstruct(counts, c.ml);
  write_text(out / "tomo_result.txt", tomo::format_result(result));
  std::string csv = "restart,solver,converged,log_likelihood,fidelity_phi_plus,iterations\n";
  for (const auto& r : result.outcomes)
    csv += fmt::format("{},{},{},{},{},{}\n", r.index, r.solver, r.converged ? 1 : 0,
                       r.log_likelihood, r.fidelity_phi_plus, r.iterations);
  write_text(out / "tomo_restarts.csv", csv);
  log << fmt::format("tomo: fidelity {:.4f}, lower bound {:.4f}, purity {:.4f} ({}/{} restarts converged)\n",
                     result.fidelity_phi_plus, result.fidelity_lower_bound, result.purity,
                     result.converged, result.restarts);
}

int cmd_sweep(const RunConfig& cfg, std::ostream& log) {
  const auto& c = std::get<SweepConfig>(cfg.body);
  const auto points = expand_grid(c, cfg.seed);
  std::vector<SweepRow> rows(points.size());

  const auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < points.size(); i += stride) rows[i] = run_point(c, points[i].params);
  };
  const std::size_t workers = std::clamp<std::size_t>(cfg.workers, 1, points.size());
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }

  const auto out = prepare_out(cfg);
  std::string csv = "point";
  for (const auto& a : c.grid) csv += "," + a.name;
  csv += ",pair_rate,seed,singles_signal,singles_idler,rate_signal,rate_idler,coincidences,"
         "accidentals,coincidence_rate,corrected_coincidence_rate,pair_rate_estimate,"
         "dead_time_correction,gsi_peak,gsi_peak_delay_ps,heralding,heralding_corrected,"
         "linewidth_ghz,linewidth_status,status\n";

  int code = kOk;
  std::size_t failed = 0;
  std::vector<stream::PowerPoint> power;
  std::vector<stream::GsiRatePoint> gsi_points;
  const bool has_power = c.k_per_mw2.has_value() &&
                         std::any_of(c.grid.begin(), c.grid.end(), [](const auto& a) { return a.name == "pump_mw"; });
  const auto axis_index = [&](const std::string& name) {
    return static_cast<std::size_t>(
        std::find_if(c.grid.begin(), c.grid.end(), [&](const auto& a) { return a.name == name; }) -
        c.grid.begin());
  };
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& pt = points[i];
    const auto& row = rows[i];
    csv += fmt::format("{}", i);
    for (double v : pt.coords) csv += fmt::format(",{}", v);
    csv += fmt::format(",{},{}", pt.params.pair_rate, pt.params.seed);
    if (row.report) {
      const auto& r = *row.report;
      std::optional<double> dtc;
      if (r.corrected_coincidence_rate && r.coincidence_rate > 0.0)
        dtc = *r.corrected_coincidence_rate / r.coincidence_rate;
      csv += fmt::format(",{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}", r.singles_signal,
                         r.singles_idler, r.rate_signal, r.rate_idler, r.coincidences, r.accidentals,
                         r.coincidence_rate, cell(r.corrected_coincidence_rate),
                         cell(r.pair_rate_estimate), cell(dtc), cell(r.gsi_peak),
                         cell(r.gsi_peak_delay_ps), cell(r.heralding), cell(r.heralding_corrected),
                         r.linewidth ? fmt::format("{}", ghz(*r.linewidth)) : "",
                         sanitize(r.linewidth_status));
      if (has_power) {
        const auto rate = r.pair_rate_estimate ? r.pair_rate_estimate : r.corrected_coincidence_rate;
        if (rate && dtc)
          power.push_back({pt.coords[axis_index("pump_mw")], pt.coords[axis_index("coupling_mw")], *rate, *dtc});
      }
      if (r.gsi_peak && r.coincidence_rate > 0.0) gsi_points.push_back({r.coincidence_rate, *r.gsi_peak});
    } else {
      csv += std::string(16, ',');
      ++failed;
      if (code == kOk) code = row.code;
    }
    csv += "," + row.status + "\n";
  }
  write_text(out / "sweep.csv", csv);

  json j;
  j["points"] = points.size();
  j["failed"] = failed;
  if (has_power) {
    try {
      const auto fit = stream::fit_power_scaling(power);
      j["power_fit"] = {{"k_per_mw2", fit.k}, {"residual", fit.residual}, {"used", fit.used}};
    } catch (const std::exception& e) {
      j["power_fit"] = {{"error", e.what()}};
    }
  }
  if (gsi_points.size() >= 2) {
    std::vector<double> x, y;
    for (const auto& g : gsi_points) x.push_back(g.coincidence_rate), y.push_back(g.gsi_peak);
    j["gsi_loglog_slope"] = loglog_slope(x, y);
    try {
      const auto fit = stream::fit_gsi_vs_rate(gsi_points);
      j["gsi_rate_fit"] = {{"a", fit.a},
                           {"tau_eff_s", fit.tau_eff},
                           {"rms_relative", fit.rms_relative},
                           {"inverse_rms_relative", fit.inverse_rms_relative},
                           {"diverged", fit.diverged}};
    } catch (const std::exception& e) {
      j["gsi_rate_fit"] = {{"error", e.what()}};
    }
  }
  write_json(out / "sweep_summary.json", j);
  log << fmt::format("sweep: {} points, {} failed\n", points.size(), failed);
  return code;
}

int exit_code_for(std::exception_ptr e) {
  try {
    std::rethrow_exception(e);
  } catch (const stream::CapacityExceeded&) {
    return kCapacity;
  } catch (const stream::UnsortedStream&) {
    return kUnsorted;
  } catch (const tomo::OptimizerFailed&) {
    return kOptimizer;
  } catch (const atomic::NoUniqueSteadyState&) {
    return kSolver;
  } catch (const atomic::DegenerateProfile&) {
    return kSolver;
  } catch (const tomo::InvalidCounts&) {
    return kValidation;
  } catch (const stream::StreamError&) {
    return kValidation;
  } catch (const std::invalid_argument&) {
    return kValidation;
  } catch (const std::domain_error&) {
    return kValidation;
  } catch (...) {
    return kUsage;
  }
}

int run(const RunConfig& cfg, std::ostream& log, std::ostream& err) {
  try {
    if (cfg.scenario == "scan") cmd_scan(cfg, log);
    else if (cfg.scenario == "tags") cmd_tags(cfg, log);
    else if (cfg.scenario == "analyze") cmd_analyze(cfg, log);
    else if (cfg.scenario == "tomo") cmd_tomo(cfg, log);
    else if (cfg.scenario == "sweep") {
      const int code = cmd_sweep(cfg, log);
      if (code != kOk) err << "error: one or more sweep points failed; see the status column\n";
      return code;
    } else {
      err << "error: unknown scenario '" << cfg.scenario << "'\n";
      return kValidation;
    }
  } catch (const atomic::NoUniqueSteadyState& e) {
    err << fmt::format("error: {} (velocity {} m/s)\n", e.what(), e.velocity());
    return kSolver;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(std::current_exception());
  }
  return kOk;
}

}  // namespace fwm::cli
