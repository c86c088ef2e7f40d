#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "fwm/cli.hpp"

namespace fwm::cli {

namespace {

// A mapping node whose keys must all be consumed; leftovers are typos.
class Block {
public:
  Block(YAML::Node node, std::string prefix) : node_(std::move(node)), prefix_(std::move(prefix)) {
    if (node_.IsDefined() && !node_.IsNull() && !node_.IsMap())
      throw ConfigError(prefix_.empty() ? "config" : prefix_, "expected a mapping");
  }

  std::string key(const std::string& k) const { return prefix_.empty() ? k : prefix_ + "." + k; }

  bool has(const std::string& k) const {
    if (!node_.IsMap()) return false;
    const YAML::Node& cn = node_;
    return static_cast<bool>(cn[k]);
  }

  // Absent keys and explicit nulls both read as "not given".
  std::optional<YAML::Node> raw(const std::string& k) {
    used_.insert(k);
    if (!has(k)) return std::nullopt;
    const YAML::Node& cn = node_;
    const YAML::Node n = cn[k];
    if (n.IsNull()) return std::nullopt;
    return n;
  }

  std::optional<double> num(const std::string& k) {
    const auto n = raw(k);
    if (!n) return std::nullopt;
    double v = 0.0;
    try {
      v = n->as<double>();
    } catch (const YAML::Exception&) {
      throw ConfigError(key(k), "expected a number");
    }
    if (!std::isfinite(v)) throw ConfigError(key(k), "must be finite");
    return v;
  }

  double num(const std::string& k, double fallback) { return num(k).value_or(fallback); }

  std::optional<std::int64_t> integer(const std::string& k) {
    const auto v = num(k);
    if (!v) return std::nullopt;
    if (std::floor(*v) != *v || std::abs(*v) > 9.0e15) throw ConfigError(key(k), "expected an integer");
    return static_cast<std::int64_t>(*v);
  }

  std::optional<std::string> str(const std::string& k) {
    const auto n = raw(k);
    if (!n) return std::nullopt;
    if (!n->IsScalar()) throw ConfigError(key(k), "expected a string");
    return n->Scalar();
  }

  std::optional<bool> boolean(const std::string& k) {
    const auto n = raw(k);
    if (!n) return std::nullopt;
    try {
      return n->as<bool>();
    } catch (const YAML::Exception&) {
      throw ConfigError(key(k), "expected true or false");
    }
  }

  Block child(const std::string& k) { return Block(raw(k).value_or(YAML::Node()), key(k)); }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    if (node_.IsMap())
      for (const auto& kv : node_) out.push_back(kv.first.as<std::string>());
    return out;
  }

  void finish() const {
    for (const auto& k : keys())
      if (!used_.count(k)) throw ConfigError(key(k), "unknown key");
  }

private:
  YAML::Node node_;
  std::string prefix_;
  std::set<std::string> used_;
};

// Drops the "name: " prefix the module exceptions carry.
std::string detail(const std::string& what, const std::string& name) {
  const std::string prefix = name + ": ";
  return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::filesystem::path existing_file(const Block& b, const std::string& k,
                                    const std::filesystem::path& p) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(p, ec))
    throw ConfigError(b.key(k), "input file not found: " + p.string());
  return p;
}

ScanConfig parse_scan(Block b) {
  ScanConfig c;
  auto& p = c.params;
  // Unset couplings and detuning take the near-detuned scan values.
  p.omega_p = mhz_to_rad_per_s(b.num("omega_p_mhz", 350.0));
  p.omega_c = mhz_to_rad_per_s(b.num("omega_c_mhz", 350.0));
  p.delta_1 = mhz_to_rad_per_s(b.num("delta_mhz", 1150.0));
  if (auto v = b.num("lambda_p_nm")) p.lambda_p = *v * 1e-9;
  if (auto v = b.num("lambda_c_nm")) p.lambda_c = *v * 1e-9;
  if (auto v = b.num("gamma_e_mhz")) p.gamma_e = mhz_to_rad_per_s(*v);
  if (auto v = b.num("gamma_t_mhz")) p.gamma_t = mhz_to_rad_per_s(*v);
  if (auto v = b.num("branch_te")) p.branch_te = *v;
  if (auto v = b.num("temperature_c")) c.vapor.temperature = *v + kCelsiusOffset;
  if (auto v = b.num("atomic_mass_amu")) c.vapor.atomic_mass = *v * kAtomicMassUnit;

  const auto delta2 = b.num("two_photon_detuning_mhz");
  const auto target = b.num("resonant_velocity_mps");
  if (delta2 && target)
    throw ConfigError(b.key("resonant_velocity_mps"),
                      "give either two_photon_detuning_mhz or resonant_velocity_mps");

  c.v_min = b.num("velocity_min_mps");
  c.v_max = b.num("velocity_max_mps");
  if (c.v_min.has_value() != c.v_max.has_value())
    throw ConfigError(b.key("velocity_min_mps"), "velocity_min_mps and velocity_max_mps go together");
  if (c.v_min && !(*c.v_min < *c.v_max))
    throw ConfigError(b.key("velocity_max_mps"), "must exceed velocity_min_mps");
  c.points = static_cast<int>(b.integer("points").value_or(2001));
  if (c.points < 1 || c.points > 10'000'000) throw ConfigError(b.key("points"), "must be in [1, 1e7]");
  c.normalize = b.boolean("normalize").value_or(true);
  b.finish();

  try {
    p.validate();
    c.vapor.validate();
  } catch (const atomic::InvalidParameter& e) {
    throw ConfigError(b.key(e.parameter()), detail(e.what(), e.parameter()));
  }
  if (delta2) p.delta_2 = mhz_to_rad_per_s(*delta2);
  if (target) p.delta_2 = two_photon_detuning_for_velocity(*target, p);
  return c;
}

void read_pair_params(Block& b, stream::PairStreamParams& p) {
  if (auto v = b.num("pair_rate")) p.pair_rate = *v;
  if (auto v = b.num("corr_sigma_ps")) p.corr_sigma = *v * 1e-12;
  if (auto v = b.num("eff_signal")) p.eff_signal = *v;
  if (auto v = b.num("eff_idler")) p.eff_idler = *v;
  if (auto v = b.num("jitter_signal_ps")) p.jitter_signal = *v * 1e-12;
  if (auto v = b.num("jitter_idler_ps")) p.jitter_idler = *v * 1e-12;
  if (auto v = b.num("dead_signal_ns")) p.dead_signal = *v * 1e-9;
  if (auto v = b.num("dead_idler_ns")) p.dead_idler = *v * 1e-9;
  if (auto v = b.num("bg_signal")) p.bg_signal = *v;
  if (auto v = b.num("bg_idler")) p.bg_idler = *v;
  if (auto v = b.num("duration_s")) p.duration = *v;
}

void validate_pair_params(const Block& b, const stream::PairStreamParams& p) {
  try {
    p.validate();
  } catch (const stream::InvalidStreamParameter& e) {
    throw ConfigError(b.key(e.parameter()), detail(e.what(), e.parameter()));
  }
}

TagsConfig parse_tags(Block b, std::uint64_t seed) {
  TagsConfig c;
  read_pair_params(b, c.params);
  c.params.seed = seed;
  const std::string fmt = b.str("format").value_or("binary");
  if (fmt != "binary" && fmt != "csv") throw ConfigError(b.key("format"), "must be binary or csv");
  c.csv = fmt == "csv";
  b.finish();
  validate_pair_params(b, c.params);
  return c;
}

void read_histogram_keys(Block& b, std::int64_t& bw, std::int64_t& span, std::int64_t& window) {
  bw = b.integer("bin_width_ps").value_or(bw);
  span = b.integer("span_ps").value_or(span);
  window = b.integer("window_ps").value_or(window);
  if (bw <= 0) throw ConfigError(b.key("bin_width_ps"), "must be positive");
  if (span <= 0 || span % (2 * bw) != 0)
    throw ConfigError(b.key("span_ps"), "must be a positive multiple of twice the bin width");
  if (window <= 0 || window > span / 2) throw ConfigError(b.key("window_ps"), "must be in (0, span/2]");
}

AnalyzeConfig parse_analyze(Block b, const std::filesystem::path& base) {
  AnalyzeConfig c;
  const auto tags = b.str("tags");
  if (!tags) throw ConfigError(b.key("tags"), "required");
  c.tags = existing_file(b, "tags", resolve(base, *tags));
  auto& o = c.options;
  read_histogram_keys(b, o.bin_width_ps, o.span_ps, o.window_ps);
  o.duration = b.num("duration_s", 0.0);
  o.dead_signal = b.num("dead_signal_ns", 0.0) * 1e-9;
  o.dead_idler = b.num("dead_idler_ns", 0.0) * 1e-9;
  o.eff_signal = b.num("eff_signal");
  o.eff_idler = b.num("eff_idler");
  o.jitter_signal = b.num("jitter_signal_ps", 0.0) * 1e-12;
  o.jitter_idler = b.num("jitter_idler_ps", 0.0) * 1e-12;
  b.finish();
  if (o.duration < 0.0) throw ConfigError(b.key("duration_s"), "must be non-negative");
  if (o.dead_signal < 0.0) throw ConfigError(b.key("dead_signal_ns"), "must be non-negative");
  if (o.dead_idler < 0.0) throw ConfigError(b.key("dead_idler_ns"), "must be non-negative");
  for (const auto& [k, v] : {std::pair{"eff_signal", o.eff_signal}, std::pair{"eff_idler", o.eff_idler}})
    if (v && !(*v > 0.0 && *v <= 1.0)) throw ConfigError(b.key(k), "must be in (0, 1]");
  if (o.jitter_signal < 0.0) throw ConfigError(b.key("jitter_signal_ps"), "must be non-negative");
  if (o.jitter_idler < 0.0) throw ConfigError(b.key("jitter_idler_ps"), "must be non-negative");
  return c;
}

TomoConfig parse_tomo(Block b, const std::filesystem::path& base, std::uint64_t seed,
                      unsigned workers) {
  TomoConfig c;
  if (auto path = b.str("counts")) c.counts = existing_file(b, "counts", resolve(base, *path));
  c.state = b.str("state").value_or(c.state);
  c.werner_p = b.num("werner_p", c.werner_p);
  c.phase_rad = b.num("phase_rad", c.phase_rad);
  c.n_per_setting = b.num("n_per_setting", c.n_per_setting);
  c.flux = b.num("flux");
  c.ml.restarts = static_cast<int>(b.integer("restarts").value_or(c.ml.restarts));
  c.ml.likelihood_tolerance = b.num("likelihood_tolerance", c.ml.likelihood_tolerance);
  b.finish();
  if (c.state != "phi_plus" && c.state != "werner" && c.state != "mixed")
    throw ConfigError(b.key("state"), "must be phi_plus, werner or mixed");
  if (!(c.werner_p >= 0.0 && c.werner_p <= 1.0)) throw ConfigError(b.key("werner_p"), "must be in [0, 1]");
  if (!(c.n_per_setting > 0.0)) throw ConfigError(b.key("n_per_setting"), "must be positive");
  if (c.flux && !(*c.flux > 0.0)) throw ConfigError(b.key("flux"), "must be positive");
  if (c.ml.restarts < 1 || c.ml.restarts > 100000) throw ConfigError(b.key("restarts"), "must be in [1, 1e5]");
  if (!(c.ml.likelihood_tolerance >= 0.0))
    throw ConfigError(b.key("likelihood_tolerance"), "must be non-negative");
  c.ml.seed = seed;
  c.ml.workers = workers;
  return c;
}

const std::set<std::string>& sweep_axis_names() {
  static const std::set<std::string> names{
      "pump_mw",        "coupling_mw",    "pair_rate",        "corr_sigma_ps",   "eff_signal",
      "eff_idler",      "jitter_signal_ps", "jitter_idler_ps", "dead_signal_ns", "dead_idler_ns",
      "bg_signal",      "bg_idler",       "duration_s"};
  return names;
}

SweepConfig parse_sweep(Block b, std::uint64_t seed) {
  SweepConfig c;
  {
    Block tags = b.child("tags");
    c.base = parse_tags(std::move(tags), seed);
  }
  {
    Block an = b.child("analyze");
    read_histogram_keys(an, c.bin_width_ps, c.span_ps, c.window_ps);
    c.correct_efficiency = an.boolean("correct_efficiency").value_or(true);
    an.finish();
  }
  c.k_per_mw2 = b.num("k_per_mw2");
  Block grid = b.child("grid");
  for (const auto& name : grid.keys()) {
    if (!sweep_axis_names().count(name)) throw ConfigError(grid.key(name), "not a sweepable parameter");
    const auto n = grid.raw(name);
    if (!n) throw ConfigError(grid.key(name), "empty value list");
    SweepAxis axis{name, {}};
    try {
      if (n->IsSequence())
        for (const auto& v : *n) axis.values.push_back(v.as<double>());
      else
        axis.values.push_back(n->as<double>());
    } catch (const YAML::Exception&) {
      throw ConfigError(grid.key(name), "expected a number or a list of numbers");
    }
    if (axis.values.empty()) throw ConfigError(grid.key(name), "empty value list");
    for (double v : axis.values)
      if (!std::isfinite(v)) throw ConfigError(grid.key(name), "values must be finite");
    c.grid.push_back(std::move(axis));
  }
  b.finish();
  if (c.grid.empty()) throw ConfigError(b.key("grid"), "grid definition is empty");
  std::sort(c.grid.begin(), c.grid.end(), [](const auto& x, const auto& y) { return x.name < y.name; });

  const auto has_axis = [&](const std::string& n) {
    return std::any_of(c.grid.begin(), c.grid.end(), [&](const auto& a) { return a.name == n; });
  };
  const bool power = has_axis("pump_mw") || has_axis("coupling_mw");
  if (power && !(has_axis("pump_mw") && has_axis("coupling_mw")))
    throw ConfigError(b.key("grid"), "pump_mw and coupling_mw must be swept together");
  if (power && has_axis("pair_rate"))
    throw ConfigError(b.key("grid.pair_rate"), "conflicts with the pump_mw x coupling_mw axes");
  if (power && !c.k_per_mw2) throw ConfigError(b.key("k_per_mw2"), "required with power axes");
  if (c.k_per_mw2 && !(*c.k_per_mw2 > 0.0)) throw ConfigError(b.key("k_per_mw2"), "must be positive");

  // Every grid point must also pass the generator checks.
  for (const auto& axis : c.grid)
    for (double v : axis.values) {
      if ((axis.name == "pump_mw" || axis.name == "coupling_mw") && v < 0.0)
        throw ConfigError(b.key("grid." + axis.name), "must be non-negative");
      if (axis.name == "pump_mw" || axis.name == "coupling_mw") continue;
      stream::PairStreamParams p = c.base.params;
      YAML::Node one;
      one[axis.name] = v;
      Block tmp(one, b.key("grid"));
      read_pair_params(tmp, p);
      validate_pair_params(tmp, p);
    }
  return c;
}

}  // namespace

double two_photon_detuning_for_velocity(double v, const atomic::ThreeLevelParams& params) {
  return -params.omega_top() * v / kSpeedOfLight;
}

RunConfig parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir,
                       const Overrides& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("config", std::string("YAML syntax error: ") + e.what());
  }
  if (!root || !root.IsMap()) throw ConfigError("config", "expected a mapping at top level");
  Block top(root, "");

  RunConfig cfg;
  const auto scenario = top.str("scenario");
  if (!scenario) throw ConfigError("scenario", "required");
  cfg.scenario = *scenario;

  if (auto s = top.num("seed")) {
    if (*s < 0 || std::floor(*s) != *s || *s > 1.8e19) throw ConfigError("seed", "expected a non-negative integer");
    const YAML::Node& croot = root;
    try {
      cfg.seed = croot["seed"].as<std::uint64_t>();
    } catch (const YAML::Exception&) {
      cfg.seed = static_cast<std::uint64_t>(*s);
    }
  }
  if (overrides.seed) cfg.seed = *overrides.seed;

  const auto workers = top.integer("workers").value_or(1);
  if (workers < 1 || workers > 1024) throw ConfigError("workers", "must be in [1, 1024]");
  cfg.workers = overrides.workers ? *overrides.workers : static_cast<unsigned>(workers);
  if (cfg.workers < 1) throw ConfigError("workers", "must be at least 1");

  const auto out = top.str("out");
  if (overrides.out_dir) {
    cfg.out_dir = *overrides.out_dir;
  } else if (out) {
    cfg.out_dir = resolve(base_dir, *out);
  } else if (const char* env = std::getenv("FWMSIM_OUT"); env && *env) {
    cfg.out_dir = env;
  } else {
    cfg.out_dir = "fwmsim_out";
  }

  const std::string& s = cfg.scenario;
  for (const auto& k : top.keys())
    if (k != "scenario" && k != "seed" && k != "workers" && k != "out" && k != s)
      throw ConfigError(k, "unknown key (the parameter block must be named '" + s + "')");

  if (s == "scan")
    cfg.body = parse_scan(top.child("scan"));
  else if (s == "tags")
    cfg.body = parse_tags(top.child("tags"), cfg.seed);
  else if (s == "analyze")
    cfg.body = parse_analyze(top.child("analyze"), base_dir);
  else if (s == "tomo")
    cfg.body = parse_tomo(top.child("tomo"), base_dir, cfg.seed, cfg.workers);
  else if (s == "sweep")
    cfg.body = parse_sweep(top.child("sweep"), cfg.seed);
  else
    throw ConfigError("scenario", "must be one of scan, tags, analyze, tomo, sweep");
  top.finish();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.parent_path(), overrides);
}

}  // namespace fwm::cli
