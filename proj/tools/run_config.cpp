#include "run_config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace qpdnls::cli {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& what) { fail(ErrorCode::ConfigError, what); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_error(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) config_error("unknown key '" + where + "." + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error("bad value for '" + where + "." + key + "': " + e.what());
  }
}

std::vector<double> read_grid(const json& j, const std::string& where) {
  // Either an explicit list or {"from", "to", "count"} (log-spaced when "log": true).
  if (j.is_array()) {
    std::vector<double> v;
    for (const auto& x : j) {
      if (!x.is_number()) config_error(where + " entries must be numbers");
      v.push_back(x.get<double>());
    }
    return v;
  }
  check_keys(j, where, {"from", "to", "count", "log"});
  double from = 0.0, to = 0.0;
  int count = 0;
  bool log = false;
  read(j, "from", from, where);
  read(j, "to", to, where);
  read(j, "count", count, where);
  read(j, "log", log, where);
  if (count < 1) config_error(where + ".count must be >= 1");
  if (log && (from <= 0.0 || to <= 0.0)) config_error(where + " log grid needs positive ends");
  std::vector<double> v(count);
  for (int k = 0; k < count; ++k) {
    const double s = count == 1 ? 0.0 : double(k) / (count - 1);
    v[k] = log ? std::exp(std::log(from) + s * (std::log(to) - std::log(from))) : from + s * (to - from);
  }
  return v;
}

}  // namespace

Potential PotentialConfig::build(const LatticeGrid& grid) const {
  if (kind == "zero") return Potential::zero(grid);
  if (kind == "two_spike") return Potential::two_spike(grid, c1, c2, d);
  return Potential::from_sites(grid, sites);
}

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) config_error(what);
  };
  need(potential.kind == "two_spike" || potential.kind == "sites" || potential.kind == "zero",
       "potential.kind must be two_spike, sites or zero");
  need(std::isfinite(potential.c1) && std::isfinite(potential.c2), "potential values must be finite");
  need(N >= 10 && N <= 200000, "grid.N must lie in [10, 200000]");
  const int reach = std::max(N, evolve.grid_N);
  need(std::abs(potential.d) < N, "potential.d must lie inside the grid");
  for (const auto& [site, value] : potential.sites) {
    need(std::abs(site) < N, "potential site " + std::to_string(site) + " outside the grid");
    need(std::isfinite(value), "potential values must be finite");
  }
  need(potential.kind != "sites" || !potential.sites.empty(), "potential.sites is empty");
  need(a > 0.0 && a <= 2.0, "weights.a must lie in (0, 2]");
  need(sigma > 0.5 && sigma <= 10.0, "weights.sigma must lie in (0.5, 10]");
  need(r >= 0.0 && r < 1.0, "weights.r must lie in [0, 1) (0 picks it from the amplitudes)");
  need(m_max >= 1 && m_max <= 40, "qp.m_max must lie in [1, 40]");
  need(qp_tol > 0.0 && qp_tol < 1e-3, "qp.tol must lie in (0, 1e-3)");
  need(qp_max_iter >= 1 && qp_max_iter <= 10000, "qp.max_iter must lie in [1, 10000]");
  need(delta_min > 0.0 && delta_min < 1.0, "qp.delta_min must lie in (0, 1)");
  need(band_margin >= 0.0 && band_margin < 1.0, "spectrum.band_margin must lie in [0, 1)");
  need(power >= 1 && power <= 6, "power must lie in [1, 6]");
  need(rho1 >= 0.0 && rho2 >= 0.0 && rho1 <= 1.0 && rho2 <= 1.0, "amplitudes must lie in [0, 1]");
  need(std::isfinite(phase1) && std::isfinite(phase2), "phases must be finite");
  for (double x : sweep_rho1) need(x >= 0.0 && x <= 1.0, "sweep.rho1 entries must lie in [0, 1]");
  for (double x : sweep_rho2) need(x >= 0.0 && x <= 1.0, "sweep.rho2 entries must lie in [0, 1]");

  const auto& e = evolve;
  need(e.experiment == "persistence" || e.experiment == "stability" || e.experiment == "orbital",
       "evolution.experiment must be persistence, stability or orbital");
  need(e.scheme == "strang" || e.scheme == "rk4", "evolution.scheme must be strang or rk4");
  need(e.linear == "chebyshev" || e.linear == "eigenbasis", "evolution.linear must be chebyshev or eigenbasis");
  need(e.dt > 0.0 && e.dt <= 1.0, "evolution.dt must lie in (0, 1]");
  need(e.T > 0.0 && e.T / e.dt <= 1e9, "evolution.T must be positive and at most 1e9 steps");
  need(e.record_stride >= 1, "evolution.record_stride must be >= 1");
  need(e.grid_N >= N && e.grid_N <= 200000, "evolution.grid_N must lie in [grid.N, 200000]");
  need(e.perturbation >= 0.0 && e.perturbation < 1.0, "evolution.perturbation must lie in [0, 1)");
  need(e.orbital_j == 1 || e.orbital_j == 2, "evolution.orbital_j must be 1 or 2");
  need(e.blowup_bound > 0.0, "evolution.blowup_bound must be positive");
  need(e.linear != "eigenbasis" || reach <= 3000, "evolution.linear = eigenbasis is limited to grids with N <= 3000");

  need(decay.N >= 10 && decay.N <= 5000, "decay.N must lie in [10, 5000] (dense eigenbasis)");
  need(decay.t_min > 0.0 && decay.t_max > decay.t_min, "decay window must satisfy 0 < t_min < t_max");
  need(decay.t_max < decay.N / 2.0, "decay.t_max must stay below N/2 (radiation reaches the boundary)");
  need(decay.samples >= 3, "decay.samples must be >= 3");
}

QPOptions RunConfig::qp_options() const {
  QPOptions o;
  o.m_max = m_max;
  o.a = a;
  o.r = r;
  o.tol = qp_tol;
  o.max_iter = qp_max_iter;
  o.power = power;
  o.delta_min = delta_min;
  o.bound.power = power;
  return o;
}

ModulationOptions RunConfig::modulation_options() const {
  ModulationOptions o;
  o.qp = qp_options();
  return o;
}

EvolutionConfig RunConfig::evolution_config() const {
  EvolutionConfig c;
  c.dt = evolve.dt;
  c.T = evolve.T;
  c.power = power;
  c.scheme = evolve.scheme == "rk4" ? Scheme::RK4 : Scheme::Strang;
  c.linear = evolve.linear == "eigenbasis" ? LinearMethod::Eigenbasis : LinearMethod::Chebyshev;
  c.record_stride = evolve.record_stride;
  c.sigma = sigma;
  c.seed = seed;
  c.blowup_bound = evolve.blowup_bound;
  return c;
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  auto& e = cfg.evolve;
  if (name == "persistence") {
    cfg.N = 200;
    cfg.rho1 = cfg.rho2 = 0.1;
    e = EvolveConfig{};
    e.experiment = "persistence";
    e.dt = 1e-3;
    e.T = 50.0;
    e.record_stride = 100;
    e.grid_N = 200;
  } else if (name == "stability") {
    // N = 2200: the band's group speed is at most 2, so radiation reflected at
    // the boundary cannot reach the bound states before T = 2000.
    cfg.N = 200;
    cfg.rho1 = cfg.rho2 = 0.1;
    e = EvolveConfig{};
    e.experiment = "stability";
    e.dt = 0.02;
    e.T = 2000.0;
    e.record_stride = 500;
    e.grid_N = 2200;
    e.perturbation = 1e-3;
    e.baseline = true;
  } else if (name == "orbital") {
    cfg.N = 200;
    cfg.rho1 = 0.0;
    cfg.rho2 = 0.1;
    e = EvolveConfig{};
    e.experiment = "orbital";
    e.orbital_j = 2;
    e.dt = 0.02;
    e.T = 1000.0;
    e.record_stride = 50;
    e.grid_N = 1200;
    e.perturbation = 1e-3;
  } else {
    config_error("unknown preset '" + name + "' (persistence, stability or orbital)");
  }
}

RunConfig parse_config(const json& j, const RunConfig& defaults) {
  RunConfig c = defaults;
  check_keys(j, "config", {"schema_version", "potential", "grid", "weights", "qp", "spectrum", "power", "amplitudes",
                           "sweep", "evolution", "decay", "seed"});
  if (j.contains("schema_version")) {
    int v = 0;
    read(j, "schema_version", v, "config");
    if (v != kSchemaVersion) config_error("unsupported schema_version " + std::to_string(v));
  }
  if (j.contains("potential")) {
    const auto& p = j.at("potential");
    check_keys(p, "potential", {"kind", "c1", "c2", "d", "sites"});
    read(p, "kind", c.potential.kind, "potential");
    read(p, "c1", c.potential.c1, "potential");
    read(p, "c2", c.potential.c2, "potential");
    read(p, "d", c.potential.d, "potential");
    if (p.contains("sites")) {
      const auto& s = p.at("sites");
      if (!s.is_array()) config_error("potential.sites must be an array of [site, value] pairs");
      c.potential.sites.clear();
      for (const auto& e : s) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number())
          config_error("potential.sites entries must be [integer site, value]");
        c.potential.sites.emplace_back(e[0].get<int>(), e[1].get<double>());
      }
      if (!p.contains("kind")) c.potential.kind = "sites";
    }
  }
  if (j.contains("grid")) {
    check_keys(j.at("grid"), "grid", {"N"});
    read(j.at("grid"), "N", c.N, "grid");
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    check_keys(w, "weights", {"a", "sigma", "r"});
    read(w, "a", c.a, "weights");
    read(w, "sigma", c.sigma, "weights");
    read(w, "r", c.r, "weights");
  }
  if (j.contains("qp")) {
    const auto& q = j.at("qp");
    check_keys(q, "qp", {"m_max", "tol", "max_iter", "delta_min"});
    read(q, "m_max", c.m_max, "qp");
    read(q, "tol", c.qp_tol, "qp");
    read(q, "max_iter", c.qp_max_iter, "qp");
    read(q, "delta_min", c.delta_min, "qp");
  }
  if (j.contains("spectrum")) {
    check_keys(j.at("spectrum"), "spectrum", {"band_margin"});
    read(j.at("spectrum"), "band_margin", c.band_margin, "spectrum");
  }
  read(j, "power", c.power, "config");
  if (j.contains("amplitudes")) {
    const auto& a = j.at("amplitudes");
    check_keys(a, "amplitudes", {"rho1", "rho2", "phase1", "phase2"});
    read(a, "rho1", c.rho1, "amplitudes");
    read(a, "rho2", c.rho2, "amplitudes");
    read(a, "phase1", c.phase1, "amplitudes");
    read(a, "phase2", c.phase2, "amplitudes");
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    check_keys(s, "sweep", {"rho1", "rho2"});
    if (s.contains("rho1")) c.sweep_rho1 = read_grid(s.at("rho1"), "sweep.rho1");
    if (s.contains("rho2")) c.sweep_rho2 = read_grid(s.at("rho2"), "sweep.rho2");
  }
  if (j.contains("evolution")) {
    const auto& e = j.at("evolution");
    check_keys(e, "evolution", {"experiment", "dt", "T", "scheme", "linear", "record_stride", "grid_N",
                                "perturbation", "baseline", "orbital_j", "blowup_bound"});
    read(e, "experiment", c.evolve.experiment, "evolution");
    read(e, "dt", c.evolve.dt, "evolution");
    read(e, "T", c.evolve.T, "evolution");
    read(e, "scheme", c.evolve.scheme, "evolution");
    read(e, "linear", c.evolve.linear, "evolution");
    read(e, "record_stride", c.evolve.record_stride, "evolution");
    read(e, "grid_N", c.evolve.grid_N, "evolution");
    read(e, "perturbation", c.evolve.perturbation, "evolution");
    read(e, "baseline", c.evolve.baseline, "evolution");
    read(e, "orbital_j", c.evolve.orbital_j, "evolution");
    read(e, "blowup_bound", c.evolve.blowup_bound, "evolution");
  }
  if (j.contains("decay")) {
    const auto& d = j.at("decay");
    check_keys(d, "decay", {"N", "t_min", "t_max", "samples"});
    read(d, "N", c.decay.N, "decay");
    read(d, "t_min", c.decay.t_min, "decay");
    read(d, "t_max", c.decay.t_max, "decay");
    read(d, "samples", c.decay.samples, "decay");
  }
  read(j, "seed", c.seed, "config");
  return c;
}

RunConfig load_config(const std::string& path, const RunConfig& defaults) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str(), nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    config_error("cannot parse '" + path + "': " + e.what());
  }
  return parse_config(j, defaults);
}

json to_json(const RunConfig& c) {
  json sites = json::array();
  for (const auto& [site, value] : c.potential.sites) sites.push_back({site, value});
  json potential = {{"kind", c.potential.kind}};
  if (c.potential.kind == "two_spike") {
    potential["c1"] = c.potential.c1;
    potential["c2"] = c.potential.c2;
    potential["d"] = c.potential.d;
  } else if (c.potential.kind == "sites") {
    potential["sites"] = sites;
  }
  return {
      {"schema_version", kSchemaVersion},
      {"potential", potential},
      {"grid", {{"N", c.N}}},
      {"weights", {{"a", c.a}, {"sigma", c.sigma}, {"r", c.r}}},
      {"qp", {{"m_max", c.m_max}, {"tol", c.qp_tol}, {"max_iter", c.qp_max_iter}, {"delta_min", c.delta_min}}},
      {"spectrum", {{"band_margin", c.band_margin}}},
      {"power", c.power},
      {"amplitudes", {{"rho1", c.rho1}, {"rho2", c.rho2}, {"phase1", c.phase1}, {"phase2", c.phase2}}},
      {"sweep", {{"rho1", c.sweep_rho1}, {"rho2", c.sweep_rho2}}},
      {"evolution",
       {{"experiment", c.evolve.experiment},
        {"dt", c.evolve.dt},
        {"T", c.evolve.T},
        {"scheme", c.evolve.scheme},
        {"linear", c.evolve.linear},
        {"record_stride", c.evolve.record_stride},
        {"grid_N", c.evolve.grid_N},
        {"perturbation", c.evolve.perturbation},
        {"baseline", c.evolve.baseline},
        {"orbital_j", c.evolve.orbital_j},
        {"blowup_bound", c.evolve.blowup_bound}}},
      {"decay",
       {{"N", c.decay.N}, {"t_min", c.decay.t_min}, {"t_max", c.decay.t_max}, {"samples", c.decay.samples}}},
      {"seed", c.seed},
  };
}

}  // namespace qpdnls::cli
