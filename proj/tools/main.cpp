// qpdnls: spectrum | construct | evolve | decay | sweep.
//
// Exit codes: 0 success, 2 configuration error, 3 a mathematical precondition
// fails (discrete pair, gap, non-resonance, ladder, smallness), 4 a solver does
// not converge, 1 anything else. Failures are reported on stderr as one JSON
// object {"error": <code>, "message": <text>}.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qpdnls/dynamics.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qpdnls;
using qpdnls::cli::RunConfig;

namespace {

struct Session {
  RunConfig cfg;
  fs::path out;
  bool quiet = false;

  void log(const std::string& msg) const {
    if (!quiet) std::cout << msg << '\n';
  }
};

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

json cjson(std::complex<double> z) { return json::array({z.real(), z.imag()}); }

void write_json(const Session& s, const std::string& name, json body) {
  body["schema_version"] = cli::kSchemaVersion;
  body["config"] = cli::to_json(s.cfg);
  std::ofstream f(s.out / name);
  f << body.dump(2) << '\n';
  s.log("wrote " + (s.out / name).string());
}

// CSV writer; the first line is the resolved config as a comment so the file
// stands alone.
class Csv {
 public:
  Csv(const Session& s, const std::string& name, const std::vector<std::string>& header)
      : path_(s.out / name), f_(path_) {
    json meta = {{"schema_version", cli::kSchemaVersion}, {"config", cli::to_json(s.cfg)}};
    f_ << "# " << meta.dump() << '\n';
    row_start_ = true;
    for (const auto& h : header) cell(h);
    end();
    s.log("wrote " + path_.string());
  }
  Csv& cell(const std::string& v) {
    if (!row_start_) f_ << ',';
    f_ << v;
    row_start_ = false;
    return *this;
  }
  Csv& num(double x) { return cell(fmt(x)); }
  Csv& integer(long long x) { return cell(std::to_string(x)); }
  void end() {
    f_ << '\n';
    row_start_ = true;
  }

 private:
  fs::path path_;
  std::ofstream f_;
  bool row_start_ = true;
};

Potential construction_potential(const RunConfig& c) { return c.potential.build(LatticeGrid(c.N)); }

SpectralData construction_spectrum(const RunConfig& c, bool full_basis = true) {
  return eigendecompose(construction_potential(c), {.band_margin = c.band_margin, .require_pair = true,
                                                    .full_basis = full_basis});
}

void require_nonresonant(const SpectralData& spec) {
  const ResonanceReport rep = check_nonresonance(spec.e(1), spec.e(2));
  if (!rep.pass) {
    std::string ns;
    const std::size_t shown = std::min<std::size_t>(rep.violations.size(), 8);
    for (std::size_t k = 0; k < shown; ++k) ns += (k ? ", " : "") + std::to_string(rep.violations[k].n);
    if (shown < rep.violations.size()) ns += " (" + std::to_string(rep.violations.size()) + " in total)";
    fail(ErrorCode::NonResonanceFailure, "e1 + n(e2 - e1) enters the band for n = " + ns);
  }
}

std::complex<double> amplitude(double rho, double phase) { return std::polar(rho, phase); }

// ---------------------------------------------------------------- spectrum

int cmd_spectrum(const Session& s) {
  const Potential V = construction_potential(s.cfg);
  const SpectralData spec =
      eigendecompose(V, {.band_margin = s.cfg.band_margin, .require_pair = false, .full_basis = false});
  json body;
  body["eigenvalues"] = std::vector<double>(spec.eigenvalues().begin(), spec.eigenvalues().end());
  std::vector<double> discrete;
  for (int k : spec.discrete_indices()) discrete.push_back(spec.eigenvalues()[k]);
  body["discrete_eigenvalues"] = discrete;
  const EdgeResonanceFlag edge = edge_resonance_flag(V);
  body["edge_resonance"] = {{"growth_at_0", edge.growth_at_0},
                            {"growth_at_4", edge.growth_at_4},
                            {"tolerance", edge.tolerance},
                            {"suspected", edge.suspected()}};

  if (!spec.has_pair()) {
    body["verdict"] = "fail";
    body["error"] = "WrongDiscreteCount";
    write_json(s, "spectrum.json", body);
    fail(ErrorCode::WrongDiscreteCount,
         "expected two discrete eigenvalues, found " + std::to_string(discrete.size()));
  }

  body["discrete_pair"] = {{"e1", spec.e(1)}, {"e2", spec.e(2)}};
  const ResonanceReport res = check_nonresonance(spec.e(1), spec.e(2));
  json violations = json::array();
  for (const auto& v : res.violations)
    violations.push_back({{"n", v.n}, {"value", v.value}, {"edge_distance", v.edge_distance}});
  body["nonresonance"] = {{"pass", res.pass},
                          {"violations", violations},
                          {"scan_range", res.scan_range},
                          {"min_margin", res.min_margin},
                          {"margin_argmin", res.margin_argmin},
                          {"tail_proven", res.tail_proven}};

  json ladder = {{"m_max", s.cfg.m_max}, {"delta_min", s.cfg.delta_min}};
  bool ladder_ok = true;
  try {
    const FrequencyLadder fl = FrequencyLadder::build(spec, s.cfg.m_max, s.cfg.delta_min);
    ladder["omega1"] = fl.omega[0];
    ladder["omega2"] = fl.omega[1];
    ladder["min_distance"] = fl.min_distance;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::LadderViolation) throw;
    ladder_ok = false;
    ladder["error"] = e.what();
  }
  ladder["pass"] = ladder_ok;
  body["ladder"] = ladder;

  const bool pass = res.pass && ladder_ok;
  body["verdict"] = pass ? "pass" : "fail";
  write_json(s, "spectrum.json", body);
  s.log("e1 = " + fmt(spec.e(1)) + ", e2 = " + fmt(spec.e(2)) + ", verdict " + (pass ? "pass" : "fail"));
  if (!res.pass) require_nonresonant(spec);
  if (!ladder_ok) fail(ErrorCode::LadderViolation, ladder["error"].get<std::string>());
  return 0;
}

// ---------------------------------------------------------------- construct

json coefficient_norms(const QPSolution& sol) {
  json rows = json::array();
  const auto& v = sol.coeffs;
  const RealVector w = exp_weight_sq(v.grid(), v.weights().a);
  for (int j = 1; j <= 2; ++j)
    for (int m = 0; m <= v.m_max(); ++m) {
      const RealVector& c = v(j, m);
      rows.push_back({{"j", j},
                      {"m", m},
                      {"l2", c.norm()},
                      {"l2_exp", std::sqrt((w.array() * c.array().square()).sum())}});
    }
  return rows;
}

int cmd_construct(const Session& s) {
  const auto& c = s.cfg;
  const SpectralData spec = construction_spectrum(c);
  require_nonresonant(spec);
  const QPSolution sol = solve_qp(spec, c.rho1, c.rho2, c.qp_options());
  const auto z1 = amplitude(c.rho1, c.phase1), z2 = amplitude(c.rho2, c.phase2);
  const double psi_norm = norm(assemble_correction(sol, z1, z2), NormSpec::l2());
  const double stationarity = qp_stationarity_residual(spec, sol, 16, c.seed);

  json body = {{"rho1", sol.rho1},
               {"rho2", sol.rho2},
               {"eps", sol.eps},
               {"freq", sol.freq},
               {"bound_state_freq", {sol.prof1.E, sol.prof2.E}},
               {"iterations", sol.iterations},
               {"step_history", sol.step_history},
               {"contraction_factor", sol.contraction_factor},
               {"fixed_point_residual", sol.fixed_point_residual},
               {"tail_ratio", sol.tail_ratio},
               {"stationarity_residual", stationarity},
               {"correction_l2", psi_norm},
               {"weights", {{"a", sol.coeffs.weights().a}, {"r", sol.coeffs.weights().r}}},
               {"coefficient_norms", coefficient_norms(sol)}};
  write_json(s, "qp_solution.json", body);

  Csv csv(s, "qp_coefficients.csv", {"j", "m", "site", "value"});
  for (int j = 1; j <= 2; ++j)
    for (int m = 0; m <= sol.coeffs.m_max(); ++m) {
      const RealVector& v = sol.coeffs(j, m);
      for (Eigen::Index k = 0; k < v.size(); ++k) {
        csv.integer(j).integer(m).integer(sol.coeffs.grid().site(k)).num(v[k]);
        csv.end();
      }
    }
  s.log("eps = (" + fmt(sol.eps[0]) + ", " + fmt(sol.eps[1]) + "), " + std::to_string(sol.iterations) +
        " iterations, stationarity " + fmt(stationarity));
  return 0;
}

// ---------------------------------------------------------------- evolve

void write_trajectory(const Session& s, const TrajectoryRecord& tr, const std::vector<double>* extra,
                      const std::string& extra_name) {
  std::vector<std::string> header = {"t", "l2", "energy", "re_z1", "im_z1", "re_z2", "im_z2",
                                     "abs_z1", "abs_z2", "eta_weighted", "linf"};
  if (extra) header.push_back(extra_name);
  Csv csv(s, "trajectory.csv", header);
  const double nan = std::nan("");
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    const std::complex<double> z1 = tr.tracked() ? tr.z1[k] : std::complex<double>(nan, nan);
    const std::complex<double> z2 = tr.tracked() ? tr.z2[k] : std::complex<double>(nan, nan);
    const double eta = tr.tracked() ? tr.eta_weighted[k] : nan;
    csv.num(tr.times[k]).num(tr.l2_norm[k]).num(tr.energy[k]);
    csv.num(z1.real()).num(z1.imag()).num(z2.real()).num(z2.imag()).num(std::abs(z1)).num(std::abs(z2));
    csv.num(eta).num(tr.linf[k]);
    if (extra) csv.num((*extra)[k]);
    csv.end();
  }
}

json run_summary(const TrajectoryRecord& tr) {
  return {{"steps", tr.steps}, {"dt", tr.dt}, {"mass_drift", tr.mass_drift()}, {"energy_drift", tr.energy_drift()}};
}

int cmd_evolve(const Session& s) {
  const auto& c = s.cfg;
  const auto& e = c.evolve;
  const EvolutionConfig ecfg = c.evolution_config();
  const SpectralData spec = construction_spectrum(c);
  const auto z1 = amplitude(c.rho1, c.phase1), z2 = amplitude(c.rho2, c.phase2);
  json body = {{"experiment", e.experiment}};
  json verdicts;
  const double mass_tol = 1e-10;

  if (e.experiment == "persistence") {
    require_nonresonant(spec);
    const ModulationContext ctx(spec, c.modulation_options());
    const PersistenceReport rep = run_persistence_experiment(ctx, z1, z2, ecfg);
    body["max_deviation"] = rep.max_deviation;
    body["freq"] = rep.freq;
    body["run"] = run_summary(rep.trajectory);
    verdicts["persistence"] = rep.max_deviation <= 1e-6;
    verdicts["mass"] = rep.trajectory.mass_drift() <= mass_tol;
    write_trajectory(s, rep.trajectory, nullptr, "");
    s.log("max deviation from the rotated solution " + fmt(rep.max_deviation));
  } else if (e.experiment == "stability") {
    require_nonresonant(spec);
    const ModulationContext ctx(spec, c.modulation_options());
    std::optional<StabilityReport> base;
    if (e.baseline) {
      s.log("baseline run (no perturbation)");
      base = run_stability_experiment(ctx, z1, z2, 0.0, e.grid_N, ecfg);
    }
    s.log("perturbed run");
    const StabilityReport rep =
        run_stability_experiment(ctx, z1, z2, e.perturbation, e.grid_N, ecfg, base ? &base->trajectory : nullptr);
    body["perturbation"] = rep.perturbation_size;
    body["seed"] = rep.seed;
    body["grid_half_width"] = rep.grid_half_width;
    body["baseline_subtracted"] = rep.baseline_subtracted;
    body["trusted_until"] = rep.trusted_until;
    body["tv_first"] = rep.tv_first;
    body["tv_second"] = rep.tv_second;
    body["tv_ratio"] = rep.tv_ratio;
    body["drift_l1"] = rep.drift_l1;
    body["eta_integral_total"] = rep.eta_integral.empty() ? 0.0 : rep.eta_integral.back();
    body["final_quarter_fraction"] = rep.final_quarter_fraction;
    body["rho_plus"] = rep.rho_plus;
    body["run"] = run_summary(rep.trajectory);
    verdicts["tv_ratio_z1"] = rep.tv_ratio[0] <= 0.3;
    verdicts["tv_ratio_z2"] = rep.tv_ratio[1] <= 0.3;
    verdicts["eta_integral_saturates"] = rep.final_quarter_fraction <= 0.1;
    verdicts["within_trusted_time"] = e.T <= rep.trusted_until;
    verdicts["mass"] = rep.trajectory.mass_drift() <= mass_tol;
    write_trajectory(s, rep.trajectory, &rep.eta_integral, "eta_integral");
    s.log("tv ratios " + fmt(rep.tv_ratio[0]) + ", " + fmt(rep.tv_ratio[1]) + "; final-quarter fraction " +
          fmt(rep.final_quarter_fraction));
  } else {
    const int j = e.orbital_j;
    const auto z = j == 1 ? z1 : z2;
    if (std::abs(z) == 0.0) fail(ErrorCode::ConfigError, "orbital run needs a nonzero amplitude for j");
    const OrbitalReport rep = run_orbital_experiment(spec, j, z, e.perturbation, e.grid_N, ecfg, c.qp_options().bound);
    body["j"] = rep.j;
    body["z"] = cjson(rep.z);
    body["perturbation"] = rep.perturbation_size;
    body["sup_distance"] = rep.sup_distance;
    body["ratio"] = rep.ratio;
    body["run"] = run_summary(rep.trajectory);
    verdicts["orbital_ratio"] = rep.ratio <= 20.0;
    verdicts["mass"] = rep.trajectory.mass_drift() <= mass_tol;
    write_trajectory(s, rep.trajectory, &rep.distance, "orbital_distance");
    s.log("sup orbital distance " + fmt(rep.sup_distance) + " (ratio " + fmt(rep.ratio) + ")");
  }
  body["verdicts"] = verdicts;
  write_json(s, "summary.json", body);
  return 0;
}

// ---------------------------------------------------------------- decay

int cmd_decay(const Session& s) {
  const auto& c = s.cfg;
  const Potential V = c.potential.build(LatticeGrid(c.decay.N));
  const SpectralData spec =
      eigendecompose(V, {.band_margin = c.band_margin, .require_pair = false, .full_basis = true});
  const DecayReport rep = run_decay_experiment(spec, {c.decay.t_min, c.decay.t_max}, c.decay.samples);

  Csv csv(s, "decay.csv", {"case", "t", "linf"});
  json cases = json::array();
  for (const auto& dc : rep.cases) {
    for (std::size_t k = 0; k < dc.fit.times.size(); ++k) {
      csv.cell(dc.label).num(dc.fit.times[k]).num(dc.fit.linf[k]);
      csv.end();
    }
    cases.push_back({{"label", dc.label},
                     {"slope", dc.fit.slope},
                     {"prefactor", dc.fit.prefactor},
                     {"fit_residual", dc.fit.fit_residual}});
  }
  json body = {{"cases", cases},
               {"worst_slope", rep.worst_slope},
               {"worst_prefactor", rep.worst_prefactor},
               {"bound_state_linf_variation", rep.bound_state_linf_variation},
               {"verdicts",
                {{"slope_in_range", rep.worst_slope >= -0.40 && rep.worst_slope <= -0.28},
                 {"bound_state_does_not_decay", rep.bound_state_linf_variation <= 1e-8}}}};
  if (!rep.bound_state_linf.empty()) {
    const auto& t = rep.cases.front().fit.times;
    for (std::size_t k = 0; k < rep.bound_state_linf.size() && k < t.size(); ++k) {
      csv.cell("P_d").num(t[k]).num(rep.bound_state_linf[k]);
      csv.end();
    }
  }
  write_json(s, "fit.json", body);
  s.log("worst decay exponent " + fmt(rep.worst_slope));
  return 0;
}

// ---------------------------------------------------------------- sweep

struct SweepPoint {
  double rho1 = 0.0, rho2 = 0.0;
  std::string status = "ok";
  std::string message;
  std::optional<QPSolution> sol;
  double psi_norm = 0.0;
};

int cmd_sweep(const Session& s) {
  const auto& c = s.cfg;
  if (c.sweep_rho1.empty() && c.sweep_rho2.empty())
    fail(ErrorCode::ConfigError, "sweep needs sweep.rho1 and/or sweep.rho2");
  const std::vector<double> r1 = c.sweep_rho1.empty() ? std::vector<double>{c.rho1} : c.sweep_rho1;
  const std::vector<double> r2 = c.sweep_rho2.empty() ? std::vector<double>{c.rho2} : c.sweep_rho2;
  const SpectralData spec = construction_spectrum(c);
  require_nonresonant(spec);
  const QPOptions opts = c.qp_options();
  const QPWorkspace ws(spec, opts.m_max, opts.delta_min);

  std::vector<SweepPoint> points;
  for (double a : r1)
    for (double b : r2) points.push_back({.rho1 = a, .rho2 = b, .status = "ok", .message = {}, .sol = {}, .psi_norm = 0.0});
  // Deterministic order regardless of how the work is scheduled.
  std::sort(points.begin(), points.end(),
            [](const SweepPoint& x, const SweepPoint& y) { return std::pair(x.rho1, x.rho2) < std::pair(y.rho1, y.rho2); });

  auto solve_point = [&](SweepPoint& p) {
    try {
      p.sol = solve_qp(ws, p.rho1, p.rho2, opts);
      p.psi_norm = norm(assemble_correction(*p.sol, p.rho1, p.rho2), NormSpec::l2());
    } catch (const Error& e) {
      p.status = std::string(to_string(e.code()));
      p.message = e.what();
    }
  };
  const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  for (std::size_t start = 0; start < points.size(); start += workers) {
    std::vector<std::future<void>> batch;
    for (std::size_t k = start; k < std::min(points.size(), start + workers); ++k)
      batch.push_back(std::async(std::launch::async, solve_point, std::ref(points[k])));
    for (auto& f : batch) f.get();
  }

  Csv csv(s, "sweep.csv", {"rho1", "rho2", "status", "eps1", "eps2", "freq1", "freq2", "correction_l2",
                           "iterations", "contraction_factor", "fixed_point_residual", "tail_ratio"});
  json rows = json::array();
  int failures = 0;
  for (const auto& p : points) {
    csv.num(p.rho1).num(p.rho2).cell(p.status);
    if (p.status == "ok") {
      csv.num(p.sol->eps[0]).num(p.sol->eps[1]).num(p.sol->freq[0]).num(p.sol->freq[1]).num(p.psi_norm);
      csv.integer(p.sol->iterations).num(p.sol->contraction_factor).num(p.sol->fixed_point_residual).num(p.sol->tail_ratio);
      rows.push_back({{"rho1", p.rho1}, {"rho2", p.rho2}, {"status", p.status}, {"eps", p.sol->eps},
                      {"freq", p.sol->freq}, {"correction_l2", p.psi_norm}, {"iterations", p.sol->iterations}});
    } else {
      ++failures;
      for (int k = 0; k < 8; ++k) csv.cell("");
      rows.push_back({{"rho1", p.rho1}, {"rho2", p.rho2}, {"status", p.status}, {"message", p.message}});
    }
    csv.end();
  }
  write_json(s, "sweep.json", {{"points", rows}, {"failures", failures}});
  s.log(std::to_string(points.size()) + " sweep points, " + std::to_string(failures) + " failed");
  return 0;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
      return 2;
    case ErrorCode::WrongDiscreteCount:
    case ErrorCode::DegenerateGap:
    case ErrorCode::NonResonanceFailure:
    case ErrorCode::GapViolation:
    case ErrorCode::LadderViolation:
    case ErrorCode::SmallnessViolation:
    case ErrorCode::WindowTooLate:
      return 3;
    case ErrorCode::NoConvergence:
    case ErrorCode::NoContraction:
    case ErrorCode::TailTooLarge:
    case ErrorCode::DecompositionLost:
    case ErrorCode::BlowupGuard:
      return 4;
    default:
      return 1;
  }
}

void report_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quasi-periodic solutions of the discrete NLS on a truncated lattice"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  std::string config_path, out_dir = "out", preset;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON configuration (comments allowed)");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--seed", seed, "overrides the configured seed");
  app.add_option("--preset", preset, "experiment preset applied before the config file")
      ->check(CLI::IsMember({"persistence", "stability", "orbital"}));
  app.add_flag("--quiet", quiet, "no progress output");

  using Command = int (*)(const Session&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"spectrum", "eigenvalues, discrete pair, non-resonance and ladder checks", cmd_spectrum},
      {"construct", "quasi-periodic solution at the configured amplitudes", cmd_construct},
      {"evolve", "persistence, stability or orbital evolution experiment", cmd_evolve},
      {"decay", "dispersive decay of the linear flow", cmd_decay},
      {"sweep", "quasi-periodic solutions over an amplitude grid", cmd_sweep},
  };
  std::vector<std::pair<CLI::App*, Command>> subs;
  for (const auto& [name, help, fn] : commands) subs.emplace_back(app.add_subcommand(name, help), fn);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("ConfigError", e.what());
    return 2;
  }

  try {
    Session s;
    if (!preset.empty()) cli::apply_preset(s.cfg, preset);
    if (!config_path.empty()) s.cfg = cli::load_config(config_path, s.cfg);
    if (seed) s.cfg.seed = *seed;
    s.cfg.validate();
    s.quiet = quiet;
    s.out = out_dir;
    std::error_code ec;
    fs::create_directories(s.out, ec);
    if (ec) fail(ErrorCode::ConfigError, "cannot create output directory '" + out_dir + "': " + ec.message());
    for (const auto& [sub, fn] : subs)
      if (sub->parsed()) return fn(s);
  } catch (const Error& e) {
    report_error(std::string(to_string(e.code())), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    report_error("Internal", e.what());
    return 1;
  }
  return 1;
}
