#pragma once

// Experiment configuration for the command-line front end: parsing, presets,
// validation and the resolved form embedded in every output file.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qpdnls/dynamics.hpp"

namespace qpdnls::cli {

inline constexpr int kSchemaVersion = 1;

struct PotentialConfig {
  std::string kind = "two_spike";  // two_spike | sites | zero
  double c1 = -1.5, c2 = 1.5;
  int d = 1;
  std::vector<std::pair<int, double>> sites;

  Potential build(const LatticeGrid& grid) const;
};

struct EvolveConfig {
  std::string experiment = "persistence";  // persistence | stability | orbital
  double dt = 1e-3;
  double T = 50.0;
  std::string scheme = "strang";           // strang | rk4
  std::string linear = "chebyshev";        // chebyshev | eigenbasis
  int record_stride = 100;
  int grid_N = 200;                        // evolution grid (≥ construction grid)
  double perturbation = 0.0;
  bool baseline = true;                    // stability: subtract the unperturbed run
  int orbital_j = 2;
  double blowup_bound = 10.0;
};

struct DecayConfig {
  int N = 2000;
  double t_min = 10.0, t_max = 400.0;
  int samples = 16;
};

struct RunConfig {
  PotentialConfig potential;
  int N = 200;
  double a = 0.1, sigma = 1.5, r = 0.0;
  int m_max = 6;
  double qp_tol = 1e-13;
  int qp_max_iter = 60;
  double delta_min = 0.05;
  double band_margin = 0.05;
  int power = 3;
  double rho1 = 0.1, rho2 = 0.1, phase1 = 0.0, phase2 = 0.0;
  std::vector<double> sweep_rho1, sweep_rho2;
  EvolveConfig evolve;
  DecayConfig decay;
  std::uint64_t seed = 1;

  /// ConfigError on any out-of-range or inconsistent value.
  void validate() const;

  QPOptions qp_options() const;
  ModulationOptions modulation_options() const;
  EvolutionConfig evolution_config() const;
};

/// Applies a named preset (persistence | stability | orbital) on top of `cfg`.
void apply_preset(RunConfig& cfg, const std::string& name);

/// Reads a JSON document that may contain // and /* */ comments. Keys absent
/// from the file keep their defaults; unknown keys are a ConfigError.
RunConfig parse_config(const nlohmann::json& j, const RunConfig& defaults = {});
RunConfig load_config(const std::string& path, const RunConfig& defaults = {});

nlohmann::json to_json(const RunConfig& cfg);

}  // namespace qpdnls::cli
