#pragma once

// Time integration of i u_t = Hu + |u|^{2p}u and the persistence, stability,
// orbital and dispersive-decay experiments built on it.

#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "qpdnls/modulation.hpp"

namespace qpdnls {

/// E(u) = ½⟨Hu, u⟩ + 1/(2p+2)·Σ|u|^{2p+2}.
double energy(const ComplexField& u, const Potential& V, int power);
/// Σ|u|², the conserved mass.
double mass(const ComplexField& u);

/// J_0(x), ..., J_{n_max}(x) by Miller's backward recurrence normalized with
/// J_0 + 2Σ J_{2k} = 1. Accurate to roundoff for all orders, including n ≫ x.
std::vector<double> bessel_j_sequence(double x, int n_max);

enum class Scheme { Strang, RK4 };
enum class LinearMethod { Chebyshev, Eigenbasis };

/// e^{-iH dt}. Chebyshev uses the Gershgorin enclosure [min V, 4 + max V] and
/// only tridiagonal products; Eigenbasis diagonalizes H once (dense, small grids).
class LinearPropagator {
 public:
  LinearPropagator(const Potential& V, double dt, LinearMethod method = LinearMethod::Chebyshev);
  ~LinearPropagator();
  LinearPropagator(LinearPropagator&&) noexcept;
  LinearPropagator& operator=(LinearPropagator&&) noexcept;

  double dt() const noexcept { return dt_; }
  int chebyshev_terms() const noexcept;
  void apply(ComplexVector& u) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  double dt_;
};

struct EvolutionConfig {
  double dt = 1e-3;
  double T = 1.0;
  int power = 3;
  Scheme scheme = Scheme::Strang;
  LinearMethod linear = LinearMethod::Chebyshev;
  int record_stride = 1;      // steps between records (the final time is always recorded)
  int snapshot_stride = 0;    // records between stored snapshots; 0 keeps none
  double sigma = 1.5;         // ‖η‖ is measured in l^{2,-σ}
  std::uint64_t seed = 0;     // perturbation draws in the experiments
  double blowup_bound = 10.0; // BlowupGuard when ‖u‖_∞ exceeds this

  void validate() const;
  int steps() const;          // ceil(T/dt); the step is shrunk to hit T exactly
};

struct TrajectoryRecord {
  std::vector<double> times, l2_norm, energy, linf;
  // Filled only when a modulation context tracks the run.
  std::vector<std::complex<double>> z1, z2;
  std::vector<double> eta_weighted;
  std::vector<double> snapshot_times;
  std::vector<ComplexField> snapshots;
  ComplexField final_state{LatticeGrid(1)};
  int steps = 0;
  double dt = 0.0;

  bool tracked() const noexcept { return !z1.empty(); }
  double mass_drift() const;    // max_t |‖u(t)‖² - ‖u(0)‖²| / ‖u(0)‖²
  double energy_drift() const;  // max_t |E(t) - E(0)|
};

using Observer = std::function<void(double t, const ComplexField& u)>;

/// Integrates from u0 over [0, T]. With a tracker every record also stores the
/// modulation coordinates (Newton warm-started from the previous record); the
/// observer sees the state at every record.
/// Errors: BlowupGuard, DecompositionLost.
TrajectoryRecord evolve(const ComplexField& u0, const Potential& V, const EvolutionConfig& cfg,
                        const ModulationContext* tracker = nullptr, const Observer& observer = {});

/// Localized random field of l² norm `size` (support |n| ≤ radius), seeded;
/// with `continuous` the discrete modes of ctx's construction grid are removed first.
ComplexField random_perturbation(const LatticeGrid& grid, const SpectralData& discrete, double size,
                                 std::uint64_t seed, bool continuous, int radius = 10);

/// Total variation Σ|f_{k+1} - f_k| over records with t in [t0, t1].
double total_variation(const std::vector<double>& t, const std::vector<double>& f, double t0, double t1);

struct PersistenceReport {
  double max_deviation = 0.0;  // max_t ‖u(t) - Ψ(e^{-i𝓔1 t}z1, e^{-i𝓔2 t}z2)‖
  std::array<double, 2> freq{};
  TrajectoryRecord trajectory;
};

/// u0 = Ψ(z1, z2) on the construction grid, compared against the rotated ansatz at each record.
PersistenceReport run_persistence_experiment(const ModulationContext& ctx, std::complex<double> z1,
                                             std::complex<double> z2, const EvolutionConfig& cfg);

struct StabilityReport {
  double perturbation_size = 0.0;
  std::uint64_t seed = 0;
  int grid_half_width = 0;
  bool baseline_subtracted = false;
  double trusted_until = 0.0;                 // radiation returns from the boundary after ~N (speed ≤ 2)
  std::array<double, 2> tv_first{}, tv_second{};  // of |z_j|² on [0, T/2] and [T/2, T]
  std::array<double, 2> tv_ratio{};
  std::array<double, 2> drift_l1{};           // ∫|d/dt |z_j|²| dt over [0, T]
  std::vector<double> eta_integral;           // cumulative ∫‖η‖²_{l^{2,-σ}} at each record
  double final_quarter_fraction = 0.0;        // increment of the integral over [3T/4, T] / total
  std::array<double, 2> rho_plus{};           // mean |z_j| over the last tenth
  TrajectoryRecord trajectory;
};

/// u0 = Ψ(z1, z2) + P_c(perturbation) on a grid of half width N, tracked by decompose.
/// With a baseline (the same run at zero perturbation) the |z_j|² statistics are
/// taken relative to it, which cancels the splitting error of the unperturbed flow.
StabilityReport run_stability_experiment(const ModulationContext& ctx, std::complex<double> z1,
                                         std::complex<double> z2, double perturbation_size, int N,
                                         const EvolutionConfig& cfg, const TrajectoryRecord* baseline = nullptr);

struct OrbitalReport {
  int j = 0;
  std::complex<double> z;
  double perturbation_size = 0.0;
  double sup_distance = 0.0;  // sup_t inf_θ ‖u(t) - e^{iθ}φ_j(z)‖
  double ratio = 0.0;         // sup_distance / perturbation_size
  std::vector<double> distance;
  TrajectoryRecord trajectory;
};

/// u0 = φ_j(z) + perturbation (unprojected) on a grid of half width N.
OrbitalReport run_orbital_experiment(const SpectralData& construction_spec, int j, std::complex<double> z,
                                     double perturbation_size, int N, const EvolutionConfig& cfg,
                                     const BoundStateOptions& bound = {});

struct DecayCase {
  std::string label;
  DecayFit fit;
};

struct DecayReport {
  std::vector<DecayCase> cases;  // P_c δ_0, P_c δ_5, P_c(δ_0 - δ_1)
  double worst_slope = 0.0;      // the largest (least negative) exponent
  double worst_prefactor = 0.0;
  // P_d data: a discrete eigenvector, whose l∞ norm should stay constant.
  double bound_state_linf_variation = 0.0;
  std::vector<double> bound_state_linf;
};

/// Requires the full eigenbasis of a grid with N/2 > window.second.
DecayReport run_decay_experiment(const SpectralData& spec, std::pair<double, double> window, int samples);

}  // namespace qpdnls
