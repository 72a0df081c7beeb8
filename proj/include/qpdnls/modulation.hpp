#pragma once

// Modulation coordinates u = Ψ(z1, z2) + η with ⟨iη, D_{j,A}Ψ⟩ = 0, and the map
// R[z1, z2] from P_c l² onto that nonlinear continuous space.

#include <array>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

#include "qpdnls/qp_solver.hpp"

namespace qpdnls {

struct ModulationOptions {
  QPOptions qp{};
  double smallness = 0.3;       // δ2: decompose refuses ‖u‖_{l²} above this
  double tolerance = 1e-15;     // on the max orthogonality residual
  int max_iterations = 25;
  double recenter_tol = 1e-6;   // chart is re-expanded once some |z_j|² moves this far
};

/// Ψ and its four real derivatives D_{j,A}Ψ at one point; d[2(j-1) + A], A = 0 (R), 1 (I).
struct TangentFrame {
  ComplexField psi{LatticeGrid(1)};
  std::vector<ComplexField> d;  // size 4
};

/// Memoized QP solutions plus a first-order expansion of the ansatz fields in
/// (|z1|², |z2|²) that yields Ψ and D_{j,A}Ψ by the chain rule. All fields
/// live on the construction grid; fields on larger grids are matched at the centre.
class ModulationContext {
 public:
  ModulationContext(const SpectralData& construction_spec, ModulationOptions opts = {});
  ~ModulationContext();
  ModulationContext(const ModulationContext&) = delete;
  ModulationContext& operator=(const ModulationContext&) = delete;

  const SpectralData& spec() const noexcept { return spec_; }
  const ModulationOptions& options() const noexcept { return opts_; }
  const QPWorkspace& workspace() const noexcept { return ws_; }

  /// Fixed point at exact amplitudes (memoized; warm-started from the nearest cached entry).
  std::shared_ptr<const QPSolution> solution(double rho1, double rho2) const;

  /// Ψ(z1, z2) from an exact solve.
  ComplexField psi(std::complex<double> z1, std::complex<double> z2) const;
  /// Ψ and D_{j,A}Ψ from the amplitude chart.
  TangentFrame frame(std::complex<double> z1, std::complex<double> z2) const;

  struct Stats {
    long qp_solves = 0;
    long recenters = 0;
  };
  Stats stats() const;

 private:
  struct Chart;
  std::shared_ptr<const Chart> chart_for(double s1, double s2) const;
  std::shared_ptr<const Chart> build_chart(double s1, double s2) const;

  SpectralData spec_;
  ModulationOptions opts_;
  QPWorkspace ws_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<double, double>, std::shared_ptr<const QPSolution>> cache_;
  mutable std::shared_ptr<const Chart> chart_;
  mutable Stats stats_;
};

/// Central difference of Ψ in the real coordinate z_{j,A} (A = 0 real, 1 imaginary part),
/// each side re-solving the fixed point at its own amplitudes. h ≤ 0 selects
/// max(1e-5, 1e-3·|z_j|).
ComplexField d_psi(const ModulationContext& ctx, std::complex<double> z1, std::complex<double> z2, int j, int A,
                   double h = 0.0);

struct Decomposition {
  std::complex<double> z1, z2;
  ComplexField eta{LatticeGrid(1)};
  double orth_residual = 0.0;  // max_{j,A} |⟨iη, D_{j,A}Ψ⟩|
  int newton_iters = 0;
  std::vector<double> residual_history;
};

/// Newton on F_{j,A}(z) = ⟨i(u - Ψ(z)), D_{j,A}Ψ(z)⟩ = 0 with the Jacobian
/// -⟨iD_{k,B}Ψ, D_{j,A}Ψ⟩ and backtracking. u may live on any grid at least as
/// large as the construction grid. The initial guess defaults to z_j = Σ u φ_j.
/// Errors: SmallnessViolation, NoConvergence.
Decomposition decompose(const ModulationContext& ctx, const ComplexField& u,
                        std::optional<std::pair<std::complex<double>, std::complex<double>>> guess = std::nullopt);

/// R[z1, z2]η = η + Σ β_{j,A} φ_{j,A} with β solving
/// Σ β_{j,A}⟨iφ_{j,A}, D_{k,B}Ψ⟩ = -⟨iη, D_{k,B}Ψ⟩. η must satisfy P_c η = η
/// (NotOrthogonal otherwise); SingularSystem when the 4×4 matrix degenerates.
ComplexField rmap_apply(const ModulationContext& ctx, std::complex<double> z1, std::complex<double> z2,
                        const ComplexField& eta_c, std::array<double, 4>* beta = nullptr);

/// Copies a construction-grid field into the centre of a larger grid (zero padded).
ComplexField embed_centered(const ComplexField& f, const LatticeGrid& target);
/// The centre window of f on a smaller grid.
ComplexField restrict_centered(const ComplexField& f, const LatticeGrid& target);

}  // namespace qpdnls
