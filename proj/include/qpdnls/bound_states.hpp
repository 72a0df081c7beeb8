#pragma once

// Nonlinear bound states z(φ_j + q_j(|z|²)) of iu_t = Hu + |u|^{2p}u bifurcating
// from the discrete eigenvalues, and their frequencies E_j(|z|²).

#include <complex>
#include <vector>

#include "qpdnls/spectral.hpp"

namespace qpdnls {

struct BoundStateOptions {
  int power = 3;                     // nonlinearity |u|^{2p}u
  double rho_max = 0.3;              // larger amplitudes are solved but flagged extrapolated
  double tolerance = 1e-14;          // on ‖F(q, s)‖_{l²}
  int max_iterations = 40;
  double continuation_step = 0.05;   // warm-start ladder when a direct solve fails
};

struct BoundStateProfile {
  int j = 1;
  double rho = 0.0;
  int power = 3;
  RealField phi;  // the linear eigenvector φ_j
  RealField q;    // correction, ⟨q, φ_j⟩ = 0
  double e_shift = 0.0;  // ẽ_j(ρ²)
  double E = 0.0;        // e_j + ẽ_j
  double residual = 0.0; // bound_state_residual at z = ρ
  int iterations = 0;
  std::vector<double> residual_history;  // ‖F‖ before each Newton step and after the last
  bool extrapolated = false;             // ρ > rho_max

  /// φ_j + q.
  RealField tilde_phi() const { return phi + q; }
  /// z(φ_j + q); |z| must equal ρ.
  ComplexField at(std::complex<double> z) const;
};

/// Newton on F(q, s) = (H - e_j)q - s^p⟨f(q), φ_j⟩q + s^p Q_j f(q), s = ρ²,
/// f(q) = |φ_j + q|^{2p}(φ_j + q), with continuation in ρ as a fallback.
/// Errors: NoConvergence, GapViolation (E_j leaves the spectral gap).
BoundStateProfile solve_bound_state(const SpectralData& spec, int j, double rho, const BoundStateOptions& opts = {});

/// E = e + ρ^{2p}⟨|φ + q|^{2p}(φ + q), φ⟩ for an arbitrary normalized profile φ.
double bound_state_energy(double e, const RealVector& phi, const RealVector& q, double rho, int power);
double bound_state_energy(const SpectralData& spec, int j, const RealField& q, double rho, int power);

/// ‖(H - E)φ_j(z) + |φ_j(z)|^{2p}φ_j(z)‖_{l²}. AmplitudeMismatch unless |z| = ρ.
double bound_state_residual(const SpectralData& spec, const BoundStateProfile& profile, std::complex<double> z);

}  // namespace qpdnls
