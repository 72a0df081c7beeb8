#pragma once

// Quasi-periodic solutions Ψ(z1, z2) = φ1(z1) + φ2(z2) + ψ(z1, z2) with
//   ψ = Σ_m z1^{m+1} conj(z2)^m v_{1m} + conj(z1)^m z2^{m+1} v_{2m},
// built as the fixed point of a contraction on truncated coefficient families.

#include <array>
#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

#include "qpdnls/bound_states.hpp"
#include "qpdnls/spectral.hpp"

namespace qpdnls {

/// Real profiles v[j][m], j ∈ {1,2}, 0 ≤ m ≤ m_max, with the weighted norm
/// ‖v‖_ar = Σ r^{2m+1}‖v_{jm}‖_{l²(e^{2a|n|})}.
class CoefficientField {
 public:
  CoefficientField(LatticeGrid grid, int m_max, WeightSpec weights = {});

  /// Family with the single nonzero component v[j][0] = profile.
  static CoefficientField embed(const RealField& profile, int j, int m_max, WeightSpec weights = {});

  const LatticeGrid& grid() const noexcept { return grid_; }
  int m_max() const noexcept { return m_max_; }
  const WeightSpec& weights() const noexcept { return weights_; }
  void set_weights(const WeightSpec& w) { weights_ = w; }

  RealVector& operator()(int j, int m);
  const RealVector& operator()(int j, int m) const;
  RealField field(int j, int m) const { return RealField(grid_, (*this)(j, m)); }
  bool is_zero(int j, int m) const;

  /// ‖v‖_ar.
  double norm_ar() const;
  /// r^{2M+1}(‖v_{1M}‖ + ‖v_{2M}‖) in the same weighted norm.
  double tail() const;
  /// 𝒫: removes the φ_j component of v[j][0].
  void project(const SpectralData& spec);

  CoefficientField& operator+=(const CoefficientField& o);
  CoefficientField& operator-=(const CoefficientField& o);
  CoefficientField& operator*=(double s);
  friend CoefficientField operator+(CoefficientField a, const CoefficientField& b) { return a += b; }
  friend CoefficientField operator-(CoefficientField a, const CoefficientField& b) { return a -= b; }
  friend CoefficientField operator*(double s, CoefficientField a) { return a *= s; }

  void check_compatible(const CoefficientField& o) const;

 private:
  double component_norm(const RealVector& v) const;

  LatticeGrid grid_;
  int m_max_;
  WeightSpec weights_;
  RealVector exp_weight_sq_;
  std::array<std::vector<RealVector>, 2> v_;
};

/// The trilinear operator 𝓜(ρ1², ρ2²; v¹, v², v³): coefficients of
/// u¹·conj(u²)·u³ in the ansatz basis, with paired powers |z_j|² replaced by
/// ρ_j², evaluated by the explicit family sums and truncated at m_max.
CoefficientField m3_apply(double rho1sq, double rho2sq, const CoefficientField& v1, const CoefficientField& v2,
                          const CoefficientField& v3);

/// Independent reference for m3_apply: formal Laurent-polynomial product in
/// (z1, conj z1, z2, conj z2). TruncationOverflow when m_max exceeds 8.
CoefficientField m3_oracle(double rho1sq, double rho2sq, const CoefficientField& v1, const CoefficientField& v2,
                           const CoefficientField& v3);

/// 𝓜_{2k+1}(v) = 𝓜(v, v, 𝓜_{2k-1}(v)), 𝓜_1(v) = v.
CoefficientField m_odd_apply(double rho1sq, double rho2sq, const CoefficientField& v, int k);
inline CoefficientField m7_apply(double rho1sq, double rho2sq, const CoefficientField& v) {
  return m_odd_apply(rho1sq, rho2sq, v, 3);
}

/// 𝓝 = 𝓜_{2p+1}(Φ1 + Φ2 + v) - 𝓜_{2p+1}(Φ1) - 𝓜_{2p+1}(Φ2), Φ_l embedding φ̃_l at (l, 0).
CoefficientField nonlinear_N(double rho1sq, double rho2sq, const CoefficientField& v, const BoundStateProfile& prof1,
                             const BoundStateProfile& prof2);

/// ε_j = ⟨N[j][0], φ_j⟩.
std::array<double, 2> epsilon_corrections(const SpectralData& spec, const CoefficientField& N);

struct FrequencyLadder {
  std::array<std::vector<double>, 2> omega;  // ω_{1m} = (m+1)e1 - m e2, ω_{2m} = (m+1)e2 - m e1
  double min_distance = 0.0;                 // over m ≥ 1, to the spectrum of the truncated H

  /// LadderViolation when some ω_{jm}, m ≥ 1, lies within delta_min of the spectrum.
  static FrequencyLadder build(const SpectralData& spec, int m_max, double delta_min);
};

/// Factored resolvents 𝒜 for one spectral setting and truncation order.
class QPWorkspace {
 public:
  QPWorkspace(const SpectralData& spec, int m_max, double delta_min = 0.05);

  const SpectralData& spec() const noexcept { return *spec_; }
  const FrequencyLadder& ladder() const noexcept { return ladder_; }
  int m_max() const noexcept { return m_max_; }

  /// (H - ω_{jm})^{-1} f, restricted to φ_j^⊥ when m = 0.
  RealVector resolve(int j, int m, const RealVector& f) const;

 private:
  const SpectralData* spec_;
  int m_max_;
  FrequencyLadder ladder_;
  std::array<ProjectedResolvent, 2> projected_;
  std::array<std::vector<ShiftedSolver>, 2> shifted_;  // index m - 1
};

struct FixedPointStep {
  CoefficientField next;
  std::array<double, 2> eps;
};

/// Φ(v) = 𝒜q + Σ_l (ẽ_l + ε_l) 1_l 𝒜v + (ẽ1 - ẽ2 + ε1 - ε2) ℬv - 𝒜𝒫𝓝, re-projected by 𝒫.
FixedPointStep fixedpoint_map(const QPWorkspace& ws, double rho1sq, double rho2sq, const CoefficientField& v,
                              const BoundStateProfile& prof1, const BoundStateProfile& prof2);

struct QPOptions {
  int m_max = 6;
  double a = 0.1;
  double r = 0.0;           // 0 selects 1.5·max(ρ1, ρ2)
  double tol = 1e-13;       // on ‖v_{k+1} - v_k‖_ar
  int max_iter = 60;
  int power = 3;
  double delta_min = 0.05;  // ladder margin
  double tail_limit = 1e-3; // TailTooLarge when tail > tail_limit·‖v‖_ar
  BoundStateOptions bound{};
};

struct QPSolution {
  double rho1 = 0.0, rho2 = 0.0;
  int power = 3;
  CoefficientField coeffs;
  std::array<double, 2> eps{};   // ε_j
  std::array<double, 2> freq{};  // 𝓔_j = E_j(ρ_j²) + ε_j
  BoundStateProfile prof1, prof2;
  int iterations = 0;
  double contraction_factor = 0.0;     // last ratio of successive step norms above roundoff
  std::vector<double> step_history;    // ‖v_{k+1} - v_k‖_ar
  double fixed_point_residual = 0.0;   // ‖Φ(v*) - v*‖_ar from a fresh evaluation
  double tail_ratio = 0.0;             // tail / ‖v‖_ar
};

/// Picard iteration v ← Φ(v) from v = 0.
/// Errors: NoContraction, LadderViolation, NoConvergence, TailTooLarge.
QPSolution solve_qp(const SpectralData& spec, double rho1, double rho2, const QPOptions& opts = {});
/// Same, reusing factored resolvents (ws.m_max() must equal opts.m_max), optionally
/// warm-started from a nearby solution's coefficients.
QPSolution solve_qp(const QPWorkspace& ws, double rho1, double rho2, const QPOptions& opts = {},
                    const CoefficientField* initial = nullptr);

/// ψ(z1, z2) alone (no bound-state part). AmplitudeMismatch unless |z_j| = ρ_j.
ComplexField assemble_correction(const QPSolution& sol, std::complex<double> z1, std::complex<double> z2);
/// Ψ(z1, z2) = φ1(z1) + φ2(z2) + ψ(z1, z2).
ComplexField assemble_psi(const QPSolution& sol, std::complex<double> z1, std::complex<double> z2);

/// max over random phases of ‖iΨ̇ - HΨ - |Ψ|^{2p}Ψ‖_{l²}, with iΨ̇ taken
/// termwise from the dressed frequencies.
double qp_stationarity_residual(const SpectralData& spec, const QPSolution& sol, int phase_samples,
                                std::uint64_t seed = 7);

}  // namespace qpdnls
