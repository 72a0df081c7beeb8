#pragma once

// Spectral theory of the truncated operator H: eigenpairs, the discrete/band
// split, the arithmetic non-resonance test, resolvent solves (plain and
// restricted to φ_j^⊥), the discrete/continuous projections and the linear
// propagator e^{-itH}.

#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qpdnls/lattice.hpp"

namespace qpdnls {

struct SpectralOptions {
  double band_margin = 0.05;  // eigenvalues outside [-δ, 4+δ] are discrete
  bool require_pair = true;   // demand exactly two discrete eigenvalues
  bool full_basis = true;     // keep every eigenvector (needed by the propagator)
};

/// Heuristic band-edge resonance flag: the generalized eigenfunctions of the
/// infinite-lattice operator at λ = 0 and λ = 4, shot through the support of
/// V from a bounded left state. Bounded on the right means a suspected
/// threshold resonance (H is then not generic).
struct EdgeResonanceFlag {
  double growth_at_0 = 0.0;  // |B| / scale of the linear mode A + Bn right of the support
  double growth_at_4 = 0.0;
  double tolerance = 1e-8;

  bool suspected() const noexcept { return growth_at_0 < tolerance || growth_at_4 < tolerance; }
};

EdgeResonanceFlag edge_resonance_flag(const Potential& V, double tolerance = 1e-8);

class SpectralData {
 public:
  const LatticeGrid& grid() const noexcept { return V_.grid(); }
  const Potential& potential() const noexcept { return V_; }
  const RealVector& eigenvalues() const noexcept { return eigenvalues_; }
  /// Column k is the eigenvector of eigenvalues()[k]. Empty unless full_basis.
  const Eigen::MatrixXd& eigenvectors() const noexcept { return eigenvectors_; }
  bool has_full_basis() const noexcept { return eigenvectors_.cols() == eigenvalues_.size(); }
  const std::vector<int>& discrete_indices() const noexcept { return discrete_indices_; }
  double band_margin() const noexcept { return band_margin_; }

  bool has_pair() const noexcept { return discrete_indices_.size() == 2; }
  /// e_j and φ_j for j ∈ {1, 2}; φ_j is normalised with its largest entry positive.
  double e(int j) const;
  const RealField& phi(int j) const;
  /// Eigenvector of a discrete eigenvalue, by position in discrete_indices().
  const RealField& discrete_vector(std::size_t k) const { return discrete_vectors_.at(k); }

  /// Distance from λ to the nearest eigenvalue of the truncated H.
  double distance_to_spectrum(double lambda) const;

 private:
  friend SpectralData eigendecompose(const Potential& V, const SpectralOptions& opts);
  explicit SpectralData(Potential V) : V_(std::move(V)) {}

  Potential V_;
  RealVector eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
  std::vector<int> discrete_indices_;
  std::vector<RealField> discrete_vectors_;
  double band_margin_ = 0.05;
};

/// Errors: WrongDiscreteCount when a pair is demanded and not found,
/// DegenerateGap when an eigenvalue sits in [-δ, 0) ∪ (4, 4+δ].
SpectralData eigendecompose(const Potential& V, const SpectralOptions& opts = {});

struct ResonanceViolation {
  long n;
  double value;          // e1 + n(e2 - e1)
  double edge_distance;  // distance from value to the nearer band edge
};

struct ResonanceReport {
  bool pass = true;
  std::vector<ResonanceViolation> violations;
  long scan_range = 0;
  double min_margin = 0.0;  // min over all n of dist(e1 + n(e2-e1), [0,4])
  long margin_argmin = 0;
  bool tail_proven = true;  // every violating n lies inside the scanned range
};

ResonanceReport check_nonresonance(double e1, double e2, long scan_bound = 64);

/// LU of the tridiagonal H - λ (LAPACK gttrf), reusable for many right-hand sides.
class ShiftedSolver {
 public:
  ShiftedSolver(const Potential& V, double lambda);

  double shift() const noexcept { return lambda_; }
  void solve_inplace(RealVector& rhs) const;
  RealVector solve(const RealVector& rhs) const;
  ComplexVector solve(const ComplexVector& rhs) const;

 private:
  double lambda_;
  int n_;
  std::vector<double> dl_, d_, du_, du2_;
  std::vector<int> ipiv_;
};

/// Solves (H - λ)w = f. NearSingular if λ is within δ_min of the spectrum.
ComplexField resolvent_solve(const Potential& V, double lambda, const ComplexField& f, double delta_min);
ComplexField resolvent_solve(const SpectralData& spec, double lambda, const ComplexField& f, double delta_min);

/// (H - e_j) restricted to φ_j^⊥, inverted through the bordered system
/// [H - e_j, φ_j; φ_j^T, 0] (sparse LU, factored once).
class ProjectedResolvent {
 public:
  ProjectedResolvent(const SpectralData& spec, int j);
  ~ProjectedResolvent();
  ProjectedResolvent(ProjectedResolvent&&) noexcept;
  ProjectedResolvent& operator=(ProjectedResolvent&&) noexcept;

  int j() const noexcept { return j_; }
  /// Returns w ⊥ φ_j with (H - e_j)w = Q_j f. NotOrthogonal when
  /// |⟨f, φ_j⟩| > tolerance·‖f‖ and `check` is set.
  RealVector solve(const RealVector& f, bool check = true, double tolerance = 1e-12) const;
  ComplexVector solve(const ComplexVector& f, bool check = true, double tolerance = 1e-12) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int j_;
};

ComplexField projected_resolvent_solve(const SpectralData& spec, int j, const ComplexField& f);

enum class Projection { Pd, Pc };

/// P_d u = Σ_{j,A} ⟨u, φ_{j,A}⟩ φ_{j,A} with φ_{j,R} = φ_j, φ_{j,I} = iφ_j; P_c = 1 - P_d.
ComplexField project(const SpectralData& spec, const ComplexField& u, Projection which);

/// Σ_k e^{-iλ_k t} (u0, v_k) v_k. Requires the full eigenbasis.
ComplexField propagate_linear(const SpectralData& spec, const ComplexField& u0, double t);

struct DecayFit {
  double slope = 0.0;
  double prefactor = 0.0;     // exp(intercept)
  double fit_residual = 0.0;  // RMS of the log-log residuals
  std::vector<double> times;
  std::vector<double> linf;
};

/// Fits log‖e^{-itH}u0‖_∞ against log t on `samples` log-spaced times in the
/// window. WindowTooLate when t_max ≥ N/2 (the band's group speed is at most 2).
DecayFit decay_fit(const SpectralData& spec, const ComplexField& u0, std::pair<double, double> window, int samples);

/// decay_fit applied to P_c δ_0.
DecayFit decay_exponent(const SpectralData& spec, std::pair<double, double> window, int samples);

}  // namespace qpdnls
