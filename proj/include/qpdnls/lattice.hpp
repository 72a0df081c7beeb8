#pragma once

// Truncated one-dimensional lattice, fields on it, the Schrödinger operator
// H = -Δ + V with Dirichlet closure, the real pairing and weighted norms.

#include <complex>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qpdnls/errors.hpp"

namespace qpdnls {

using cplx = std::complex<double>;
using RealVector = Eigen::VectorXd;
using ComplexVector = Eigen::VectorXcd;

/// Sites n ∈ [-N, N], stored at indices 0..2N.
class LatticeGrid {
 public:
  explicit LatticeGrid(int half_width);

  int half_width() const noexcept { return half_width_; }
  int site_count() const noexcept { return 2 * half_width_ + 1; }
  Eigen::Index index(int site) const;
  int site(Eigen::Index index) const noexcept { return static_cast<int>(index) - half_width_; }
  bool contains(int site) const noexcept { return site >= -half_width_ && site <= half_width_; }

  friend bool operator==(const LatticeGrid&, const LatticeGrid&) = default;

 private:
  int half_width_;
};

template <class Scalar>
class LatticeField {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  explicit LatticeField(LatticeGrid grid) : grid_(grid), values_(Vector::Zero(grid.site_count())) {}
  LatticeField(LatticeGrid grid, Vector values) : grid_(grid), values_(std::move(values)) {
    require(values_.size() == grid_.site_count(), ErrorCode::GridMismatch,
            "field length does not match grid");
  }

  static LatticeField delta(LatticeGrid grid, int site, Scalar value = Scalar(1)) {
    LatticeField f(grid);
    f.at(site) = value;
    return f;
  }

  const LatticeGrid& grid() const noexcept { return grid_; }
  const Vector& values() const noexcept { return values_; }
  Vector& values() noexcept { return values_; }
  Eigen::Index size() const noexcept { return values_.size(); }

  Scalar& at(int site) { return values_[grid_.index(site)]; }
  Scalar at(int site) const { return values_[grid_.index(site)]; }

  LatticeField& operator+=(const LatticeField& other) {
    check_same_grid(other);
    values_ += other.values_;
    return *this;
  }
  LatticeField& operator-=(const LatticeField& other) {
    check_same_grid(other);
    values_ -= other.values_;
    return *this;
  }
  LatticeField& operator*=(Scalar s) {
    values_ *= s;
    return *this;
  }
  friend LatticeField operator+(LatticeField a, const LatticeField& b) { return a += b; }
  friend LatticeField operator-(LatticeField a, const LatticeField& b) { return a -= b; }
  friend LatticeField operator*(Scalar s, LatticeField a) { return a *= s; }

  void check_same_grid(const LatticeField& other) const {
    require(grid_ == other.grid_, ErrorCode::GridMismatch, "fields live on different grids");
  }

 private:
  LatticeGrid grid_;
  Vector values_;
};

using ComplexField = LatticeField<cplx>;
using RealField = LatticeField<double>;

ComplexField to_complex(const RealField& f);

/// Real potential with a declared support radius; values outside the radius
/// must vanish.
class Potential {
 public:
  Potential(LatticeGrid grid, int support_radius);

  /// V = Σ value·δ_site. Support radius is the largest |site|.
  static Potential from_sites(LatticeGrid grid, std::span<const std::pair<int, double>> sites);
  static Potential zero(LatticeGrid grid) { return Potential(grid, 0); }
  /// Two spikes: c1 at site 0 and c2 at site d.
  static Potential two_spike(LatticeGrid grid, double c1, double c2, int d);
  /// The potential used throughout the tests and CLI defaults: -1.5 at 0, +1.5 at 1.
  static Potential reference(LatticeGrid grid) { return two_spike(grid, -1.5, 1.5, 1); }

  const LatticeGrid& grid() const noexcept { return grid_; }
  int support_radius() const noexcept { return support_radius_; }
  const RealVector& values() const noexcept { return values_.values(); }
  double at(int site) const { return values_.at(site); }
  void set(int site, double value);

  /// Σ ⟨n⟩|V(n)|.
  double weighted_l1() const;
  /// Same potential on another grid; sites that do not fit raise.
  Potential on_grid(LatticeGrid grid) const;
  std::vector<std::pair<int, double>> nonzero_sites() const;

 private:
  LatticeGrid grid_;
  int support_radius_;
  RealField values_;
};

struct WeightSpec {
  double a = 0.1;      // exponential rate of l^a_e
  double sigma = 1.5;  // polynomial exponent of l^{2,±σ}
  double r = 0.15;     // generating radius of X_ar

  void validate(const LatticeGrid& grid) const;
};

enum class NormKind { L1, L2, Linf, L2Poly, L2Exp };

struct NormSpec {
  NormKind kind = NormKind::L2;
  double parameter = 0.0;  // σ for L2Poly, a for L2Exp

  static NormSpec l1() { return {NormKind::L1, 0.0}; }
  static NormSpec l2() { return {NormKind::L2, 0.0}; }
  static NormSpec linf() { return {NormKind::Linf, 0.0}; }
  static NormSpec l2_poly(double sigma) { return {NormKind::L2Poly, sigma}; }
  static NormSpec l2_exp(double a) { return {NormKind::L2Exp, a}; }
};

/// (Hu)(n) = -(u(n+1) - 2u(n) + u(n-1)) + V(n)u(n), u(±(N+1)) = 0.
ComplexField apply_H(const ComplexField& u, const Potential& V);
RealField apply_H(const RealField& u, const Potential& V);

/// Raw-vector kernels used by the solvers; `potential` includes the diagonal.
void apply_H_inplace(std::span<const double> potential, const ComplexVector& u, ComplexVector& out);
void apply_H_inplace(std::span<const double> potential, const RealVector& u, RealVector& out);

/// Re Σ u(n) conj(v(n)).
double inner(const ComplexField& u, const ComplexField& v);
double inner(const RealField& u, const RealField& v);
double inner(const ComplexVector& u, const ComplexVector& v);

/// Σ u(n) conj(v(n)) (the sesquilinear pairing, assembled from two real pairings).
cplx complex_inner(const ComplexVector& u, const ComplexVector& v);

double norm(const ComplexField& u, NormSpec spec);
double norm(const RealField& u, NormSpec spec);

/// ⟨n⟩^{2σ} and e^{2a|n|} weights on the grid.
RealVector poly_weight_sq(const LatticeGrid& grid, double sigma);
RealVector exp_weight_sq(const LatticeGrid& grid, double a);

/// Slope of log|f(n)| against |n| over sites where |f| exceeds `floor`
/// times its maximum (a localisation diagnostic).
double log_linear_decay_slope(const RealVector& magnitude, const LatticeGrid& grid, double floor = 1e-14);

}  // namespace qpdnls
