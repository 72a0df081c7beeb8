#include "qpdnls/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace qpdnls {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::Overflow: return "Overflow";
    case ErrorCode::WrongDiscreteCount: return "WrongDiscreteCount";
    case ErrorCode::DegenerateGap: return "DegenerateGap";
    case ErrorCode::NearSingular: return "NearSingular";
    case ErrorCode::NotOrthogonal: return "NotOrthogonal";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::GapViolation: return "GapViolation";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TruncationOverflow: return "TruncationOverflow";
    case ErrorCode::LadderViolation: return "LadderViolation";
    case ErrorCode::NoContraction: return "NoContraction";
    case ErrorCode::TailTooLarge: return "TailTooLarge";
    case ErrorCode::AmplitudeMismatch: return "AmplitudeMismatch";
    case ErrorCode::SmallnessViolation: return "SmallnessViolation";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::WindowTooLate: return "WindowTooLate";
    case ErrorCode::BlowupGuard: return "BlowupGuard";
    case ErrorCode::DecompositionLost: return "DecompositionLost";
    case ErrorCode::NonResonanceFailure: return "NonResonanceFailure";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

LatticeGrid::LatticeGrid(int half_width) : half_width_(half_width) {
  require(half_width >= 1, ErrorCode::InvalidArgument, "grid half width must be >= 1");
}

Eigen::Index LatticeGrid::index(int site) const {
  require(contains(site), ErrorCode::InvalidArgument,
          "site " + std::to_string(site) + " outside grid of half width " + std::to_string(half_width_));
  return static_cast<Eigen::Index>(site + half_width_);
}

ComplexField to_complex(const RealField& f) { return ComplexField(f.grid(), f.values().cast<cplx>()); }

Potential::Potential(LatticeGrid grid, int support_radius)
    : grid_(grid), support_radius_(support_radius), values_(grid) {
  require(support_radius >= 0 && support_radius <= grid.half_width(), ErrorCode::InvalidArgument,
          "potential support radius must lie inside the grid");
}

Potential Potential::from_sites(LatticeGrid grid, std::span<const std::pair<int, double>> sites) {
  int radius = 0;
  for (const auto& [site, value] : sites) radius = std::max(radius, std::abs(site));
  Potential V(grid, std::min(radius, grid.half_width()));
  for (const auto& [site, value] : sites) V.set(site, V.at(site) + value);
  return V;
}

Potential Potential::two_spike(LatticeGrid grid, double c1, double c2, int d) {
  const std::pair<int, double> sites[] = {{0, c1}, {d, c2}};
  return from_sites(grid, sites);
}

void Potential::set(int site, double value) {
  require(std::abs(site) <= support_radius_, ErrorCode::InvalidArgument,
          "site " + std::to_string(site) + " outside declared potential support");
  require(std::isfinite(value), ErrorCode::InvalidArgument, "potential value must be finite");
  values_.at(site) = value;
}

double Potential::weighted_l1() const {
  double s = 0.0;
  for (int n = -support_radius_; n <= support_radius_; ++n) s += std::sqrt(1.0 + double(n) * n) * std::abs(at(n));
  return s;
}

Potential Potential::on_grid(LatticeGrid grid) const {
  require(support_radius_ <= grid.half_width(), ErrorCode::GridMismatch, "potential support does not fit target grid");
  Potential V(grid, support_radius_);
  for (int n = -support_radius_; n <= support_radius_; ++n) V.values_.at(n) = at(n);
  return V;
}

std::vector<std::pair<int, double>> Potential::nonzero_sites() const {
  std::vector<std::pair<int, double>> out;
  for (int n = -support_radius_; n <= support_radius_; ++n)
    if (at(n) != 0.0) out.emplace_back(n, at(n));
  return out;
}

void WeightSpec::validate(const LatticeGrid& grid) const {
  require(a >= 0.0, ErrorCode::InvalidArgument, "exponential weight a must be >= 0");
  require(2.0 * a * grid.half_width() < 700.0, ErrorCode::Overflow, "e^{2aN} overflows double range");
  require(sigma > 1.0, ErrorCode::InvalidArgument, "polynomial weight sigma must exceed 1");
  require(r > 0.0 && r < 1.0, ErrorCode::InvalidArgument, "generating radius r must lie in (0,1)");
}

namespace {

template <class Vec>
void stencil(std::span<const double> potential, const Vec& u, Vec& out) {
  const Eigen::Index n = u.size();
  require(static_cast<Eigen::Index>(potential.size()) == n, ErrorCode::GridMismatch, "potential/field length mismatch");
  out.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto left = i > 0 ? u[i - 1] : typename Vec::Scalar(0);
    auto right = i + 1 < n ? u[i + 1] : typename Vec::Scalar(0);
    out[i] = (2.0 + potential[i]) * u[i] - left - right;
  }
}

std::span<const double> as_span(const RealVector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace

void apply_H_inplace(std::span<const double> potential, const ComplexVector& u, ComplexVector& out) {
  stencil(potential, u, out);
}
void apply_H_inplace(std::span<const double> potential, const RealVector& u, RealVector& out) {
  stencil(potential, u, out);
}

ComplexField apply_H(const ComplexField& u, const Potential& V) {
  require(u.grid() == V.grid(), ErrorCode::GridMismatch, "field and potential on different grids");
  ComplexVector out;
  apply_H_inplace(as_span(V.values()), u.values(), out);
  return ComplexField(u.grid(), std::move(out));
}

RealField apply_H(const RealField& u, const Potential& V) {
  require(u.grid() == V.grid(), ErrorCode::GridMismatch, "field and potential on different grids");
  RealVector out;
  apply_H_inplace(as_span(V.values()), u.values(), out);
  return RealField(u.grid(), std::move(out));
}

double inner(const ComplexVector& u, const ComplexVector& v) {
  require(u.size() == v.size(), ErrorCode::GridMismatch, "inner product of fields with different lengths");
  return (u.real().array() * v.real().array() + u.imag().array() * v.imag().array()).sum();
}

double inner(const ComplexField& u, const ComplexField& v) {
  u.check_same_grid(v);
  return inner(u.values(), v.values());
}

double inner(const RealField& u, const RealField& v) {
  u.check_same_grid(v);
  return u.values().dot(v.values());
}

cplx complex_inner(const ComplexVector& u, const ComplexVector& v) {
  // Σ u conj(v) = ⟨u, v⟩ + i⟨u, i v⟩ in terms of the real pairing.
  const ComplexVector iv = cplx(0.0, 1.0) * v;
  return {inner(u, v), inner(u, iv)};
}

RealVector poly_weight_sq(const LatticeGrid& grid, double sigma) {
  RealVector w(grid.site_count());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double n = grid.site(i);
    w[i] = std::pow(1.0 + n * n, sigma);
  }
  return w;
}

RealVector exp_weight_sq(const LatticeGrid& grid, double a) {
  require(2.0 * a * grid.half_width() < 700.0, ErrorCode::Overflow, "e^{2aN} overflows double range");
  RealVector w(grid.site_count());
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = std::exp(2.0 * a * std::abs(grid.site(i)));
  return w;
}

namespace {

double norm_of_magnitude_sq(const RealVector& mag_sq, const LatticeGrid& grid, NormSpec spec) {
  switch (spec.kind) {
    case NormKind::L1: return mag_sq.cwiseSqrt().sum();
    case NormKind::L2: return std::sqrt(mag_sq.sum());
    case NormKind::Linf: return mag_sq.size() ? std::sqrt(mag_sq.maxCoeff()) : 0.0;
    case NormKind::L2Poly: return std::sqrt(poly_weight_sq(grid, spec.parameter).dot(mag_sq));
    case NormKind::L2Exp:
      require(spec.parameter >= 0.0, ErrorCode::InvalidArgument, "exponential weight must be >= 0");
      return std::sqrt(exp_weight_sq(grid, spec.parameter).dot(mag_sq));
  }
  return 0.0;
}

}  // namespace

double norm(const ComplexField& u, NormSpec spec) {
  return norm_of_magnitude_sq(u.values().cwiseAbs2(), u.grid(), spec);
}

double norm(const RealField& u, NormSpec spec) {
  return norm_of_magnitude_sq(u.values().cwiseAbs2(), u.grid(), spec);
}

double log_linear_decay_slope(const RealVector& magnitude, const LatticeGrid& grid, double floor) {
  const double peak = magnitude.size() ? magnitude.maxCoeff() : 0.0;
  require(peak > 0.0, ErrorCode::InvalidArgument, "decay slope of a zero field");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int count = 0;
  for (Eigen::Index i = 0; i < magnitude.size(); ++i) {
    if (magnitude[i] <= floor * peak) continue;
    const double x = std::abs(grid.site(i));
    const double y = std::log(magnitude[i]);
    sx += x; sy += y; sxx += x * x; sxy += x * y;
    ++count;
  }
  require(count >= 3, ErrorCode::InvalidArgument, "too few sites above floor for a decay fit");
  const double denom = count * sxx - sx * sx;
  return (count * sxy - sx * sy) / denom;
}

}  // namespace qpdnls
