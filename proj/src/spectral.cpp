#include "qpdnls/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <lapacke.h>

namespace qpdnls {

namespace {

constexpr double kBandLow = 0.0;
constexpr double kBandHigh = 4.0;

void fix_sign(Eigen::Ref<RealVector> v) {
  Eigen::Index imax = 0;
  v.cwiseAbs().maxCoeff(&imax);
  if (v[imax] < 0.0) v = -v;
}

struct TridiagonalEigen {
  RealVector values;
  Eigen::MatrixXd vectors;  // column-major, one column per requested eigenvalue
};

// LAPACK dstevr on H = tridiag(-1, 2 + V, -1). `first`/`last` are 1-based
// inclusive index bounds; a zero `first` requests everything.
TridiagonalEigen tridiagonal_eigen(const RealVector& potential, bool vectors, int first = 0, int last = 0) {
  const int n = static_cast<int>(potential.size());
  std::vector<double> d(n), e(std::max(n, 1), -1.0);
  for (int i = 0; i < n; ++i) d[i] = 2.0 + potential[i];
  const char range = first > 0 ? 'I' : 'A';
  const int count_max = first > 0 ? last - first + 1 : n;
  TridiagonalEigen out;
  std::vector<double> w(n);
  std::vector<lapack_int> isuppz(2 * std::max(count_max, 1));
  Eigen::MatrixXd z;
  if (vectors) z.resize(n, count_max);
  lapack_int m = 0;
  const lapack_int info =
      LAPACKE_dstevr(LAPACK_COL_MAJOR, vectors ? 'V' : 'N', range, n, d.data(), e.data(), 0.0, 0.0, first, last, 0.0,
                     &m, w.data(), vectors ? z.data() : nullptr, vectors ? n : 1, isuppz.data());
  require(info == 0, ErrorCode::NoConvergence, "dstevr failed with info " + std::to_string(info));
  out.values = Eigen::Map<RealVector>(w.data(), m);
  if (vectors) out.vectors = z.leftCols(m);
  return out;
}

}  // namespace

EdgeResonanceFlag edge_resonance_flag(const Potential& V, double tolerance) {
  const int R = V.support_radius();
  auto shoot = [&](double lambda, double sign) {
    // Free solutions at the edge: sign^n (A + Bn). Start bounded (B = 0) on the left.
    double prev = std::pow(sign, -R - 2), cur = std::pow(sign, -R - 1);
    for (int n = -R - 1; n <= R + 1; ++n) {
      const double vn = std::abs(n) <= R ? V.at(n) : 0.0;
      const double next = (2.0 + vn - lambda) * cur - prev;
      prev = cur;
      cur = next;
    }
    // prev, cur sit at sites R+1 and R+2; strip the sign to read off A + Bn.
    const double w1 = prev * std::pow(sign, R + 1), w2 = cur * std::pow(sign, R + 2);
    const double slope = w2 - w1;
    const double scale = std::max({std::abs(w1), std::abs(w2), 1.0});
    return std::abs(slope) / scale;
  };
  EdgeResonanceFlag flag;
  flag.tolerance = tolerance;
  flag.growth_at_0 = shoot(kBandLow, 1.0);
  flag.growth_at_4 = shoot(kBandHigh, -1.0);
  return flag;
}

double SpectralData::e(int j) const {
  require(has_pair() && (j == 1 || j == 2), ErrorCode::WrongDiscreteCount, "e_j requested without a discrete pair");
  return eigenvalues_[discrete_indices_[j - 1]];
}

const RealField& SpectralData::phi(int j) const {
  require(has_pair() && (j == 1 || j == 2), ErrorCode::WrongDiscreteCount, "φ_j requested without a discrete pair");
  return discrete_vectors_[j - 1];
}

double SpectralData::distance_to_spectrum(double lambda) const {
  return (eigenvalues_.array() - lambda).abs().minCoeff();
}

SpectralData eigendecompose(const Potential& V, const SpectralOptions& opts) {
  require(opts.band_margin > 0.0, ErrorCode::InvalidArgument, "band margin must be positive");
  SpectralData spec(V);
  spec.band_margin_ = opts.band_margin;
  const int n = V.grid().site_count();

  if (opts.full_basis) {
    auto full = tridiagonal_eigen(V.values(), true);
    spec.eigenvalues_ = std::move(full.values);
    spec.eigenvectors_ = std::move(full.vectors);
  } else {
    spec.eigenvalues_ = tridiagonal_eigen(V.values(), false).values;
  }
  require(spec.eigenvalues_.size() == n, ErrorCode::NoConvergence, "eigensolver returned a partial spectrum");

  const double delta = opts.band_margin;
  for (int k = 0; k < n; ++k) {
    const double lam = spec.eigenvalues_[k];
    if (lam < -delta || lam > kBandHigh + delta) {
      spec.discrete_indices_.push_back(k);
    } else if (lam < kBandLow || lam > kBandHigh) {
      fail(ErrorCode::DegenerateGap, "eigenvalue " + std::to_string(lam) + " lies within the band margin " +
                                         std::to_string(delta) + " of [0,4]");
    }
  }
  if (opts.require_pair)
    require(spec.discrete_indices_.size() == 2, ErrorCode::WrongDiscreteCount,
            "expected 2 discrete eigenvalues, found " + std::to_string(spec.discrete_indices_.size()));

  for (int k : spec.discrete_indices_) {
    RealVector v;
    if (opts.full_basis) {
      v = spec.eigenvectors_.col(k);
    } else {
      v = tridiagonal_eigen(V.values(), true, k + 1, k + 1).vectors.col(0);
    }
    fix_sign(v);
    if (opts.full_basis) spec.eigenvectors_.col(k) = v;
    spec.discrete_vectors_.emplace_back(V.grid(), std::move(v));
  }
  return spec;
}

ResonanceReport check_nonresonance(double e1, double e2, long scan_bound) {
  require(e1 < e2, ErrorCode::InvalidArgument, "non-resonance check needs e1 < e2");
  require(scan_bound >= 1, ErrorCode::InvalidArgument, "scan bound must be >= 1");
  const double step = e2 - e1;
  auto value = [&](long n) { return e1 + double(n) * step; };
  auto outside_distance = [](double x) { return x < kBandLow ? kBandLow - x : (x > kBandHigh ? x - kBandHigh : 0.0); };

  ResonanceReport report;
  report.scan_range = scan_bound;
  report.min_margin = std::numeric_limits<double>::infinity();

  // Violations can only occur for n in [(0 - e1)/step, (4 - e1)/step].
  const long lo = static_cast<long>(std::ceil((kBandLow - e1) / step));
  const long hi = static_cast<long>(std::floor((kBandHigh - e1) / step));
  require(hi - lo < 10'000'000, ErrorCode::InvalidArgument, "e2 - e1 too small for an explicit scan");
  for (long n = std::min(lo, -scan_bound); n <= std::max(hi, scan_bound); ++n) {
    const double x = value(n);
    const double dist = outside_distance(x);
    if (dist < report.min_margin) {
      report.min_margin = dist;
      report.margin_argmin = n;
    }
    if (x >= kBandLow && x <= kBandHigh) {
      report.violations.push_back({n, x, std::min(x - kBandLow, kBandHigh - x)});
      if (std::abs(n) > scan_bound) report.tail_proven = false;
    }
  }
  report.pass = report.violations.empty();
  return report;
}

ShiftedSolver::ShiftedSolver(const Potential& V, double lambda)
    : lambda_(lambda), n_(V.grid().site_count()), dl_(std::max(n_ - 1, 1), -1.0), d_(n_),
      du_(std::max(n_ - 1, 1), -1.0), du2_(std::max(n_ - 2, 1)), ipiv_(n_) {
  for (int i = 0; i < n_; ++i) d_[i] = 2.0 + V.values()[i] - lambda;
  const lapack_int info = LAPACKE_dgttrf(n_, dl_.data(), d_.data(), du_.data(), du2_.data(), ipiv_.data());
  require(info == 0, ErrorCode::NearSingular, "H - λ is singular at λ = " + std::to_string(lambda));
}

void ShiftedSolver::solve_inplace(RealVector& rhs) const {
  require(rhs.size() == n_, ErrorCode::GridMismatch, "right-hand side length mismatch");
  const lapack_int info = LAPACKE_dgttrs(LAPACK_COL_MAJOR, 'N', n_, 1, dl_.data(), d_.data(), du_.data(), du2_.data(),
                                         ipiv_.data(), rhs.data(), n_);
  require(info == 0, ErrorCode::NearSingular, "tridiagonal back substitution failed");
}

RealVector ShiftedSolver::solve(const RealVector& rhs) const {
  RealVector x = rhs;
  solve_inplace(x);
  return x;
}

ComplexVector ShiftedSolver::solve(const ComplexVector& rhs) const {
  RealVector re = rhs.real(), im = rhs.imag();
  solve_inplace(re);
  solve_inplace(im);
  ComplexVector out(rhs.size());
  out.real() = re;
  out.imag() = im;
  return out;
}

ComplexField resolvent_solve(const SpectralData& spec, double lambda, const ComplexField& f, double delta_min) {
  require(f.grid() == spec.grid(), ErrorCode::GridMismatch, "field and spectral data on different grids");
  const double dist = spec.distance_to_spectrum(lambda);
  require(dist >= delta_min, ErrorCode::NearSingular,
          "λ = " + std::to_string(lambda) + " is " + std::to_string(dist) + " from the spectrum");
  return ComplexField(f.grid(), ShiftedSolver(spec.potential(), lambda).solve(f.values()));
}

ComplexField resolvent_solve(const Potential& V, double lambda, const ComplexField& f, double delta_min) {
  require(f.grid() == V.grid(), ErrorCode::GridMismatch, "field and potential on different grids");
  const RealVector eig = tridiagonal_eigen(V.values(), false).values;
  const double dist = (eig.array() - lambda).abs().minCoeff();
  require(dist >= delta_min, ErrorCode::NearSingular,
          "λ = " + std::to_string(lambda) + " is " + std::to_string(dist) + " from the spectrum");
  return ComplexField(f.grid(), ShiftedSolver(V, lambda).solve(f.values()));
}

struct ProjectedResolvent::Impl {
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  RealVector phi;
  int n = 0;
};

ProjectedResolvent::ProjectedResolvent(const SpectralData& spec, int j) : impl_(std::make_unique<Impl>()), j_(j) {
  const double ej = spec.e(j);
  const RealVector& phi = spec.phi(j).values();
  const RealVector& V = spec.potential().values();
  const int n = static_cast<int>(phi.size());
  impl_->phi = phi;
  impl_->n = n;

  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(5 * n);
  for (int i = 0; i < n; ++i) {
    entries.emplace_back(i, i, 2.0 + V[i] - ej);
    if (i > 0) entries.emplace_back(i, i - 1, -1.0);
    if (i + 1 < n) entries.emplace_back(i, i + 1, -1.0);
    if (phi[i] != 0.0) {
      entries.emplace_back(i, n, phi[i]);
      entries.emplace_back(n, i, phi[i]);
    }
  }
  Eigen::SparseMatrix<double> bordered(n + 1, n + 1);
  bordered.setFromTriplets(entries.begin(), entries.end());
  bordered.makeCompressed();
  impl_->lu.compute(bordered);
  require(impl_->lu.info() == Eigen::Success, ErrorCode::NearSingular, "bordered system for (H - e_j)|φ^⊥ is singular");
}

ProjectedResolvent::~ProjectedResolvent() = default;
ProjectedResolvent::ProjectedResolvent(ProjectedResolvent&&) noexcept = default;
ProjectedResolvent& ProjectedResolvent::operator=(ProjectedResolvent&&) noexcept = default;

RealVector ProjectedResolvent::solve(const RealVector& f, bool check, double tolerance) const {
  require(f.size() == impl_->n, ErrorCode::GridMismatch, "right-hand side length mismatch");
  if (check) {
    const double overlap = std::abs(f.dot(impl_->phi));
    require(overlap <= tolerance * std::max(f.norm(), std::numeric_limits<double>::min()), ErrorCode::NotOrthogonal,
            "right-hand side has overlap " + std::to_string(overlap) + " with φ_" + std::to_string(j_));
  }
  RealVector rhs(impl_->n + 1);
  rhs.head(impl_->n) = f;
  rhs[impl_->n] = 0.0;
  RealVector sol = impl_->lu.solve(rhs);
  return sol.head(impl_->n);
}

ComplexVector ProjectedResolvent::solve(const ComplexVector& f, bool check, double tolerance) const {
  ComplexVector out(f.size());
  out.real() = solve(RealVector(f.real()), check, tolerance);
  out.imag() = solve(RealVector(f.imag()), check, tolerance);
  return out;
}

ComplexField projected_resolvent_solve(const SpectralData& spec, int j, const ComplexField& f) {
  require(f.grid() == spec.grid(), ErrorCode::GridMismatch, "field and spectral data on different grids");
  return ComplexField(f.grid(), ProjectedResolvent(spec, j).solve(f.values()));
}

ComplexField project(const SpectralData& spec, const ComplexField& u, Projection which) {
  require(u.grid() == spec.grid(), ErrorCode::GridMismatch, "field and spectral data on different grids");
  ComplexVector pd = ComplexVector::Zero(u.size());
  for (std::size_t k = 0; k < spec.discrete_indices().size(); ++k) {
    const RealVector& phi = spec.discrete_vector(k).values();
    // ⟨u, φ⟩ + i⟨u, iφ⟩ = Σ u φ for real φ.
    const cplx c(u.values().real().dot(phi), u.values().imag().dot(phi));
    pd += c * phi.cast<cplx>();
  }
  if (which == Projection::Pd) return ComplexField(u.grid(), std::move(pd));
  return ComplexField(u.grid(), u.values() - pd);
}

ComplexField propagate_linear(const SpectralData& spec, const ComplexField& u0, double t) {
  require(spec.has_full_basis(), ErrorCode::InvalidArgument, "linear propagator needs the full eigenbasis");
  require(u0.grid() == spec.grid(), ErrorCode::GridMismatch, "field and spectral data on different grids");
  const Eigen::MatrixXd& Vk = spec.eigenvectors();
  const RealVector cr = Vk.transpose() * u0.values().real();
  const RealVector ci = Vk.transpose() * u0.values().imag();
  const Eigen::ArrayXd phase = -t * spec.eigenvalues().array();
  const Eigen::ArrayXd c = phase.cos(), s = phase.sin();
  // (cr + i ci)(c + i s)
  const RealVector nr = (cr.array() * c - ci.array() * s).matrix();
  const RealVector ni = (cr.array() * s + ci.array() * c).matrix();
  ComplexVector out(u0.size());
  out.real() = Vk * nr;
  out.imag() = Vk * ni;
  return ComplexField(u0.grid(), std::move(out));
}

DecayFit decay_fit(const SpectralData& spec, const ComplexField& u0, std::pair<double, double> window, int samples) {
  const auto [t_min, t_max] = window;
  require(t_min > 0.0 && t_max > t_min && samples >= 3, ErrorCode::InvalidArgument, "invalid decay window");
  require(t_max < 0.5 * spec.grid().half_width(), ErrorCode::WindowTooLate,
          "t_max = " + std::to_string(t_max) + " reaches the boundary (N/2 = " +
              std::to_string(0.5 * spec.grid().half_width()) + ")");
  DecayFit fit;
  const double ratio = std::log(t_max / t_min) / (samples - 1);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int k = 0; k < samples; ++k) {
    const double t = t_min * std::exp(ratio * k);
    const double linf = norm(propagate_linear(spec, u0, t), NormSpec::linf());
    fit.times.push_back(t);
    fit.linf.push_back(linf);
    const double x = std::log(t), y = std::log(linf);
    sx += x; sy += y; sxx += x * x; sxy += x * y;
  }
  const double n = samples;
  fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double intercept = (sy - fit.slope * sx) / n;
  fit.prefactor = std::exp(intercept);
  double ss = 0;
  for (int k = 0; k < samples; ++k) {
    const double r = std::log(fit.linf[k]) - (intercept + fit.slope * std::log(fit.times[k]));
    ss += r * r;
  }
  fit.fit_residual = std::sqrt(ss / n);
  return fit;
}

DecayFit decay_exponent(const SpectralData& spec, std::pair<double, double> window, int samples) {
  const auto delta0 = ComplexField::delta(spec.grid(), 0);
  return decay_fit(spec, project(spec, delta0, Projection::Pc), window, samples);
}

}  // namespace qpdnls
