#include "qpdnls/bound_states.hpp"

#include <cmath>
#include <string>

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

namespace qpdnls {

namespace {

std::span<const double> span_of(const RealVector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

struct NewtonState {
  RealVector q;
  double e_shift = 0.0;
  std::vector<double> history;
  int iterations = 0;
  bool converged = false;
};

class BoundStateProblem {
 public:
  BoundStateProblem(const SpectralData& spec, int j, int power)
      : V_(spec.potential().values()), e_(spec.e(j)), phi_(spec.phi(j).values()), p_(power) {}

  // F(q, s) and the coefficient ⟨f(q), φ⟩ entering it.
  RealVector residual(const RealVector& q, double s, double* coupling = nullptr) const {
    const RealVector u = phi_ + q;
    const RealVector f = u.array().abs().pow(2 * p_) * u.array();
    const double c = f.dot(phi_);
    const double sp = std::pow(s, p_);
    RealVector Hq;
    apply_H_inplace(span_of(V_), q, Hq);
    RealVector F = Hq - e_ * q - sp * c * q + sp * (f - c * phi_);
    if (coupling) *coupling = c;
    return F;
  }

  // Solves Q J δ = -F with δ ⊥ φ, where
  //   J = (H - e - s^p c) + s^p diag(f') - s^p (q + φ) (φ∘f')^T,   f' = (2p+1)|φ+q|^{2p}.
  // The tridiagonal part is bordered by φ and factored sparsely; the rank-one
  // term is handled by Sherman-Morrison.
  RealVector newton_step(const RealVector& q, double s, double c, const RealVector& F) const {
    const int n = static_cast<int>(q.size());
    const double sp = std::pow(s, p_);
    const RealVector u = phi_ + q;
    const RealVector fprime = (2.0 * p_ + 1.0) * u.array().abs().pow(2 * p_);

    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(5 * n);
    for (int i = 0; i < n; ++i) {
      entries.emplace_back(i, i, 2.0 + V_[i] - e_ - sp * c + sp * fprime[i]);
      if (i > 0) entries.emplace_back(i, i - 1, -1.0);
      if (i + 1 < n) entries.emplace_back(i, i + 1, -1.0);
      entries.emplace_back(i, n, -phi_[i]);
      entries.emplace_back(n, i, phi_[i]);
    }
    Eigen::SparseMatrix<double> M(n + 1, n + 1);
    M.setFromTriplets(entries.begin(), entries.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu(M);
    require(lu.info() == Eigen::Success, ErrorCode::NoConvergence, "bound-state Jacobian is singular");

    RealVector rhs = RealVector::Zero(n + 1);
    rhs.head(n) = -F;
    RealVector x = lu.solve(rhs);
    if (sp == 0.0) return x.head(n);

    // (M + a b^T)^{-1} = M^{-1} - M^{-1} a b^T M^{-1} / (1 + b^T M^{-1} a)
    RealVector a = RealVector::Zero(n + 1), b = RealVector::Zero(n + 1);
    a.head(n) = -sp * u;
    b.head(n) = phi_.cwiseProduct(fprime);
    const RealVector Ma = lu.solve(a);
    const double denom = 1.0 + b.dot(Ma);
    require(std::abs(denom) > 1e-12, ErrorCode::NoConvergence, "bound-state Jacobian update is singular");
    x -= (b.dot(x) / denom) * Ma;
    return x.head(n);
  }

  NewtonState solve(double s, RealVector q0, const BoundStateOptions& opts) const {
    NewtonState st;
    st.q = std::move(q0);
    double c = 0.0;
    RealVector F = residual(st.q, s, &c);
    double r = F.norm();
    st.history.push_back(r);
    for (int it = 0; it < opts.max_iterations; ++it) {
      if (r <= opts.tolerance) {
        st.converged = true;
        break;
      }
      RealVector dq = newton_step(st.q, s, c, F);
      st.q += dq;
      st.q -= st.q.dot(phi_) * phi_;  // keep the iterate exactly in φ^⊥
      F = residual(st.q, s, &c);
      const double r_new = F.norm();
      st.history.push_back(r_new);
      ++st.iterations;
      if (!std::isfinite(r_new)) break;
      // Stalled at roundoff: accept if already near tolerance.
      if (r_new >= r && r_new <= 100.0 * opts.tolerance) {
        st.converged = true;
        r = r_new;
        break;
      }
      r = r_new;
    }
    if (r <= opts.tolerance) st.converged = true;
    st.e_shift = std::pow(s, p_) * c;
    return st;
  }

  const RealVector& phi() const { return phi_; }

 private:
  const RealVector& V_;
  double e_;
  const RealVector& phi_;
  int p_;
};

}  // namespace

ComplexField BoundStateProfile::at(std::complex<double> z) const {
  require(std::abs(std::abs(z) - rho) <= 1e-12 * std::max(1.0, rho), ErrorCode::AmplitudeMismatch,
          "|z| = " + std::to_string(std::abs(z)) + " but profile has rho = " + std::to_string(rho));
  const RealVector t = phi.values() + q.values();
  return ComplexField(phi.grid(), z * t.cast<cplx>());
}

BoundStateProfile solve_bound_state(const SpectralData& spec, int j, double rho, const BoundStateOptions& opts) {
  require(j == 1 || j == 2, ErrorCode::InvalidArgument, "bound state index must be 1 or 2");
  require(rho >= 0.0 && std::isfinite(rho), ErrorCode::InvalidArgument, "amplitude must be finite and >= 0");
  require(opts.power >= 1, ErrorCode::InvalidArgument, "nonlinearity power must be >= 1");

  BoundStateProblem problem(spec, j, opts.power);
  const double s = rho * rho;
  const int n = spec.grid().site_count();

  NewtonState st = problem.solve(s, RealVector::Zero(n), opts);
  if (!st.converged) {
    // Continuation: march ρ up from zero, warm-starting each solve.
    RealVector q = RealVector::Zero(n);
    bool ok = true;
    for (double r = opts.continuation_step; ok; r = std::min(rho, r + opts.continuation_step)) {
      NewtonState step = problem.solve(r * r, q, opts);
      ok = step.converged;
      if (ok) q = step.q;
      if (r >= rho) {
        st = std::move(step);
        break;
      }
    }
    require(ok && st.converged, ErrorCode::NoConvergence,
            "bound-state Newton did not converge at rho = " + std::to_string(rho) + " (amplitude too large?)");
  }

  BoundStateProfile prof{.j = j,
                         .rho = rho,
                         .power = opts.power,
                         .phi = spec.phi(j),
                         .q = RealField(spec.grid(), std::move(st.q)),
                         .e_shift = st.e_shift,
                         .E = spec.e(j) + st.e_shift,
                         .residual = 0.0,
                         .iterations = st.iterations,
                         .residual_history = std::move(st.history),
                         .extrapolated = rho > opts.rho_max};
  const double delta = spec.band_margin();
  require(prof.E < -delta || prof.E > 4.0 + delta, ErrorCode::GapViolation,
          "E_" + std::to_string(j) + " = " + std::to_string(prof.E) + " left the spectral gap");
  prof.residual = bound_state_residual(spec, prof, rho);
  return prof;
}

double bound_state_energy(double e, const RealVector& phi, const RealVector& q, double rho, int power) {
  require(phi.size() == q.size(), ErrorCode::GridMismatch, "profile and correction lengths differ");
  const RealVector u = phi + q;
  const double c = (u.array().abs().pow(2 * power) * u.array() * phi.array()).sum();
  return e + std::pow(rho, 2 * power) * c;
}

double bound_state_energy(const SpectralData& spec, int j, const RealField& q, double rho, int power) {
  require(q.grid() == spec.grid(), ErrorCode::GridMismatch, "correction and spectral data on different grids");
  return bound_state_energy(spec.e(j), spec.phi(j).values(), q.values(), rho, power);
}

double bound_state_residual(const SpectralData& spec, const BoundStateProfile& profile, std::complex<double> z) {
  const ComplexField u = profile.at(z);
  ComplexVector out;
  apply_H_inplace(span_of(spec.potential().values()), u.values(), out);
  const Eigen::ArrayXd mag = u.values().cwiseAbs().array().pow(2 * profile.power);
  out.array() += -profile.E * u.values().array() + mag.cast<cplx>() * u.values().array();
  return out.norm();
}

}  // namespace qpdnls
