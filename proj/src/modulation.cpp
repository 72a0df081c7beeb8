#include "qpdnls/modulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

namespace qpdnls {

namespace {

// Re Σ a conj(b).
double pairing(const ComplexVector& a, const ComplexVector& b) { return b.dot(a).real(); }

cplx ipow(cplx z, int k) {
  cplx out = 1.0;
  for (int i = 0; i < k; ++i) out *= z;
  return out;
}

constexpr cplx I{0.0, 1.0};

// Field layout: [φ̃1, φ̃2, v_{1,0..M}, v_{2,0..M}].
std::vector<RealVector> ansatz_fields(const QPSolution& sol) {
  std::vector<RealVector> f;
  const int M = sol.coeffs.m_max();
  f.reserve(2 * M + 4);
  f.push_back(sol.prof1.tilde_phi().values());
  f.push_back(sol.prof2.tilde_phi().values());
  for (int j = 1; j <= 2; ++j)
    for (int m = 0; m <= M; ++m) f.push_back(sol.coeffs(j, m));
  return f;
}

}  // namespace

struct ModulationContext::Chart {
  double s1c = 0.0, s2c = 0.0;
  int m_max = 0;
  std::vector<RealVector> F, dF1, dF2;
};

ModulationContext::ModulationContext(const SpectralData& construction_spec, ModulationOptions opts)
    : spec_(construction_spec), opts_(std::move(opts)), ws_(spec_, opts_.qp.m_max, opts_.qp.delta_min) {
  require(opts_.smallness > 0.0, ErrorCode::InvalidArgument, "smallness bound must be positive");
  require(opts_.max_iterations >= 1, ErrorCode::InvalidArgument, "need at least one decomposition iteration");
  require(opts_.recenter_tol > 0.0, ErrorCode::InvalidArgument, "recenter tolerance must be positive");
}

ModulationContext::~ModulationContext() = default;

ModulationContext::Stats ModulationContext::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

std::shared_ptr<const QPSolution> ModulationContext::solution(double rho1, double rho2) const {
  const auto key = std::make_pair(rho1, rho2);
  std::shared_ptr<const QPSolution> seed;
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [k, sol] : cache_) {
      const double d = std::hypot(k.first - rho1, k.second - rho2);
      if (d < best) {
        best = d;
        seed = sol;
      }
    }
  }
  auto sol = std::make_shared<const QPSolution>(solve_qp(ws_, rho1, rho2, opts_.qp, seed ? &seed->coeffs : nullptr));
  std::lock_guard lock(mutex_);
  ++stats_.qp_solves;
  if (cache_.size() >= 4096) cache_.clear();  // bounded; long runs revisit only nearby amplitudes
  cache_.emplace(key, sol);
  return sol;
}

ComplexField ModulationContext::psi(std::complex<double> z1, std::complex<double> z2) const {
  return assemble_psi(*solution(std::abs(z1), std::abs(z2)), z1, z2);
}

std::shared_ptr<const ModulationContext::Chart> ModulationContext::build_chart(double s1, double s2) const {
  auto chart = std::make_shared<Chart>();
  chart->s1c = s1;
  chart->s2c = s2;
  chart->m_max = opts_.qp.m_max;
  const double smax = opts_.qp.bound.rho_max * opts_.qp.bound.rho_max;
  auto fields_at = [&](double a, double b) { return ansatz_fields(*solution(std::sqrt(a), std::sqrt(b))); };
  chart->F = fields_at(s1, s2);

  // ∂_s by a three-point rule; one-sided at the edges of [0, ρ_max²].
  auto derivative = [&](int j) {
    const double s = j == 1 ? s1 : s2;
    const double h = std::max(1e-2 * s, 1e-5);
    auto at = [&](double t) { return j == 1 ? fields_at(t, s2) : fields_at(s1, t); };
    std::vector<RealVector> d(chart->F.size());
    if (s - h >= 0.0 && s + h <= smax) {
      const auto p = at(s + h), m = at(s - h);
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = (p[k] - m[k]) / (2.0 * h);
    } else {
      const double g = s - h < 0.0 ? h : -h;
      const auto p1 = at(s + g), p2 = at(s + 2.0 * g);
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = (-3.0 * chart->F[k] + 4.0 * p1[k] - p2[k]) / (2.0 * g);
    }
    return d;
  };
  chart->dF1 = derivative(1);
  chart->dF2 = derivative(2);
  return chart;
}

std::shared_ptr<const ModulationContext::Chart> ModulationContext::chart_for(double s1, double s2) const {
  {
    std::lock_guard lock(mutex_);
    if (chart_ && std::abs(s1 - chart_->s1c) <= opts_.recenter_tol && std::abs(s2 - chart_->s2c) <= opts_.recenter_tol)
      return chart_;
  }
  auto chart = build_chart(s1, s2);
  std::lock_guard lock(mutex_);
  chart_ = chart;
  ++stats_.recenters;
  return chart;
}

TangentFrame ModulationContext::frame(std::complex<double> z1, std::complex<double> z2) const {
  const double s1 = std::norm(z1), s2 = std::norm(z2);
  require(std::sqrt(s1) <= opts_.qp.bound.rho_max && std::sqrt(s2) <= opts_.qp.bound.rho_max,
          ErrorCode::SmallnessViolation, "modulation parameters exceed rho_max");
  const auto chart = chart_for(s1, s2);
  const int M = chart->m_max;
  const double ds1 = s1 - chart->s1c, ds2 = s2 - chart->s2c;
  const auto n = static_cast<Eigen::Index>(chart->F.front().size());

  // Monomials c_k(z) multiplying field k, and their four real derivatives.
  const std::size_t K = chart->F.size();
  std::vector<cplx> c(K);
  std::vector<std::array<cplx, 4>> dc(K);
  c[0] = z1;
  dc[0] = {1.0, I, 0.0, 0.0};
  c[1] = z2;
  dc[1] = {0.0, 0.0, 1.0, I};
  const cplx z1b = std::conj(z1), z2b = std::conj(z2);
  for (int m = 0; m <= M; ++m) {
    const cplx a1 = ipow(z1, m), b2 = ipow(z2b, m);
    const cplx lo2 = m > 0 ? ipow(z2b, m - 1) : 0.0;
    const std::size_t k1 = 2 + m;
    c[k1] = a1 * z1 * b2;
    const cplx d1 = double(m + 1) * a1 * b2, d2 = double(m) * a1 * z1 * lo2;
    dc[k1] = {d1, I * d1, d2, -I * d2};

    const cplx a2 = ipow(z1b, m), lo1 = m > 0 ? ipow(z1b, m - 1) : 0.0, b1 = ipow(z2, m);
    const std::size_t k2 = 3 + M + m;
    c[k2] = a2 * b1 * z2;
    const cplx e1 = double(m) * lo1 * b1 * z2, e2 = double(m + 1) * a2 * b1;
    dc[k2] = {e1, -I * e1, e2, I * e2};
  }

  TangentFrame out{ComplexField(spec_.grid(), ComplexVector::Zero(n)),
                   std::vector<ComplexField>(4, ComplexField(spec_.grid(), ComplexVector::Zero(n)))};
  ComplexVector& psi = out.psi.values();
  ComplexVector g1 = ComplexVector::Zero(n), g2 = ComplexVector::Zero(n);  // Σ c_k ∂_{s_j}F_k
  for (std::size_t k = 0; k < K; ++k) {
    const RealVector Fk = chart->F[k] + ds1 * chart->dF1[k] + ds2 * chart->dF2[k];
    if (c[k] != 0.0) {
      psi += c[k] * Fk.cast<cplx>();
      g1 += c[k] * chart->dF1[k].cast<cplx>();
      g2 += c[k] * chart->dF2[k].cast<cplx>();
    }
    for (int q = 0; q < 4; ++q)
      if (dc[k][q] != 0.0) out.d[q].values() += dc[k][q] * Fk.cast<cplx>();
  }
  // ∂|z_j|²/∂z_{j,A} = 2 z_{j,A}.
  out.d[0].values() += 2.0 * z1.real() * g1;
  out.d[1].values() += 2.0 * z1.imag() * g1;
  out.d[2].values() += 2.0 * z2.real() * g2;
  out.d[3].values() += 2.0 * z2.imag() * g2;
  return out;
}

ComplexField d_psi(const ModulationContext& ctx, std::complex<double> z1, std::complex<double> z2, int j, int A,
                   double h) {
  require((j == 1 || j == 2) && (A == 0 || A == 1), ErrorCode::InvalidArgument, "derivative index out of range");
  const std::complex<double> zj = j == 1 ? z1 : z2;
  if (h <= 0.0) h = std::max(1e-5, 1e-3 * std::abs(zj));
  const cplx step = A == 0 ? cplx(h, 0.0) : cplx(0.0, h);
  auto shifted = [&](cplx dz) { return j == 1 ? ctx.psi(z1 + dz, z2) : ctx.psi(z1, z2 + dz); };
  ComplexVector d = (shifted(step).values() - shifted(-step).values()) / (2.0 * h);
  return ComplexField(ctx.spec().grid(), std::move(d));
}

ComplexField embed_centered(const ComplexField& f, const LatticeGrid& target) {
  const int n = f.grid().half_width(), N = target.half_width();
  require(N >= n, ErrorCode::GridMismatch, "target grid is smaller than the field's grid");
  ComplexVector out = ComplexVector::Zero(target.site_count());
  out.segment(N - n, f.grid().site_count()) = f.values();
  return ComplexField(target, std::move(out));
}

ComplexField restrict_centered(const ComplexField& f, const LatticeGrid& target) {
  const int n = target.half_width(), N = f.grid().half_width();
  require(N >= n, ErrorCode::GridMismatch, "target grid is larger than the field's grid");
  return ComplexField(target, f.values().segment(N - n, target.site_count()));
}

Decomposition decompose(const ModulationContext& ctx, const ComplexField& u,
                        std::optional<std::pair<std::complex<double>, std::complex<double>>> guess) {
  const SpectralData& spec = ctx.spec();
  const ModulationOptions& opts = ctx.options();
  const double norm = u.values().norm();
  require(norm <= opts.smallness, ErrorCode::SmallnessViolation,
          "||u|| = " + std::to_string(norm) + " exceeds the smallness bound " + std::to_string(opts.smallness));
  const ComplexVector uc = restrict_centered(u, spec.grid()).values();
  const RealVector& phi1 = spec.phi(1).values();
  const RealVector& phi2 = spec.phi(2).values();

  Decomposition out;
  if (guess) {
    out.z1 = guess->first;
    out.z2 = guess->second;
  } else {
    out.z1 = (uc.array() * phi1.array().cast<cplx>()).sum();
    out.z2 = (uc.array() * phi2.array().cast<cplx>()).sum();
  }

  auto evaluate = [&](cplx z1, cplx z2, Eigen::Vector4d& F, TangentFrame& fr) {
    fr = ctx.frame(z1, z2);
    const ComplexVector ieta = I * (uc - fr.psi.values());
    for (int k = 0; k < 4; ++k) F[k] = pairing(ieta, fr.d[k].values());
    return F.cwiseAbs().maxCoeff();
  };

  Eigen::Vector4d F;
  TangentFrame fr;
  double r = evaluate(out.z1, out.z2, F, fr);
  out.residual_history.push_back(r);
  bool converged = r <= opts.tolerance;
  for (int it = 0; it < opts.max_iterations && !converged; ++it) {
    Eigen::Matrix4d J;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) J(a, b) = -pairing(I * fr.d[b].values(), fr.d[a].values());
    const Eigen::Vector4d delta = J.fullPivLu().solve(-F);

    // Halve the step until the residual drops.
    double t = 1.0, r_new = r;
    Eigen::Vector4d F_new;
    TangentFrame fr_new;
    cplx z1n, z2n;
    for (int k = 0; k < 30; ++k, t *= 0.5) {
      z1n = out.z1 + t * cplx(delta[0], delta[1]);
      z2n = out.z2 + t * cplx(delta[2], delta[3]);
      r_new = evaluate(z1n, z2n, F_new, fr_new);
      if (r_new < r) break;
    }
    ++out.newton_iters;
    out.residual_history.push_back(r_new);
    if (!(r_new < r)) {
      // No descent left: roundoff floor.
      converged = r <= 100.0 * opts.tolerance;
      break;
    }
    out.z1 = z1n;
    out.z2 = z2n;
    F = F_new;
    fr = std::move(fr_new);
    r = r_new;
    converged = r <= opts.tolerance;
  }
  require(converged, ErrorCode::NoConvergence,
          "decomposition did not converge (orthogonality residual " + std::to_string(r) + ")");
  out.orth_residual = r;
  out.eta = u;
  const int off = u.grid().half_width() - spec.grid().half_width();
  out.eta.values().segment(off, spec.grid().site_count()) -= fr.psi.values();
  return out;
}

ComplexField rmap_apply(const ModulationContext& ctx, std::complex<double> z1, std::complex<double> z2,
                        const ComplexField& eta_c, std::array<double, 4>* beta) {
  const SpectralData& spec = ctx.spec();
  const ComplexVector ec = restrict_centered(eta_c, spec.grid()).values();
  const double scale = std::max(eta_c.values().norm(), 1e-300);
  for (int j = 1; j <= 2; ++j) {
    const cplx c = (ec.array() * spec.phi(j).values().array().cast<cplx>()).sum();
    require(std::abs(c) <= 1e-9 * scale, ErrorCode::NotOrthogonal,
            "input has a discrete component of size " + std::to_string(std::abs(c)));
  }

  const TangentFrame fr = ctx.frame(z1, z2);
  std::array<ComplexVector, 4> basis;  // φ_{j,A}
  for (int j = 1; j <= 2; ++j) {
    const ComplexVector p = spec.phi(j).values().cast<cplx>();
    basis[2 * (j - 1)] = p;
    basis[2 * (j - 1) + 1] = I * p;
  }
  Eigen::Matrix4d G;
  Eigen::Vector4d rhs;
  for (int k = 0; k < 4; ++k) {
    for (int a = 0; a < 4; ++a) G(k, a) = pairing(I * basis[a], fr.d[k].values());
    rhs[k] = -pairing(I * ec, fr.d[k].values());
  }
  const Eigen::JacobiSVD<Eigen::Matrix4d> svd(G);
  const auto& sv = svd.singularValues();
  require(sv[3] > 1e-10 * sv[0], ErrorCode::SingularSystem, "modulation matrix is numerically singular");
  const Eigen::Vector4d b = G.fullPivLu().solve(rhs);

  ComplexField out = eta_c;
  const int off = eta_c.grid().half_width() - spec.grid().half_width();
  auto seg = out.values().segment(off, spec.grid().site_count());
  for (int a = 0; a < 4; ++a) seg += b[a] * basis[a];
  if (beta)
    for (int a = 0; a < 4; ++a) (*beta)[a] = b[a];
  return out;
}

}  // namespace qpdnls
