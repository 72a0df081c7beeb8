#include "qpdnls/qp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

namespace qpdnls {

// ---------------------------------------------------------------------------
// CoefficientField

CoefficientField::CoefficientField(LatticeGrid grid, int m_max, WeightSpec weights)
    : grid_(grid), m_max_(m_max), weights_(weights) {
  require(m_max >= 0, ErrorCode::InvalidArgument, "truncation order must be >= 0");
  weights_.validate(grid_);
  exp_weight_sq_ = exp_weight_sq(grid_, weights_.a);
  for (auto& fam : v_) fam.assign(m_max + 1, RealVector::Zero(grid.site_count()));
}

CoefficientField CoefficientField::embed(const RealField& profile, int j, int m_max, WeightSpec weights) {
  CoefficientField out(profile.grid(), m_max, weights);
  out(j, 0) = profile.values();
  return out;
}

RealVector& CoefficientField::operator()(int j, int m) {
  require((j == 1 || j == 2) && m >= 0 && m <= m_max_, ErrorCode::ShapeMismatch, "coefficient index out of range");
  return v_[j - 1][m];
}

const RealVector& CoefficientField::operator()(int j, int m) const {
  require((j == 1 || j == 2) && m >= 0 && m <= m_max_, ErrorCode::ShapeMismatch, "coefficient index out of range");
  return v_[j - 1][m];
}

bool CoefficientField::is_zero(int j, int m) const {
  const RealVector& x = (*this)(j, m);
  return x.size() == 0 || x.cwiseAbs().maxCoeff() == 0.0;
}

double CoefficientField::component_norm(const RealVector& v) const {
  return std::sqrt(exp_weight_sq_.dot(v.cwiseAbs2()));
}

double CoefficientField::norm_ar() const {
  double s = 0.0;
  for (int m = 0; m <= m_max_; ++m) {
    const double w = std::pow(weights_.r, 2 * m + 1);
    s += w * (component_norm(v_[0][m]) + component_norm(v_[1][m]));
  }
  return s;
}

double CoefficientField::tail() const {
  return std::pow(weights_.r, 2 * m_max_ + 1) * (component_norm(v_[0][m_max_]) + component_norm(v_[1][m_max_]));
}

void CoefficientField::project(const SpectralData& spec) {
  require(spec.grid() == grid_, ErrorCode::GridMismatch, "coefficient field and spectral data on different grids");
  for (int j = 1; j <= 2; ++j) {
    const RealVector& phi = spec.phi(j).values();
    RealVector& v = v_[j - 1][0];
    v -= v.dot(phi) * phi;
  }
}

void CoefficientField::check_compatible(const CoefficientField& o) const {
  require(grid_ == o.grid_, ErrorCode::ShapeMismatch, "coefficient fields on different grids");
  require(m_max_ == o.m_max_, ErrorCode::ShapeMismatch, "coefficient fields with different truncation orders");
}

CoefficientField& CoefficientField::operator+=(const CoefficientField& o) {
  check_compatible(o);
  for (int j = 0; j < 2; ++j)
    for (int m = 0; m <= m_max_; ++m) v_[j][m] += o.v_[j][m];
  return *this;
}

CoefficientField& CoefficientField::operator-=(const CoefficientField& o) {
  check_compatible(o);
  for (int j = 0; j < 2; ++j)
    for (int m = 0; m <= m_max_; ++m) v_[j][m] -= o.v_[j][m];
  return *this;
}

CoefficientField& CoefficientField::operator*=(double s) {
  for (auto& fam : v_)
    for (auto& x : fam) x *= s;
  return *this;
}

// ---------------------------------------------------------------------------
// 𝓜 by explicit sums

namespace {

// Read-only view that returns nullptr for out-of-range or identically zero
// components so the sums can skip them.
class SparseView {
 public:
  explicit SparseView(const CoefficientField& f) : f_(f), m_max_(f.m_max()) {
    for (int j = 1; j <= 2; ++j)
      for (int m = 0; m <= m_max_; ++m) nz_[j - 1].push_back(!f.is_zero(j, m));
  }
  const RealVector* operator()(int j, int m) const {
    if (m < 0 || m > m_max_ || !nz_[j - 1][m]) return nullptr;
    return &f_(j, m);
  }

 private:
  const CoefficientField& f_;
  int m_max_;
  std::array<std::vector<bool>, 2> nz_;
};

class PowerTable {
 public:
  PowerTable(double x, int n) : p_(n + 1, 1.0) {
    for (int k = 1; k <= n; ++k) p_[k] = p_[k - 1] * x;
  }
  double operator[](int k) const { return p_.at(k); }

 private:
  std::vector<double> p_;
};

inline void accumulate(RealVector& out, double w, const RealVector* a, const RealVector* b, const RealVector* c) {
  if (!a || !b || !c || w == 0.0) return;
  out.array() += w * a->array() * b->array() * c->array();
}

}  // namespace

CoefficientField m3_apply(double rho1sq, double rho2sq, const CoefficientField& v1, const CoefficientField& v2,
                          const CoefficientField& v3) {
  v1.check_compatible(v2);
  v1.check_compatible(v3);
  const int M = v1.m_max();
  const SparseView a(v1), b(v2), c(v3);
  const PowerTable p1(rho1sq, M + 3), p2(rho2sq, M + 3);
  CoefficientField out(v1.grid(), M, v1.weights());

  for (int m = 0; m <= M; ++m) {
    RealVector& o1 = out(1, m);
    RealVector& o2 = out(2, m);
    for (int l = 0; l <= M; ++l) {
      // Family-1 output, coefficient of z1^{m+1} conj(z2)^m.
      for (int m1 = 0; m1 <= l + m; ++m1)
        accumulate(o1, p1[l + 1] * p2[l], a(1, m1), b(1, l), c(1, l + m - m1));
      for (int m2 = 0; m2 <= l - 1; ++m2)
        accumulate(o1, p1[l] * p2[l], a(1, m + l), b(1, m2), c(2, l - m2 - 1));
      for (int m1 = 0; m1 <= l + m; ++m1)
        accumulate(o1, p1[l] * p2[l + 1], a(1, m1), b(2, l + m - m1), c(2, l));
      for (int m1 = 0; m1 <= l - 1; ++m1)
        accumulate(o1, p1[l] * p2[l], a(2, m1), b(1, l - m1 - 1), c(1, m + l));
      for (int m2 = 0; m2 <= l + m; ++m2)
        accumulate(o1, p1[l] * p2[l + 1], a(2, l), b(2, m2), c(1, l + m - m2));
      for (int m1 = 0; m1 <= l; ++m1)
        accumulate(o1, p1[l] * p2[l + 2], a(2, m1), b(2, m + l + 1), c(2, l - m1));

      // Family-2 output, coefficient of conj(z1)^m z2^{m+1}.
      for (int m1 = 0; m1 <= l; ++m1)
        accumulate(o2, p1[l + 2] * p2[l], a(1, m1), b(1, m + l + 1), c(1, l - m1));
      for (int m2 = 0; m2 <= m + l; ++m2)
        accumulate(o2, p1[l + 1] * p2[l], a(1, l), b(1, m2), c(2, m + l - m2));
      for (int m1 = 0; m1 <= l - 1; ++m1)
        accumulate(o2, p1[l] * p2[l], a(1, m1), b(2, l - m1 - 1), c(2, m + l));
      for (int m1 = 0; m1 <= l + m; ++m1)
        accumulate(o2, p1[l + 1] * p2[l], a(2, m1), b(1, l + m - m1), c(1, l));
      for (int m2 = 0; m2 <= l - 1; ++m2)
        accumulate(o2, p1[l] * p2[l], a(2, m + l), b(2, m2), c(1, l - m2 - 1));
      for (int m1 = 0; m1 <= l + m; ++m1)
        accumulate(o2, p1[l] * p2[l + 1], a(2, m1), b(2, l), c(2, l + m - m1));
    }
    // Terms without paired powers.
    for (int m2 = 0; m2 <= m - 1; ++m2)
      for (int m3 = 0; m2 + m3 <= m - 1; ++m3) {
        accumulate(o1, 1.0, a(1, m - m2 - m3 - 1), b(2, m2), c(1, m3));
        accumulate(o2, 1.0, a(2, m - m2 - m3 - 1), b(1, m2), c(2, m3));
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// 𝓜 by formal Laurent-polynomial multiplication

namespace {

// Exponents of (z1, conj z1, z2, conj z2).
using Monomial = std::array<int, 4>;
using Laurent = std::map<Monomial, RealVector>;

constexpr int kOracleMaxOrder = 8;

Laurent to_laurent(const CoefficientField& f, bool conjugate) {
  Laurent out;
  for (int m = 0; m <= f.m_max(); ++m) {
    Monomial a{m + 1, 0, 0, m};  // z1^{m+1} conj(z2)^m
    Monomial b{0, m, m + 1, 0};  // conj(z1)^m z2^{m+1}
    if (conjugate) {
      std::swap(a[0], a[1]); std::swap(a[2], a[3]);
      std::swap(b[0], b[1]); std::swap(b[2], b[3]);
    }
    if (!f.is_zero(1, m)) out[a] = f(1, m);  // real fields: conjugation acts on monomials only
    if (!f.is_zero(2, m)) out[b] = f(2, m);
  }
  return out;
}

Laurent multiply(const Laurent& x, const Laurent& y) {
  Laurent out;
  for (const auto& [mx, fx] : x)
    for (const auto& [my, fy] : y) {
      Monomial e;
      for (int k = 0; k < 4; ++k) e[k] = mx[k] + my[k];
      RealVector prod = fx.cwiseProduct(fy);
      auto it = out.find(e);
      if (it == out.end())
        out.emplace(e, std::move(prod));
      else
        it->second += prod;
    }
  return out;
}

}  // namespace

CoefficientField m3_oracle(double rho1sq, double rho2sq, const CoefficientField& v1, const CoefficientField& v2,
                           const CoefficientField& v3) {
  v1.check_compatible(v2);
  v1.check_compatible(v3);
  const int M = v1.m_max();
  require(M <= kOracleMaxOrder, ErrorCode::TruncationOverflow,
          "oracle supports truncation order <= " + std::to_string(kOracleMaxOrder));
  const Laurent product = multiply(multiply(to_laurent(v1, false), to_laurent(v2, true)), to_laurent(v3, false));

  CoefficientField out(v1.grid(), M, v1.weights());
  for (const auto& [e, field] : product) {
    const int k1 = std::min(e[0], e[1]), k2 = std::min(e[2], e[3]);
    const Monomial r{e[0] - k1, e[1] - k1, e[2] - k2, e[3] - k2};
    const double w = std::pow(rho1sq, k1) * std::pow(rho2sq, k2);
    int j = 0, m = -1;
    if (r[1] == 0 && r[2] == 0 && r[0] == r[3] + 1) {
      j = 1;
      m = r[3];
    } else if (r[0] == 0 && r[3] == 0 && r[2] == r[1] + 1) {
      j = 2;
      m = r[1];
    } else {
      fail(ErrorCode::TruncationOverflow, "product monomial outside the ansatz basis");
    }
    if (m <= M) out(j, m) += w * field;
  }
  return out;
}

CoefficientField m_odd_apply(double rho1sq, double rho2sq, const CoefficientField& v, int k) {
  require(k >= 0, ErrorCode::InvalidArgument, "multilinear degree index must be >= 0");
  CoefficientField acc = v;
  for (int i = 0; i < k; ++i) acc = m3_apply(rho1sq, rho2sq, v, v, acc);
  return acc;
}

CoefficientField nonlinear_N(double rho1sq, double rho2sq, const CoefficientField& v, const BoundStateProfile& prof1,
                             const BoundStateProfile& prof2) {
  require(prof1.power == prof2.power, ErrorCode::InvalidArgument, "bound-state profiles with different powers");
  require(prof1.j == 1 && prof2.j == 2, ErrorCode::InvalidArgument, "profiles must be (j=1, j=2)");
  const int k = prof1.power;
  const auto phi1 = CoefficientField::embed(prof1.tilde_phi(), 1, v.m_max(), v.weights());
  const auto phi2 = CoefficientField::embed(prof2.tilde_phi(), 2, v.m_max(), v.weights());
  CoefficientField out = m_odd_apply(rho1sq, rho2sq, phi1 + phi2 + v, k);
  out -= m_odd_apply(rho1sq, rho2sq, phi1, k);
  out -= m_odd_apply(rho1sq, rho2sq, phi2, k);
  return out;
}

std::array<double, 2> epsilon_corrections(const SpectralData& spec, const CoefficientField& N) {
  require(N.grid() == spec.grid(), ErrorCode::GridMismatch, "coefficients and spectral data on different grids");
  return {N(1, 0).dot(spec.phi(1).values()), N(2, 0).dot(spec.phi(2).values())};
}

// ---------------------------------------------------------------------------
// Resolvents and the fixed-point map

FrequencyLadder FrequencyLadder::build(const SpectralData& spec, int m_max, double delta_min) {
  FrequencyLadder L;
  const double e1 = spec.e(1), e2 = spec.e(2);
  L.min_distance = std::numeric_limits<double>::infinity();
  for (int m = 0; m <= m_max; ++m) {
    L.omega[0].push_back((m + 1) * e1 - m * e2);
    L.omega[1].push_back((m + 1) * e2 - m * e1);
    if (m == 0) continue;
    for (int j = 0; j < 2; ++j) {
      const double d = spec.distance_to_spectrum(L.omega[j][m]);
      L.min_distance = std::min(L.min_distance, d);
      require(d >= delta_min, ErrorCode::LadderViolation,
              "ω_{" + std::to_string(j + 1) + "," + std::to_string(m) + "} = " + std::to_string(L.omega[j][m]) +
                  " is within " + std::to_string(d) + " of the spectrum");
    }
  }
  return L;
}

QPWorkspace::QPWorkspace(const SpectralData& spec, int m_max, double delta_min)
    : spec_(&spec), m_max_(m_max), ladder_(FrequencyLadder::build(spec, m_max, delta_min)),
      projected_{ProjectedResolvent(spec, 1), ProjectedResolvent(spec, 2)} {
  for (int j = 0; j < 2; ++j)
    for (int m = 1; m <= m_max; ++m) shifted_[j].emplace_back(spec.potential(), ladder_.omega[j][m]);
}

RealVector QPWorkspace::resolve(int j, int m, const RealVector& f) const {
  if (m == 0) return projected_[j - 1].solve(f, false);
  return shifted_[j - 1][m - 1].solve(f);
}

FixedPointStep fixedpoint_map(const QPWorkspace& ws, double rho1sq, double rho2sq, const CoefficientField& v,
                              const BoundStateProfile& prof1, const BoundStateProfile& prof2) {
  require(v.m_max() == ws.m_max(), ErrorCode::ShapeMismatch, "workspace and iterate truncation orders differ");
  const SpectralData& spec = ws.spec();
  CoefficientField N = nonlinear_N(rho1sq, rho2sq, v, prof1, prof2);
  const auto eps = epsilon_corrections(spec, N);
  N.project(spec);

  const std::array<double, 2> shift = {prof1.e_shift + eps[0], prof2.e_shift + eps[1]};
  const double cross = shift[0] - shift[1];
  const std::array<const RealVector*, 2> q = {&prof1.q.values(), &prof2.q.values()};

  CoefficientField next(v.grid(), v.m_max(), v.weights());
  for (int j = 1; j <= 2; ++j) {
    const double sign = j == 1 ? 1.0 : -1.0;
    for (int m = 0; m <= v.m_max(); ++m) {
      RealVector rhs = (shift[j - 1] + sign * m * cross) * v(j, m) - N(j, m);
      if (m == 0) rhs += eps[j - 1] * *q[j - 1];
      if (rhs.cwiseAbs().maxCoeff() == 0.0) continue;
      next(j, m) = ws.resolve(j, m, rhs);
    }
  }
  next.project(spec);
  return {std::move(next), eps};
}

QPSolution solve_qp(const SpectralData& spec, double rho1, double rho2, const QPOptions& opts) {
  QPWorkspace ws(spec, opts.m_max, opts.delta_min);
  return solve_qp(ws, rho1, rho2, opts);
}

QPSolution solve_qp(const QPWorkspace& ws, double rho1, double rho2, const QPOptions& opts,
                    const CoefficientField* initial) {
  require(ws.m_max() == opts.m_max, ErrorCode::ShapeMismatch, "workspace truncation order differs from options");
  require(rho1 >= 0.0 && rho2 >= 0.0, ErrorCode::InvalidArgument, "amplitudes must be >= 0");
  require(opts.power == opts.bound.power, ErrorCode::InvalidArgument, "QP and bound-state powers differ");
  const SpectralData& spec = ws.spec();
  const double rho_max = opts.bound.rho_max;
  require(rho1 <= rho_max && rho2 <= rho_max, ErrorCode::SmallnessViolation,
          "amplitudes exceed rho_max = " + std::to_string(rho_max));

  WeightSpec weights;
  weights.a = opts.a;
  const double rmax = std::max(rho1, rho2);
  weights.r = opts.r > 0.0 ? opts.r : (rmax > 0.0 ? 1.5 * rmax : weights.r);

  QPSolution sol{.rho1 = rho1,
                 .rho2 = rho2,
                 .power = opts.power,
                 .coeffs = CoefficientField(spec.grid(), opts.m_max, weights),
                 .prof1 = solve_bound_state(spec, 1, rho1, opts.bound),
                 .prof2 = solve_bound_state(spec, 2, rho2, opts.bound),
                 .step_history = {}};
  const double s1 = rho1 * rho1, s2 = rho2 * rho2;

  CoefficientField& v = sol.coeffs;
  if (initial) {
    v.check_compatible(*initial);
    for (int j = 1; j <= 2; ++j)
      for (int m = 0; m <= opts.m_max; ++m) v(j, m) = (*initial)(j, m);
    v.project(spec);
  }
  double prev_step = 0.0;
  bool converged = false;
  for (int it = 0; it < opts.max_iter; ++it) {
    FixedPointStep step = fixedpoint_map(ws, s1, s2, v, sol.prof1, sol.prof2);
    const double d = (step.next - v).norm_ar();
    v = std::move(step.next);
    sol.eps = step.eps;
    sol.step_history.push_back(d);
    sol.iterations = it + 1;
    // Ratios are only meaningful while the steps sit well above roundoff.
    const double floor = 1e3 * std::numeric_limits<double>::epsilon() * std::max(v.norm_ar(), 1e-300);
    if (it > 0 && prev_step > floor && d > floor) {
      sol.contraction_factor = d / prev_step;
      require(sol.contraction_factor < 1.0, ErrorCode::NoContraction,
              "Picard step grew by a factor " + std::to_string(sol.contraction_factor));
    }
    if (d <= opts.tol) {
      converged = true;
      break;
    }
    prev_step = d;
  }
  require(converged, ErrorCode::NoConvergence,
          "Picard iteration did not reach tol " + std::to_string(opts.tol) + " in " + std::to_string(opts.max_iter) +
              " iterations (last step " + std::to_string(sol.step_history.back()) + ")");

  // Fresh evaluation at the fixed point: recomputes ε and verifies Φ(v*) = v*.
  FixedPointStep check = fixedpoint_map(ws, s1, s2, v, sol.prof1, sol.prof2);
  sol.fixed_point_residual = (check.next - v).norm_ar();
  sol.eps = check.eps;
  sol.freq = {sol.prof1.E + sol.eps[0], sol.prof2.E + sol.eps[1]};

  const double total = v.norm_ar();
  sol.tail_ratio = total > 0.0 ? v.tail() / total : 0.0;
  require(sol.tail_ratio <= opts.tail_limit, ErrorCode::TailTooLarge,
          "truncation tail is " + std::to_string(sol.tail_ratio) + " of the total norm; raise m_max");
  return sol;
}

// ---------------------------------------------------------------------------
// Assembly

namespace {

void check_amplitudes(const QPSolution& sol, std::complex<double> z1, std::complex<double> z2) {
  auto ok = [](double got, double want) { return std::abs(got - want) <= 1e-12 * std::max(1.0, want); };
  require(ok(std::abs(z1), sol.rho1) && ok(std::abs(z2), sol.rho2), ErrorCode::AmplitudeMismatch,
          "(|z1|, |z2|) does not match the solution amplitudes");
}

// Σ_m c_{1m} v_{1m} + c_{2m} v_{2m} with the monomial values c and an optional
// per-term frequency multiplier.
ComplexVector correction_sum(const QPSolution& sol, std::complex<double> z1, std::complex<double> z2,
                             const std::array<std::vector<double>, 2>* rates) {
  const CoefficientField& v = sol.coeffs;
  ComplexVector out = ComplexVector::Zero(v.grid().site_count());
  const cplx z1b = std::conj(z1), z2b = std::conj(z2);
  cplx mono1 = z1, mono2 = z2;  // z1^{m+1} conj(z2)^m and conj(z1)^m z2^{m+1}
  for (int m = 0; m <= v.m_max(); ++m) {
    cplx c1 = mono1, c2 = mono2;
    if (rates) {
      c1 *= (*rates)[0][m];
      c2 *= (*rates)[1][m];
    }
    if (c1 != 0.0 && !v.is_zero(1, m)) out += c1 * v(1, m).cast<cplx>();
    if (c2 != 0.0 && !v.is_zero(2, m)) out += c2 * v(2, m).cast<cplx>();
    mono1 *= z1 * z2b;
    mono2 *= z1b * z2;
  }
  return out;
}

}  // namespace

ComplexField assemble_correction(const QPSolution& sol, std::complex<double> z1, std::complex<double> z2) {
  check_amplitudes(sol, z1, z2);
  return ComplexField(sol.coeffs.grid(), correction_sum(sol, z1, z2, nullptr));
}

ComplexField assemble_psi(const QPSolution& sol, std::complex<double> z1, std::complex<double> z2) {
  check_amplitudes(sol, z1, z2);
  ComplexVector u = correction_sum(sol, z1, z2, nullptr);
  u += z1 * sol.prof1.tilde_phi().values().cast<cplx>();
  u += z2 * sol.prof2.tilde_phi().values().cast<cplx>();
  return ComplexField(sol.coeffs.grid(), std::move(u));
}

double qp_stationarity_residual(const SpectralData& spec, const QPSolution& sol, int phase_samples,
                                std::uint64_t seed) {
  require(phase_samples >= 1, ErrorCode::InvalidArgument, "need at least one phase sample");
  require(spec.grid() == sol.coeffs.grid(), ErrorCode::GridMismatch, "solution and spectral data on different grids");
  std::array<std::vector<double>, 2> rates;
  for (int m = 0; m <= sol.coeffs.m_max(); ++m) {
    rates[0].push_back((m + 1) * sol.freq[0] - m * sol.freq[1]);
    rates[1].push_back((m + 1) * sol.freq[1] - m * sol.freq[0]);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  const std::span<const double> V(spec.potential().values().data(), spec.potential().values().size());
  double worst = 0.0;
  for (int s = 0; s < phase_samples; ++s) {
    const cplx z1 = std::polar(sol.rho1, angle(rng)), z2 = std::polar(sol.rho2, angle(rng));
    const ComplexVector psi = assemble_psi(sol, z1, z2).values();
    ComplexVector idt = correction_sum(sol, z1, z2, &rates);
    idt += sol.freq[0] * z1 * sol.prof1.tilde_phi().values().cast<cplx>();
    idt += sol.freq[1] * z2 * sol.prof2.tilde_phi().values().cast<cplx>();
    ComplexVector Hpsi;
    apply_H_inplace(V, psi, Hpsi);
    const Eigen::ArrayXd mag = psi.cwiseAbs().array().pow(2 * sol.power);
    const ComplexVector r = idt - Hpsi - (mag.cast<cplx>() * psi.array()).matrix();
    worst = std::max(worst, r.norm());
  }
  return worst;
}

}  // namespace qpdnls
