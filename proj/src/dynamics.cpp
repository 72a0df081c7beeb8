#include "qpdnls/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace qpdnls {

namespace {

constexpr cplx I{0.0, 1.0};

std::span<const double> span_of(const RealVector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

// u ← u·exp(-iτ|u|^{2p}); exact, since the pointwise flow keeps |u| fixed.
void nonlinear_phase(ComplexVector& u, double tau, int p) {
  for (auto& x : u) {
    const double m = std::pow(std::norm(x), p);
    x *= std::polar(1.0, -tau * m);
  }
}

void rhs(const RealVector& V, const ComplexVector& u, int p, ComplexVector& out) {
  apply_H_inplace(span_of(V), u, out);
  for (Eigen::Index i = 0; i < u.size(); ++i) out[i] = -I * (out[i] + std::pow(std::norm(u[i]), p) * u[i]);
}

}  // namespace

double energy(const ComplexField& u, const Potential& V, int power) {
  require(u.grid() == V.grid(), ErrorCode::GridMismatch, "field and potential on different grids");
  require(power >= 1, ErrorCode::InvalidArgument, "nonlinearity power must be >= 1");
  ComplexVector Hu;
  apply_H_inplace(span_of(V.values()), u.values(), Hu);
  const double quad = Hu.dot(u.values()).real();
  const double quart = u.values().cwiseAbs2().array().pow(power + 1).sum();
  return 0.5 * quad + quart / (2.0 * power + 2.0);
}

double mass(const ComplexField& u) { return u.values().squaredNorm(); }

std::vector<double> bessel_j_sequence(double x, int n_max) {
  require(n_max >= 0, ErrorCode::InvalidArgument, "Bessel order must be >= 0");
  std::vector<double> J(n_max + 1, 0.0);
  if (x == 0.0) {
    J[0] = 1.0;
    return J;
  }
  const double ax = std::abs(x);
  // Start well above both the requested order and the turning point n ≈ x.
  int start = std::max(n_max, static_cast<int>(ax)) + 30 + static_cast<int>(std::sqrt(40.0 * ax));
  start += start % 2;
  std::vector<double> b(start + 2, 0.0);
  b[start] = 1e-30;
  double norm = 0.0;
  for (int k = start; k >= 1; --k) {
    b[k - 1] = 2.0 * k / ax * b[k] - b[k + 1];
    if (std::abs(b[k - 1]) > 1e250) {
      for (int i = k - 1; i <= start; ++i) b[i] *= 1e-250;
    }
  }
  norm = b[0];
  for (int k = 2; k <= start; k += 2) norm += 2.0 * b[k];
  for (int k = 0; k <= n_max; ++k) J[k] = b[k] / norm;
  if (x < 0.0)
    for (int k = 1; k <= n_max; k += 2) J[k] = -J[k];
  return J;
}

// ---------------------------------------------------------------------------
// Linear step

struct LinearPropagator::Impl {
  LinearMethod method;
  // Chebyshev: H̃ = (H - c)/R has spectrum in [-1, 1].
  RealVector diag;
  double off = 0.0;
  cplx global_phase;
  std::vector<cplx> coeff;
  // Eigenbasis.
  Eigen::MatrixXd basis;
  Eigen::ArrayXd cos_l, sin_l;

  void apply_scaled(const ComplexVector& u, ComplexVector& out) const {
    const Eigen::Index n = u.size();
    out.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      cplx v = diag[i] * u[i];
      if (i > 0) v += off * u[i - 1];
      if (i + 1 < n) v += off * u[i + 1];
      out[i] = v;
    }
  }
};

LinearPropagator::LinearPropagator(const Potential& V, double dt, LinearMethod method)
    : impl_(std::make_unique<Impl>()), dt_(dt) {
  require(std::isfinite(dt), ErrorCode::InvalidArgument, "time step must be finite");
  impl_->method = method;
  if (method == LinearMethod::Chebyshev) {
    const double lo = V.values().minCoeff(), hi = 4.0 + V.values().maxCoeff();  // Gershgorin
    const double c = 0.5 * (lo + hi), R = 0.5 * (hi - lo);
    impl_->diag = ((2.0 + V.values().array() - c) / R).matrix();
    impl_->off = -1.0 / R;
    impl_->global_phase = std::polar(1.0, -c * dt);
    // e^{-iRdt·x} = Σ (2 - δ_k0)(-i)^k J_k(R dt) T_k(x).
    const double x = R * dt;
    const int n_max = static_cast<int>(std::abs(x)) + 40;
    const std::vector<double> J = bessel_j_sequence(x, n_max);
    cplx ik = 1.0;
    for (int k = 0; k <= n_max; ++k, ik *= -I) {
      impl_->coeff.push_back((k == 0 ? 1.0 : 2.0) * ik * J[k]);
      if (k > std::abs(x) && std::abs(J[k]) < 1e-18) break;
    }
  } else {
    const SpectralData spec = eigendecompose(V, {.require_pair = false, .full_basis = true});
    impl_->basis = spec.eigenvectors();
    const Eigen::ArrayXd phase = -dt * spec.eigenvalues().array();
    impl_->cos_l = phase.cos();
    impl_->sin_l = phase.sin();
  }
}

LinearPropagator::~LinearPropagator() = default;
LinearPropagator::LinearPropagator(LinearPropagator&&) noexcept = default;
LinearPropagator& LinearPropagator::operator=(LinearPropagator&&) noexcept = default;

int LinearPropagator::chebyshev_terms() const noexcept { return static_cast<int>(impl_->coeff.size()); }

void LinearPropagator::apply(ComplexVector& u) const {
  const Impl& m = *impl_;
  if (m.method == LinearMethod::Eigenbasis) {
    const RealVector cr = m.basis.transpose() * u.real();
    const RealVector ci = m.basis.transpose() * u.imag();
    const RealVector nr = (cr.array() * m.cos_l - ci.array() * m.sin_l).matrix();
    const RealVector ni = (cr.array() * m.sin_l + ci.array() * m.cos_l).matrix();
    u.real() = m.basis * nr;
    u.imag() = m.basis * ni;
    return;
  }
  ComplexVector t_prev = u, t_cur, t_next;
  ComplexVector acc = m.coeff[0] * u;
  if (m.coeff.size() > 1) {
    m.apply_scaled(u, t_cur);
    acc += m.coeff[1] * t_cur;
  }
  for (std::size_t k = 2; k < m.coeff.size(); ++k) {
    m.apply_scaled(t_cur, t_next);
    t_next = 2.0 * t_next - t_prev;
    acc += m.coeff[k] * t_next;
    std::swap(t_prev, t_cur);
    std::swap(t_cur, t_next);
  }
  u = m.global_phase * acc;
}

// ---------------------------------------------------------------------------
// Evolution

void EvolutionConfig::validate() const {
  require(dt > 0.0 && std::isfinite(dt), ErrorCode::InvalidArgument, "dt must be positive");
  require(T >= dt, ErrorCode::InvalidArgument, "T must be at least dt");
  require(power >= 1, ErrorCode::InvalidArgument, "power must be >= 1");
  require(record_stride >= 1, ErrorCode::InvalidArgument, "record_stride must be >= 1");
  require(snapshot_stride >= 0, ErrorCode::InvalidArgument, "snapshot_stride must be >= 0");
  require(sigma > 1.0, ErrorCode::InvalidArgument, "sigma must exceed 1");
  require(blowup_bound > 0.0, ErrorCode::InvalidArgument, "blowup bound must be positive");
}

int EvolutionConfig::steps() const { return static_cast<int>(std::ceil(T / dt - 1e-9)); }

double TrajectoryRecord::mass_drift() const {
  double d = 0.0;
  const double m0 = l2_norm.front() * l2_norm.front();
  for (double n : l2_norm) d = std::max(d, std::abs(n * n - m0));
  return m0 > 0.0 ? d / m0 : d;
}

double TrajectoryRecord::energy_drift() const {
  double d = 0.0;
  for (double e : energy) d = std::max(d, std::abs(e - energy.front()));
  return d;
}

TrajectoryRecord evolve(const ComplexField& u0, const Potential& V, const EvolutionConfig& cfg,
                        const ModulationContext* tracker, const Observer& observer) {
  cfg.validate();
  require(u0.grid() == V.grid(), ErrorCode::GridMismatch, "initial data and potential on different grids");
  const int n_steps = cfg.steps();
  const double dt = cfg.T / n_steps;
  const int p = cfg.power;

  TrajectoryRecord rec;
  rec.steps = n_steps;
  rec.dt = dt;
  ComplexVector u = u0.values();
  std::optional<std::pair<cplx, cplx>> guess;
  int n_records = 0;

  auto record = [&](int step) {
    const double t = step * dt;
    const ComplexField f(u0.grid(), u);
    rec.times.push_back(t);
    rec.l2_norm.push_back(u.norm());
    rec.energy.push_back(energy(f, V, p));
    const double linf = u.cwiseAbs().maxCoeff();
    rec.linf.push_back(linf);
    require(std::isfinite(linf) && linf <= cfg.blowup_bound, ErrorCode::BlowupGuard,
            "sup norm " + std::to_string(linf) + " exceeded the guard at t = " + std::to_string(t));
    if (tracker) {
      try {
        const Decomposition d = decompose(*tracker, f, guess);
        rec.z1.push_back(d.z1);
        rec.z2.push_back(d.z2);
        rec.eta_weighted.push_back(norm(d.eta, NormSpec::l2_poly(-cfg.sigma)));
        guess = std::make_pair(d.z1, d.z2);
      } catch (const Error& e) {
        fail(ErrorCode::DecompositionLost, "decomposition failed at t = " + std::to_string(t) + ": " + e.what());
      }
    }
    if (cfg.snapshot_stride > 0 && n_records % cfg.snapshot_stride == 0) {
      rec.snapshot_times.push_back(t);
      rec.snapshots.push_back(f);
    }
    if (observer) observer(t, f);
    ++n_records;
  };

  record(0);
  if (cfg.scheme == Scheme::Strang) {
    const LinearPropagator L(V, dt, cfg.linear);
    for (int s = 1; s <= n_steps; ++s) {
      nonlinear_phase(u, 0.5 * dt, p);
      L.apply(u);
      nonlinear_phase(u, 0.5 * dt, p);
      if (s % cfg.record_stride == 0 || s == n_steps) record(s);
    }
  } else {
    const RealVector& Vv = V.values();
    ComplexVector k1, k2, k3, k4, tmp;
    for (int s = 1; s <= n_steps; ++s) {
      rhs(Vv, u, p, k1);
      tmp = u + 0.5 * dt * k1;
      rhs(Vv, tmp, p, k2);
      tmp = u + 0.5 * dt * k2;
      rhs(Vv, tmp, p, k3);
      tmp = u + dt * k3;
      rhs(Vv, tmp, p, k4);
      u += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (s % cfg.record_stride == 0 || s == n_steps) record(s);
    }
  }
  rec.final_state = ComplexField(u0.grid(), std::move(u));
  return rec;
}

// ---------------------------------------------------------------------------
// Experiments

ComplexField random_perturbation(const LatticeGrid& grid, const SpectralData& discrete, double size,
                                 std::uint64_t seed, bool continuous, int radius) {
  require(size >= 0.0, ErrorCode::InvalidArgument, "perturbation size must be >= 0");
  require(radius >= 0 && grid.contains(radius), ErrorCode::InvalidArgument, "perturbation support exceeds the grid");
  ComplexField w(grid);
  if (size == 0.0) return w;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int n = -radius; n <= radius; ++n) {
    const double re = g(rng), im = g(rng);
    w.at(n) = cplx(re, im);
  }
  if (continuous) {
    const int off = grid.half_width() - discrete.grid().half_width();
    require(off >= 0, ErrorCode::GridMismatch, "perturbation grid is smaller than the construction grid");
    for (std::size_t k = 0; k < discrete.discrete_indices().size(); ++k) {
      const RealVector& phi = discrete.discrete_vector(k).values();
      auto seg = w.values().segment(off, phi.size());
      const cplx c = (seg.array() * phi.array().cast<cplx>()).sum();
      seg -= c * phi.cast<cplx>();
    }
  }
  w.values() *= size / w.values().norm();
  return w;
}

double total_variation(const std::vector<double>& t, const std::vector<double>& f, double t0, double t1) {
  require(t.size() == f.size(), ErrorCode::ShapeMismatch, "time and value series differ in length");
  double tv = 0.0;
  for (std::size_t k = 1; k < t.size(); ++k)
    if (t[k - 1] >= t0 && t[k] <= t1) tv += std::abs(f[k] - f[k - 1]);
  return tv;
}

PersistenceReport run_persistence_experiment(const ModulationContext& ctx, std::complex<double> z1,
                                             std::complex<double> z2, const EvolutionConfig& cfg) {
  const auto sol = ctx.solution(std::abs(z1), std::abs(z2));
  PersistenceReport rep;
  rep.freq = sol->freq;
  const ComplexField u0 = assemble_psi(*sol, z1, z2);
  auto observe = [&](double t, const ComplexField& u) {
    const ComplexField ref = assemble_psi(*sol, z1 * std::polar(1.0, -rep.freq[0] * t),
                                          z2 * std::polar(1.0, -rep.freq[1] * t));
    rep.max_deviation = std::max(rep.max_deviation, (u.values() - ref.values()).norm());
  };
  rep.trajectory = evolve(u0, ctx.spec().potential(), cfg, nullptr, observe);
  return rep;
}

StabilityReport run_stability_experiment(const ModulationContext& ctx, std::complex<double> z1,
                                         std::complex<double> z2, double perturbation_size, int N,
                                         const EvolutionConfig& cfg, const TrajectoryRecord* baseline) {
  const LatticeGrid grid(N);
  const Potential V = ctx.spec().potential().on_grid(grid);
  ComplexField u0 = embed_centered(ctx.psi(z1, z2), grid);
  u0.values() += random_perturbation(grid, ctx.spec(), perturbation_size, cfg.seed, true).values();

  StabilityReport rep;
  rep.perturbation_size = perturbation_size;
  rep.seed = cfg.seed;
  rep.grid_half_width = N;
  rep.trusted_until = static_cast<double>(N);
  rep.trajectory = evolve(u0, V, cfg, &ctx);
  const TrajectoryRecord& tr = rep.trajectory;

  if (baseline) {
    require(baseline->tracked() && baseline->times == tr.times, ErrorCode::ShapeMismatch,
            "baseline run was recorded at different times");
    rep.baseline_subtracted = true;
  }
  const double T = tr.times.back();
  for (int j = 0; j < 2; ++j) {
    std::vector<double> s(tr.times.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
      s[k] = std::norm(j == 0 ? tr.z1[k] : tr.z2[k]);
      if (baseline) s[k] -= std::norm(j == 0 ? baseline->z1[k] : baseline->z2[k]);
    }
    rep.tv_first[j] = total_variation(tr.times, s, 0.0, 0.5 * T);
    rep.tv_second[j] = total_variation(tr.times, s, 0.5 * T, T);
    rep.tv_ratio[j] = rep.tv_first[j] > 0.0 ? rep.tv_second[j] / rep.tv_first[j] : 0.0;
    rep.drift_l1[j] = total_variation(tr.times, s, 0.0, T);
    double acc = 0.0;
    int cnt = 0;
    for (std::size_t k = 0; k < s.size(); ++k)
      if (tr.times[k] >= 0.9 * T) {
        acc += std::abs(j == 0 ? tr.z1[k] : tr.z2[k]);
        ++cnt;
      }
    rep.rho_plus[j] = cnt ? acc / cnt : 0.0;
  }

  // Trapezoid rule for ∫‖η‖²_{l^{2,-σ}}.
  rep.eta_integral.assign(tr.times.size(), 0.0);
  for (std::size_t k = 1; k < tr.times.size(); ++k) {
    const double a = tr.eta_weighted[k - 1], b = tr.eta_weighted[k];
    rep.eta_integral[k] = rep.eta_integral[k - 1] + 0.5 * (a * a + b * b) * (tr.times[k] - tr.times[k - 1]);
  }
  const double total = rep.eta_integral.back();
  double at_three_quarters = 0.0;
  for (std::size_t k = 0; k < tr.times.size(); ++k)
    if (tr.times[k] <= 0.75 * T) at_three_quarters = rep.eta_integral[k];
  rep.final_quarter_fraction = total > 0.0 ? (total - at_three_quarters) / total : 0.0;
  return rep;
}

OrbitalReport run_orbital_experiment(const SpectralData& construction_spec, int j, std::complex<double> z,
                                     double perturbation_size, int N, const EvolutionConfig& cfg,
                                     const BoundStateOptions& bound) {
  const LatticeGrid grid(N);
  const Potential V = construction_spec.potential().on_grid(grid);
  BoundStateOptions bopts = bound;
  bopts.power = cfg.power;
  const BoundStateProfile prof = solve_bound_state(construction_spec, j, std::abs(z), bopts);
  const ComplexField b = embed_centered(prof.at(z), grid);
  ComplexField u0 = b;
  u0.values() += random_perturbation(grid, construction_spec, perturbation_size, cfg.seed, false).values();

  OrbitalReport rep;
  rep.j = j;
  rep.z = z;
  rep.perturbation_size = perturbation_size;
  const double bb = b.values().squaredNorm();
  auto observe = [&](double, const ComplexField& u) {
    // inf_θ ‖u - e^{iθ}b‖² = ‖u‖² + ‖b‖² - 2|Σ u conj(b)|.
    const double d2 = u.values().squaredNorm() + bb - 2.0 * std::abs(b.values().dot(u.values()));
    const double d = std::sqrt(std::max(d2, 0.0));
    rep.distance.push_back(d);
    rep.sup_distance = std::max(rep.sup_distance, d);
  };
  rep.trajectory = evolve(u0, V, cfg, nullptr, observe);
  rep.ratio = perturbation_size > 0.0 ? rep.sup_distance / perturbation_size : 0.0;
  return rep;
}

DecayReport run_decay_experiment(const SpectralData& spec, std::pair<double, double> window, int samples) {
  require(spec.has_full_basis(), ErrorCode::InvalidArgument, "decay experiment needs the full eigenbasis");
  const LatticeGrid& g = spec.grid();
  DecayReport rep;
  auto pc = [&](const ComplexField& f) { return project(spec, f, Projection::Pc); };
  ComplexField dipole = ComplexField::delta(g, 0);
  dipole.at(1) = -1.0;
  const std::vector<std::pair<std::string, ComplexField>> data = {
      {"Pc delta_0", pc(ComplexField::delta(g, 0))},
      {"Pc delta_5", pc(ComplexField::delta(g, 5))},
      {"Pc dipole", pc(dipole)},
  };
  rep.worst_slope = -std::numeric_limits<double>::infinity();
  for (const auto& [label, u0] : data) {
    DecayFit fit = decay_fit(spec, u0, window, samples);
    if (fit.slope > rep.worst_slope) {
      rep.worst_slope = fit.slope;
      rep.worst_prefactor = fit.prefactor;
    }
    rep.cases.push_back({label, std::move(fit)});
  }

  const ComplexField phi(g, spec.phi(1).values().cast<cplx>());
  const double ratio = std::log(window.second / window.first) / (samples - 1);
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (int k = 0; k < samples; ++k) {
    const double t = window.first * std::exp(ratio * k);
    const double linf = norm(propagate_linear(spec, phi, t), NormSpec::linf());
    rep.bound_state_linf.push_back(linf);
    lo = std::min(lo, linf);
    hi = std::max(hi, linf);
  }
  rep.bound_state_linf_variation = hi - lo;
  return rep;
}

}  // namespace qpdnls
