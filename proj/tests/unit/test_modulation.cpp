#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "qpdnls/modulation.hpp"
#include "test_helpers.hpp"

using namespace qpdnls;

namespace {

constexpr cplx I{0.0, 1.0};

const SpectralData& spec200() {
  static const SpectralData spec = eigendecompose(Potential::reference(LatticeGrid(200)), {.full_basis = false});
  return spec;
}

ModulationContext& shared_ctx() {
  static ModulationContext ctx(spec200());
  return ctx;
}

ComplexVector phi_c(int j) { return spec200().phi(j).values().cast<cplx>(); }

double real_pairing(const ComplexVector& a, const ComplexVector& b) { return b.dot(a).real(); }

// Continuous-spectrum field on `grid` with the discrete part removed by hand (explicit Gram-Schmidt
// against φ_j and iφ_j, both centred on the construction window).
ComplexField continuous_field(const LatticeGrid& grid, std::mt19937_64& rng, double norm, int radius = 30) {
  ComplexField w = qpdnls::testing::localized_field(grid, rng, radius);
  const int off = grid.half_width() - spec200().grid().half_width();
  for (int j = 1; j <= 2; ++j) {
    const RealVector& p = spec200().phi(j).values();
    auto seg = w.values().segment(off, p.size());
    const cplx c = (seg.array() * p.array().cast<cplx>()).sum();
    seg -= c * p.cast<cplx>();
  }
  w.values() *= norm / w.values().norm();
  return w;
}

double max_orthogonality(const ModulationContext& ctx, const Decomposition& d) {
  const TangentFrame fr = ctx.frame(d.z1, d.z2);
  const ComplexVector ieta = I * restrict_centered(d.eta, spec200().grid()).values();
  double r = 0.0;
  for (const auto& dk : fr.d) r = std::max(r, std::abs(real_pairing(ieta, dk.values())));
  return r;
}

}  // namespace

TEST(TangentFrame, ChainRuleMatchesLiteralDifferences) {
  const ModulationContext& ctx = shared_ctx();
  const cplx z1 = std::polar(0.1, 0.3), z2 = std::polar(0.08, -1.1);
  const TangentFrame fr = ctx.frame(z1, z2);
  EXPECT_LE((fr.psi.values() - ctx.psi(z1, z2).values()).norm(), 1e-13);
  for (int j = 1; j <= 2; ++j)
    for (int A = 0; A <= 1; ++A) {
      const ComplexField fd = d_psi(ctx, z1, z2, j, A);
      EXPECT_LE((fr.d[2 * (j - 1) + A].values() - fd.values()).norm(), 1e-8) << "j=" << j << " A=" << A;
    }
}

TEST(TangentFrame, DerivativesApproachTheDiscreteBasisAtSmallAmplitude) {
  const ModulationContext& ctx = shared_ctx();
  EXPECT_LE((d_psi(ctx, 0.02, 0.0, 1, 0).values() - phi_c(1)).norm(), 1e-3);
  EXPECT_LE((d_psi(ctx, 0.02, 0.0, 1, 1).values() - I * phi_c(1)).norm(), 1e-3);
}

TEST(TangentFrame, CentralDifferenceIsSecondOrder) {
  const ModulationContext& ctx = shared_ctx();
  const cplx z1 = 0.15, z2 = std::polar(0.1, 0.7);
  const double h = 0.02;
  const ComplexVector d1 = d_psi(ctx, z1, z2, 1, 0, h).values();
  const ComplexVector d2 = d_psi(ctx, z1, z2, 1, 0, h / 2).values();
  const ComplexVector d3 = d_psi(ctx, z1, z2, 1, 0, h / 4).values();
  const double ratio = (d1 - d2).norm() / (d2 - d3).norm();
  EXPECT_NEAR(ratio, 4.0, 0.2);
}

TEST(TangentFrame, PhaseRotationGeneratesIPsi) {
  const ModulationContext& ctx = shared_ctx();
  const cplx z1 = std::polar(0.12, 0.4), z2 = std::polar(0.09, 2.0);
  const TangentFrame fr = ctx.frame(z1, z2);
  // d/dθ e^{iθ}z_j = i z_j, i.e. real part -Im z_j and imaginary part Re z_j.
  const ComplexVector gen = -z1.imag() * fr.d[0].values() + z1.real() * fr.d[1].values() -
                            z2.imag() * fr.d[2].values() + z2.real() * fr.d[3].values();
  EXPECT_LE((gen - I * fr.psi.values()).norm(), 1e-6);
}

TEST(ModulationContext, SolutionsAreMemoized) {
  ModulationContext ctx(spec200());
  const auto a = ctx.solution(0.1, 0.05);
  const auto b = ctx.solution(0.1, 0.05);
  EXPECT_EQ(a.get(), b.get());
  EXPECT_EQ(ctx.stats().qp_solves, 1);
}

TEST(Decompose, RecoversAnExactManifoldPoint) {
  const ModulationContext& ctx = shared_ctx();
  const cplx z1 = std::polar(0.11, 1.3), z2 = std::polar(0.07, -0.4);
  const Decomposition d = decompose(ctx, ctx.psi(z1, z2));
  EXPECT_LE(std::abs(d.z1 - z1), 1e-10);
  EXPECT_LE(std::abs(d.z2 - z2), 1e-10);
  EXPECT_LE(d.eta.values().norm(), 1e-10);
}

TEST(Decompose, NearBasisInputConvergesQuickly) {
  const ModulationContext& ctx = shared_ctx();
  std::mt19937_64 rng(11);
  const ComplexField w = continuous_field(spec200().grid(), rng, 1e-3);
  ComplexField u = w;
  u.values() += 0.05 * phi_c(1) + cplx(0.0, 0.05) * phi_c(2);
  const Decomposition d = decompose(ctx, u);
  EXPECT_LE(d.newton_iters, 6);
  EXPECT_LE(d.orth_residual, 1e-10);
  EXPECT_LE(max_orthogonality(ctx, d), 1e-10);
  const double lhs = std::abs(d.z1) + std::abs(d.z2) + d.eta.values().norm();
  const double un = u.values().norm();
  EXPECT_GE(lhs, 0.5 * un);
  EXPECT_LE(lhs, 2.0 * un);
  EXPECT_LE((ctx.psi(d.z1, d.z2).values() + d.eta.values() - u.values()).norm(), 1e-10);
  for (std::size_t k = 1; k < d.residual_history.size(); ++k)
    EXPECT_LT(d.residual_history[k], d.residual_history[k - 1]);
}

TEST(Decompose, ZeroFieldHasZeroCoordinates) {
  const ModulationContext& ctx = shared_ctx();
  const Decomposition d = decompose(ctx, ComplexField(spec200().grid()));
  EXPECT_EQ(d.z1, cplx(0.0));
  EXPECT_EQ(d.z2, cplx(0.0));
  EXPECT_EQ(d.eta.values().norm(), 0.0);
}

TEST(Decompose, RejectsLargeFields) {
  const ModulationContext& ctx = shared_ctx();
  ComplexField u(spec200().grid());
  u.values() = 0.31 * phi_c(1);
  try {
    decompose(ctx, u);
    FAIL() << "expected SmallnessViolation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SmallnessViolation);
  }
}

TEST(Decompose, GaugeEquivariant) {
  const ModulationContext& ctx = shared_ctx();
  std::mt19937_64 rng(5);
  ComplexField u = continuous_field(spec200().grid(), rng, 0.02);
  u.values() += ctx.psi(std::polar(0.1, 0.2), std::polar(0.06, 1.0)).values();
  const Decomposition d = decompose(ctx, u);
  const cplx g = std::polar(1.0, 0.9);
  ComplexField ur = u;
  ur.values() *= g;
  const Decomposition dr = decompose(ctx, ur);
  EXPECT_LE(std::abs(dr.z1 - g * d.z1), 1e-9);
  EXPECT_LE(std::abs(dr.z2 - g * d.z2), 1e-9);
  EXPECT_LE((dr.eta.values() - g * d.eta.values()).norm(), 1e-9);
}

TEST(Decompose, WorksOnALargerGrid) {
  const ModulationContext& ctx = shared_ctx();
  const LatticeGrid big(500);
  std::mt19937_64 rng(8);
  ComplexField u = continuous_field(big, rng, 0.01, 300);
  const cplx z1 = std::polar(0.08, -2.0), z2 = std::polar(0.1, 0.5);
  u = ComplexField(big, u.values() + embed_centered(ctx.psi(z1, z2), big).values());
  const Decomposition d = decompose(ctx, u);
  EXPECT_EQ(d.eta.grid(), big);
  EXPECT_LE(max_orthogonality(ctx, d), 1e-10);
  const ComplexVector rebuilt = embed_centered(ctx.psi(d.z1, d.z2), big).values() + d.eta.values();
  EXPECT_LE((rebuilt - u.values()).norm(), 1e-10);
}

TEST(RMap, IdentityAtTheOrigin) {
  const ModulationContext& ctx = shared_ctx();
  std::mt19937_64 rng(3);
  const ComplexField eta = continuous_field(spec200().grid(), rng, 0.05);
  std::array<double, 4> beta{};
  const ComplexField out = rmap_apply(ctx, 0.0, 0.0, eta, &beta);
  EXPECT_LE((out.values() - eta.values()).norm(), 1e-14);
  for (double b : beta) EXPECT_LE(std::abs(b), 1e-15);
}

TEST(RMap, ContinuousPartIsPreservedAndOutputIsOrthogonal) {
  const ModulationContext& ctx = shared_ctx();
  std::mt19937_64 rng(4);
  const ComplexField eta = continuous_field(spec200().grid(), rng, 0.05);
  const cplx z1 = std::polar(0.15, 0.8), z2 = std::polar(0.12, -0.3);
  const ComplexField out = rmap_apply(ctx, z1, z2, eta);
  EXPECT_LE((project(spec200(), out, Projection::Pc).values() - eta.values()).norm(), 1e-12);
  const TangentFrame fr = ctx.frame(z1, z2);
  for (const auto& dk : fr.d) EXPECT_LE(std::abs(real_pairing(I * out.values(), dk.values())), 1e-10);
}

TEST(RMap, CorrectionScalesLikeTheSixthPower) {
  const ModulationContext& ctx = shared_ctx();
  std::mt19937_64 rng(6);
  const ComplexField eta = continuous_field(spec200().grid(), rng, 0.01);
  std::vector<double> lx, ly;
  for (double rho : {0.03, 0.05, 0.08, 0.12}) {
    std::array<double, 4> beta{};
    rmap_apply(ctx, std::polar(rho, 0.4), std::polar(rho, -1.2), eta, &beta);
    double bmax = 0.0;
    for (double b : beta) bmax = std::max(bmax, std::abs(b));
    lx.push_back(std::log(rho));
    ly.push_back(std::log(bmax / eta.values().norm()));
  }
  const double n = static_cast<double>(lx.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    sx += lx[k];
    sy += ly[k];
    sxx += lx[k] * lx[k];
    sxy += lx[k] * ly[k];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_NEAR(slope, 6.0, 0.3);
}

TEST(RMap, RejectsDiscreteInput) {
  const ModulationContext& ctx = shared_ctx();
  ComplexField eta(spec200().grid());
  eta.values() = 1e-3 * phi_c(2);
  try {
    rmap_apply(ctx, 0.05, 0.05, eta);
    FAIL() << "expected NotOrthogonal";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotOrthogonal);
  }
}

TEST(Coordinates, RoundTripThroughDecompose) {
  const ModulationContext& ctx = shared_ctx();
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> amp(0.0, 0.15), phase(-M_PI, M_PI);
  for (int trial = 0; trial < 8; ++trial) {
    const cplx z1 = std::polar(amp(rng), phase(rng)), z2 = std::polar(amp(rng), phase(rng));
    const ComplexField eta_c = continuous_field(spec200().grid(), rng, 0.03);
    const ComplexField eta = rmap_apply(ctx, z1, z2, eta_c);
    ComplexField u = eta;
    u.values() += ctx.psi(z1, z2).values();
    const Decomposition d = decompose(ctx, u);
    EXPECT_LE(std::abs(d.z1 - z1), 1e-8) << trial;
    EXPECT_LE(std::abs(d.z2 - z2), 1e-8) << trial;
    EXPECT_LE((d.eta.values() - eta.values()).norm(), 1e-8) << trial;
  }
}
