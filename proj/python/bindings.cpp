// Python bindings: a Model object wrapping one potential's spectral data and
// modulation context, plus the free-standing checks. Fields cross the
// boundary as numpy arrays indexed from site -N to N.

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>

#include "qpdnls/dynamics.hpp"

namespace py = pybind11;
using namespace qpdnls;

namespace {

class Model {
 public:
  Model(std::vector<std::pair<int, double>> sites, int N, int m_max)
      : spec_(eigendecompose(Potential::from_sites(LatticeGrid(N), sites))) {
    ModulationOptions opts;
    opts.qp.m_max = m_max;
    ctx_ = std::make_unique<ModulationContext>(spec_, opts);
  }

  int half_width() const { return spec_.grid().half_width(); }
  double e(int j) const { return spec_.e(j); }
  RealVector phi(int j) const { return spec_.phi(j).values(); }
  RealVector eigenvalues() const { return spec_.eigenvalues(); }
  RealVector potential() const { return spec_.potential().values(); }

  py::dict solve_qp(double rho1, double rho2) const {
    const auto sol = ctx_->solution(rho1, rho2);
    py::dict d;
    d["rho1"] = sol->rho1;
    d["rho2"] = sol->rho2;
    d["eps"] = sol->eps;
    d["freq"] = sol->freq;
    d["iterations"] = sol->iterations;
    d["contraction_factor"] = sol->contraction_factor;
    d["fixed_point_residual"] = sol->fixed_point_residual;
    d["tail_ratio"] = sol->tail_ratio;
    d["stationarity_residual"] = qp_stationarity_residual(spec_, *sol, 4);
    return d;
  }

  ComplexVector psi(std::complex<double> z1, std::complex<double> z2) const { return ctx_->psi(z1, z2).values(); }

  ComplexVector correction(std::complex<double> z1, std::complex<double> z2) const {
    return assemble_correction(*ctx_->solution(std::abs(z1), std::abs(z2)), z1, z2).values();
  }

  py::tuple decompose(const ComplexVector& u) const {
    const Decomposition d = qpdnls::decompose(*ctx_, field(u));
    return py::make_tuple(d.z1, d.z2, d.eta.values(), d.newton_iters);
  }

  ComplexVector rmap(std::complex<double> z1, std::complex<double> z2, const ComplexVector& eta) const {
    return rmap_apply(*ctx_, z1, z2, field(eta)).values();
  }

  py::dict evolve(const ComplexVector& u0, double dt, double T, int record_stride, bool track,
                  const std::string& scheme) const {
    EvolutionConfig cfg;
    cfg.dt = dt;
    cfg.T = T;
    cfg.record_stride = record_stride;
    cfg.power = ctx_->options().qp.power;
    if (scheme == "rk4")
      cfg.scheme = Scheme::RK4;
    else if (scheme != "strang")
      fail(ErrorCode::InvalidArgument, "scheme must be 'strang' or 'rk4'");
    const ComplexField start = field(u0);
    const Potential V = spec_.potential().on_grid(start.grid());
    TrajectoryRecord tr;
    {
      py::gil_scoped_release release;
      tr = qpdnls::evolve(start, V, cfg, track ? ctx_.get() : nullptr);
    }
    py::dict d;
    d["t"] = tr.times;
    d["l2"] = tr.l2_norm;
    d["energy"] = tr.energy;
    d["linf"] = tr.linf;
    if (tr.tracked()) {
      d["z1"] = tr.z1;
      d["z2"] = tr.z2;
      d["eta_weighted"] = tr.eta_weighted;
    }
    d["final"] = tr.final_state.values();
    return d;
  }

 private:
  ComplexField field(const ComplexVector& u) const {
    require(u.size() % 2 == 1 && u.size() >= 3, ErrorCode::ShapeMismatch, "field length must be 2N+1");
    return ComplexField(LatticeGrid(int(u.size() / 2)), u);
  }

  SpectralData spec_;
  std::unique_ptr<ModulationContext> ctx_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Quasi-periodic solutions of the discrete NLS with a two-bound-state potential.";

  static py::exception<Error> error_type(m, "QpdnlsError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def(
      "check_nonresonance",
      [](double e1, double e2, long scan_bound) {
        const ResonanceReport r = check_nonresonance(e1, e2, scan_bound);
        std::vector<long> ns;
        for (const auto& v : r.violations) ns.push_back(v.n);
        py::dict d;
        d["pass"] = r.pass;
        d["violations"] = ns;
        d["min_margin"] = r.min_margin;
        d["tail_proven"] = r.tail_proven;
        return d;
      },
      py::arg("e1"), py::arg("e2"), py::arg("scan_bound") = 64);

  m.def(
      "decay_exponent",
      [](std::vector<std::pair<int, double>> sites, int N, double t_min, double t_max, int samples) {
        const SpectralData s = eigendecompose(Potential::from_sites(LatticeGrid(N), sites), {.require_pair = false});
        const DecayFit f = qpdnls::decay_exponent(s, {t_min, t_max}, samples);
        return py::make_tuple(f.slope, f.prefactor);
      },
      py::arg("sites"), py::arg("N"), py::arg("t_min"), py::arg("t_max"), py::arg("samples") = 12);

  py::class_<Model>(m, "Model")
      .def(py::init<std::vector<std::pair<int, double>>, int, int>(),
           py::arg("sites") = std::vector<std::pair<int, double>>{{0, -1.5}, {1, 1.5}}, py::arg("N") = 200,
           py::arg("m_max") = 6)
      .def_property_readonly("half_width", &Model::half_width)
      .def_property_readonly("eigenvalues", &Model::eigenvalues)
      .def_property_readonly("potential", &Model::potential)
      .def("e", &Model::e, py::arg("j"))
      .def("phi", &Model::phi, py::arg("j"))
      .def("solve_qp", &Model::solve_qp, py::arg("rho1"), py::arg("rho2"))
      .def("psi", &Model::psi, py::arg("z1"), py::arg("z2"))
      .def("correction", &Model::correction, py::arg("z1"), py::arg("z2"))
      .def("decompose", &Model::decompose, py::arg("u"),
           "Returns (z1, z2, eta, newton_iterations) with u = Psi(z1, z2) + eta.")
      .def("rmap", &Model::rmap, py::arg("z1"), py::arg("z2"), py::arg("eta"))
      .def("evolve", &Model::evolve, py::arg("u0"), py::arg("dt"), py::arg("T"), py::arg("record_stride") = 1,
           py::arg("track") = false, py::arg("scheme") = "strang");
}
