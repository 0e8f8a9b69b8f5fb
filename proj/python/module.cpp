#include "meanfield/dynamics.hpp"
#include "meanfield/errors.hpp"
#include "meanfield/kernel.hpp"
#include "meanfield/lab.hpp"
#include "meanfield/numeric.hpp"
#include "meanfield/oracle.hpp"
#include "meanfield/potentials.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

namespace py = pybind11;
using namespace meanfield;

namespace {

CoefficientMode parse_mode(const std::string& s) {
    if (s == "fixed") return CoefficientMode::Fixed;
    if (s == "general") return CoefficientMode::General;
    throw ConfigError("mode must be 'fixed' or 'general'", "dynamics.mode");
}

py::object to_python(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict summary_dict(const CsvTable& t) {
    py::dict out;
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        std::vector<double> col;
        for (const auto& r : t.rows) col.push_back(r[c]);
        out[py::str(t.columns[c])] = col;
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Mean-field two-layer network dynamics";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<UnsupportedError>(m, "UnsupportedError", PyExc_NotImplementedError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    py::class_<TruncatedReluDot>(m, "TruncatedRelu")
        .def(py::init<double, double, double, double>(), py::arg("s1") = 0.0, py::arg("s2") = 1.0,
             py::arg("t1") = 0.0, py::arg("t2") = 1.0)
        .def("value", &TruncatedReluDot::value)
        .def("slope", &TruncatedReluDot::slope)
        .def("gaussian_moments",
             [](const TruncatedReluDot& a, double mu, double s) {
                 const auto g = a.gaussian_moments(mu, s);
                 return py::make_tuple(g.value, g.slope, g.slope_g);
             })
        .def_property_readonly("kinks", &TruncatedReluDot::kinks);

    py::class_<DataModel>(m, "DataModel");
    py::class_<AnisotropicGaussians, DataModel>(m, "AnisotropicGaussians")
        .def(py::init<std::size_t, double, double>(), py::arg("d"), py::arg("gamma"), py::arg("delta"))
        .def_property_readonly("dim", &AnisotropicGaussians::dim)
        .def("covariance", &AnisotropicGaussians::covariance);

    py::class_<PopulationEstimator>(m, "Estimator")
        .def_static("monte_carlo", &PopulationEstimator::monte_carlo, py::arg("data"), py::arg("n_mc"),
                    py::arg("seed"))
        .def_static("gauss_hermite", &PopulationEstimator::gauss_hermite, py::arg("data"), py::arg("n_nodes") = 41)
        .def_property_readonly("points", &PopulationEstimator::points)
        .def_property_readonly("labels", &PopulationEstimator::labels);

    m.def(
        "init_sample",
        [](const std::string& kind, std::size_t n, std::size_t d, const std::string& mode, std::uint64_t seed,
           double a0, double w_var, double radius_min, double radius_max) {
            InitSpec s;
            s.kind = parse_init_kind(kind);
            s.a0 = a0;
            s.w_var = w_var;
            s.radius_min = radius_min;
            s.radius_max = radius_max;
            return init_sample(s, n, d, parse_mode(mode), seed).theta();
        },
        py::arg("kind"), py::arg("n"), py::arg("d"), py::arg("mode") = "fixed", py::arg("seed") = 1,
        py::arg("a0") = 1.0, py::arg("w_var") = 0.0, py::arg("radius_min") = 0.0, py::arg("radius_max") = 1.0,
        "D x N parameter matrix; column i is (a_i, w_i).");

    m.def(
        "risk",
        [](const Eigen::MatrixXd& theta, const std::string& mode, double alpha, const PopulationEstimator& est,
           const TruncatedReluDot& act) { return risk_particles(Ensemble(theta, parse_mode(mode), alpha), est, act); },
        py::arg("theta"), py::arg("mode"), py::arg("alpha"), py::arg("estimator"), py::arg("activation"));
    m.def(
        "risk_residual",
        [](const Eigen::MatrixXd& theta, const std::string& mode, double alpha, const PopulationEstimator& est,
           const TruncatedReluDot& act) {
            return risk_population_mc(Ensemble(theta, parse_mode(mode), alpha), est, act);
        },
        py::arg("theta"), py::arg("mode"), py::arg("alpha"), py::arg("estimator"), py::arg("activation"));
    m.def(
        "force",
        [](const Eigen::MatrixXd& theta, const std::string& mode, double alpha, const PopulationEstimator& est,
           const TruncatedReluDot& act) { return mean_field_force(theta, parse_mode(mode), alpha, est, act).force; },
        py::arg("theta"), py::arg("mode"), py::arg("alpha"), py::arg("estimator"), py::arg("activation"));

    m.def("fsum", [](const std::vector<double>& v) { return order_independent_sum(v); });
    m.def(
        "fit_loglog",
        [](const std::vector<double>& x, const std::vector<double>& y) {
            const auto f = fit_loglog(x, y);
            return py::dict(py::arg("slope") = f.slope, py::arg("intercept") = f.intercept,
                            py::arg("stderr") = f.slope_stderr, py::arg("ci_low") = f.ci_low,
                            py::arg("ci_high") = f.ci_high);
        },
        py::arg("x"), py::arg("y"));
    m.def("w2", py::overload_cast<const Eigen::MatrixXd&, const Eigen::MatrixXd&>(&w2_estimate), py::arg("a"),
          py::arg("b"));
    m.def(
        "linearized_residual",
        [](const Eigen::MatrixXd& H, const Eigen::VectorXd& y, double t) {
            return linearized_residual(KernelMatrix(H), y, t);
        },
        py::arg("H"), py::arg("y"), py::arg("t"));
    m.def(
        "krr_solve",
        [](const Eigen::MatrixXd& H, const Eigen::VectorXd& y) {
            const auto s = krr_solve(KernelMatrix(H), y);
            return py::make_tuple(s.coeffs, std::string(to_string(s.method)));
        },
        py::arg("H"), py::arg("y"));

    m.def("experiments", &experiment_names);
    m.def(
        "default_config", [](const std::string& e) { return to_python(default_config(e)); }, py::arg("experiment"));
    m.def(
        "run",
        [](const std::string& experiment, const std::string& config, const std::vector<std::string>& overrides) {
            RunOutputs out;
            {
                py::gil_scoped_release release;
                out = run_experiment(parse_and_validate(experiment, config, overrides));
            }
            std::vector<std::string> files;
            for (const auto& f : out.files) files.push_back(f.string());
            return py::make_tuple(files, summary_dict(out.summary));
        },
        py::arg("experiment"), py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{});
}
