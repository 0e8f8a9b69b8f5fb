#include "meanfield/lab.hpp"

#include "meanfield/csv.hpp"
#include "meanfield/data.hpp"
#include "meanfield/dynamics.hpp"
#include "meanfield/errors.hpp"
#include "meanfield/estimator.hpp"
#include "meanfield/kernel.hpp"
#include "meanfield/model.hpp"
#include "meanfield/numeric.hpp"
#include "meanfield/oracle.hpp"
#include "meanfield/potentials.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>

namespace meanfield {

namespace {

Json shared_defaults() {
    return Json::parse(R"({
  "experiment": "",
  "seed": 1,
  "model": {
    "d": 10,
    "gamma": 0.5,
    "delta": 0.5,
    "rotation_seed": 0,
    "alpha": 1.0,
    "activation": {"s1": 0.0, "s2": 1.0, "t1": 0.0, "t2": 1.0}
  },
  "dynamics": {
    "N": 100,
    "mode": "fixed",
    "eps": 0.01,
    "h_ode": 0.0,
    "T": 1.0,
    "lambda": 0.0,
    "tau": 0.0,
    "ode_tol": 0.0,
    "kinds": ["sgd", "gd", "pd"],
    "schedule": {"family": "constant", "c": 0.5, "rate": 0.0},
    "init": {"kind": "point-mass", "a0": 1.0, "w_var": 0.0, "radius_min": 0.0, "radius_max": 1.0}
  },
  "estimator": {"strategy": "monte-carlo", "n_mc": 1024, "n_nodes": 41},
  "study": {
    "N_grid": [25, 50, 100, 200, 400, 800],
    "N_ref": 6400,
    "ref_h_ode": 0.01,
    "ref_seed": 1000003,
    "ref_stratified": true,
    "seeds": [1, 2, 3, 4, 5, 6, 7, 8],
    "frozen_stream": true,
    "eps_grid": [],
    "alpha_grid": [2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
    "n_points": 32,
    "z_points": 4,
    "particles_grid": [1000, 4000, 16000]
  },
  "fokker_planck": {"xi": 0.5, "L": 4.0, "M": 400, "init_mean": 0.5, "init_sd": 0.3},
  "io": {"out_dir": "out", "snapshot_every": 1, "save_states": false}
})");
}

Json overlay(const std::string& experiment) {
    if (experiment == "gap-scaling")
        return Json::parse(R"({"model": {"d": 20},
                               "dynamics": {"eps": 0.00001, "T": 0.5,
                                            "init": {"kind": "radial-sphere", "radius_min": 0.0, "radius_max": 6.0}},
                               "io": {"snapshot_every": 1000}})");
    if (experiment == "gaussians-demo")
        return Json::parse(R"({"model": {"d": 40, "gamma": 0.5, "delta": 0.8,
                                         "activation": {"s1": 0.0, "s2": 3.0, "t1": 0.0, "t2": 2.0}},
                               "dynamics": {"N": 200, "eps": 0.0025, "T": 4.0,
                                            "init": {"kind": "radial-sphere", "radius_min": 0.0, "radius_max": 0.1}},
                               "io": {"snapshot_every": 40}})");
    if (experiment == "kernel-crossover")
        return Json::parse(R"({"model": {"d": 8}, "dynamics": {"N": 2000, "mode": "general", "T": 2.0, "h_ode": 0.01},
                               "io": {"snapshot_every": 10}})");
    if (experiment == "fokker-planck-check")
        return Json::parse(R"({"model": {"d": 1, "gamma": 1.0}, "dynamics": {"eps": 0.005, "tau": 0.5, "lambda": 1.0},
                               "io": {"snapshot_every": 20}})");
    if (experiment == "krr-check")
        return Json::parse(R"({"model": {"d": 2}, "dynamics": {"N": 200, "mode": "general", "T": 200.0, "h_ode": 0.01},
                               "study": {"n_points": 4}})");
    return Json::object();
}

void apply_overlay(Json& base, const Json& over) {
    for (auto it = over.begin(); it != over.end(); ++it) {
        if (it.value().is_object() && base[it.key()].is_object())
            apply_overlay(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
}

std::string join(const std::string& prefix, const std::string& key) { return prefix.empty() ? key : prefix + "." + key; }

enum class Kind { Integer, Real, Boolean, Text, Array, Object };

Kind kind_of(const Json& j) {
    if (j.is_boolean()) return Kind::Boolean;
    if (j.is_number_integer()) return Kind::Integer;
    if (j.is_number()) return Kind::Real;
    if (j.is_string()) return Kind::Text;
    if (j.is_array()) return Kind::Array;
    if (j.is_object()) return Kind::Object;
    throw ConfigError("null is not a valid configuration value");
}

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::Integer: return "a non-negative integer";
        case Kind::Real: return "a number";
        case Kind::Boolean: return "a boolean";
        case Kind::Text: return "a string";
        case Kind::Array: return "an array";
        case Kind::Object: return "an object";
    }
    return "?";
}

// Checks `value` against the default's type; integers must be non-negative.
void check_scalar(const Json& def, const Json& value, const std::string& path) {
    const Kind want = kind_of(def);
    bool ok = false;
    switch (want) {
        case Kind::Integer:
            ok = value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
            break;
        case Kind::Real: ok = value.is_number(); break;
        case Kind::Boolean: ok = value.is_boolean(); break;
        case Kind::Text: ok = value.is_string(); break;
        case Kind::Array: {
            if (!value.is_array()) break;
            ok = true;
            // element type follows the default's first element; empty defaults hold numbers
            const Json proto = def.empty() ? Json(0.0) : def.front();
            for (std::size_t i = 0; i < value.size(); ++i)
                check_scalar(proto, value[i], path + "[" + std::to_string(i) + "]");
            break;
        }
        case Kind::Object: ok = value.is_object(); break;
    }
    if (!ok) throw ConfigError("type mismatch at " + path + ": expected " + kind_name(want), path);
}

void record_leaves(const Json& j, const std::string& prefix, Source src, std::map<std::string, Source>& prov) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it) record_leaves(it.value(), join(prefix, it.key()), src, prov);
    } else {
        prov[prefix] = src;
    }
}

void merge_file(Json& target, const Json& file, const std::string& prefix, std::map<std::string, Source>& prov) {
    if (!file.is_object()) throw ConfigError("expected an object at " + (prefix.empty() ? "<root>" : prefix), prefix);
    for (auto it = file.begin(); it != file.end(); ++it) {
        const std::string path = join(prefix, it.key());
        if (!target.contains(it.key())) throw ConfigError("unknown key " + path, path);
        Json& slot = target[it.key()];
        if (slot.is_object()) {
            merge_file(slot, it.value(), path, prov);
        } else {
            check_scalar(slot, it.value(), path);
            slot = it.value();
            record_leaves(slot, path, Source::File, prov);
        }
    }
}

void apply_flag(Json& root, const std::string& spec, std::map<std::string, Source>& prov) {
    std::string body = spec;
    while (!body.empty() && body.front() == '-') body.erase(body.begin());
    const auto eq = body.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like --key.path=value: " + spec);
    const std::string path = body.substr(0, eq);
    const std::string raw = body.substr(eq + 1);
    Json* slot = &root;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!slot->is_object() || !slot->contains(part)) throw ConfigError("unknown key " + path, path);
        slot = &(*slot)[part];
    }
    if (slot->is_object()) throw ConfigError(path + " is a section, not a value", path);
    Json value;
    if (slot->is_string()) {
        value = raw;
    } else {
        try {
            value = Json::parse(raw);
        } catch (const std::exception&) {
            throw ConfigError("cannot parse value for " + path + ": " + raw, path);
        }
    }
    check_scalar(*slot, value, path);
    *slot = value;
    record_leaves(*slot, path, Source::Flag, prov);
}

const Json& lookup(const Json& root, const std::string& path) {
    const Json* node = &root;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown key " + path, path);
        node = &(*node)[part];
    }
    return *node;
}

CoefficientMode parse_mode(const std::string& s) {
    if (s == "fixed") return CoefficientMode::Fixed;
    if (s == "general") return CoefficientMode::General;
    throw ConfigError("mode must be fixed or general", "dynamics.mode");
}

// ---- builders shared by validation and the drivers ----

struct Setup {
    std::unique_ptr<AnisotropicGaussians> data;
    std::unique_ptr<TruncatedReluDot> act;
    std::unique_ptr<PopulationEstimator> est;
    DynamicsConfig dyn;
    StepSchedule schedule;
    InitSpec init;
    std::size_t n_particles = 0;
    double alpha = 1.0;
};

TruncatedReluDot build_activation(const RunConfig& c) {
    return TruncatedReluDot(c.number("model.activation.s1"), c.number("model.activation.s2"),
                            c.number("model.activation.t1"), c.number("model.activation.t2"));
}

std::unique_ptr<AnisotropicGaussians> build_data(const RunConfig& c) {
    const std::size_t d = c.count("model.d");
    if (d < 1) throw ConfigError("model.d must be >= 1", "model.d");
    const double gamma = c.number("model.gamma");
    const double delta = c.number("model.delta");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("model.gamma must lie in (0, 1]", "model.gamma");
    if (!(delta >= 0.0 && delta < 1.0)) throw ConfigError("model.delta must lie in [0, 1)", "model.delta");
    const auto rot = c.seed_value("model.rotation_seed");
    if (rot == 0) return std::make_unique<AnisotropicGaussians>(d, gamma, delta);
    return std::make_unique<AnisotropicGaussians>(d, gamma, delta, AnisotropicGaussians::random_rotation(d, rot));
}

PopulationEstimator build_estimator(const RunConfig& c, const DataModel& data) {
    const std::string s = c.text("estimator.strategy");
    if (s == "monte-carlo") {
        const std::size_t n = c.count("estimator.n_mc");
        if (n < 1) throw ConfigError("estimator.n_mc must be >= 1", "estimator.n_mc");
        return PopulationEstimator::monte_carlo(data, n, c.seed_value("seed"));
    }
    if (s == "gauss-hermite") {
        const std::size_t n = c.count("estimator.n_nodes");
        if (n < 2 || n > 200) throw ConfigError("estimator.n_nodes must lie in [2, 200]", "estimator.n_nodes");
        return PopulationEstimator::gauss_hermite(data, static_cast<int>(n));
    }
    throw ConfigError("estimator.strategy must be monte-carlo or gauss-hermite", "estimator.strategy");
}

StepSchedule build_schedule(const RunConfig& c) {
    const std::string fam = c.text("dynamics.schedule.family");
    StepSchedule s;
    if (fam == "constant")
        s = StepSchedule::constant(c.number("dynamics.schedule.c"));
    else if (fam == "exp-decay")
        s = StepSchedule::exp_decay(c.number("dynamics.schedule.c"), c.number("dynamics.schedule.rate"));
    else
        throw ConfigError("dynamics.schedule.family must be constant or exp-decay", "dynamics.schedule.family");
    s.validate();
    return s;
}

InitSpec build_init(const RunConfig& c) {
    InitSpec s;
    try {
        s.kind = parse_init_kind(c.text("dynamics.init.kind"));
    } catch (const ConfigError& e) {
        throw ConfigError(e.what(), "dynamics.init.kind");
    }
    s.a0 = c.number("dynamics.init.a0");
    s.w_var = c.number("dynamics.init.w_var");
    s.radius_min = c.number("dynamics.init.radius_min");
    s.radius_max = c.number("dynamics.init.radius_max");
    if (s.w_var < 0.0) throw ConfigError("dynamics.init.w_var must be >= 0", "dynamics.init.w_var");
    if (!(s.radius_min >= 0.0 && s.radius_min <= s.radius_max))
        throw ConfigError("need 0 <= radius_min <= radius_max", "dynamics.init.radius_min <= radius_max");
    return s;
}

DynamicsConfig build_dynamics(const RunConfig& c) {
    DynamicsConfig d;
    d.eps = c.number("dynamics.eps");
    d.h_ode = c.number("dynamics.h_ode");
    d.T = c.number("dynamics.T");
    d.lambda = c.number("dynamics.lambda");
    d.tau = c.number("dynamics.tau");
    d.ode_tol = c.number("dynamics.ode_tol");
    d.mode = parse_mode(c.text("dynamics.mode"));
    d.seed = c.seed_value("seed");
    d.snapshot_every = c.count("io.snapshot_every");
    d.validate();
    return d;
}

std::vector<DynamicsKind> build_kinds(const RunConfig& c) {
    std::vector<DynamicsKind> out;
    const Json& arr = c.at("dynamics.kinds");
    if (!arr.is_array() || arr.empty()) throw ConfigError("dynamics.kinds must be a non-empty list", "dynamics.kinds");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = "dynamics.kinds[" + std::to_string(i) + "]";
        if (!arr[i].is_string()) throw ConfigError("type mismatch at " + path + ": expected a string", path);
        try {
            out.push_back(parse_dynamics_kind(arr[i].get<std::string>()));
        } catch (const ConfigError& e) {
            throw ConfigError(e.what(), path);
        }
    }
    return out;
}

Setup build_setup(const RunConfig& c, bool with_estimator = true) {
    Setup s;
    s.act = std::make_unique<TruncatedReluDot>(build_activation(c));
    s.data = build_data(c);
    if (with_estimator) s.est = std::make_unique<PopulationEstimator>(build_estimator(c, *s.data));
    s.dyn = build_dynamics(c);
    s.schedule = build_schedule(c);
    s.init = build_init(c);
    s.n_particles = c.count("dynamics.N");
    if (s.n_particles < 1) throw ConfigError("dynamics.N must be >= 1", "dynamics.N");
    s.alpha = c.number("model.alpha");
    if (!(s.alpha > 0.0)) throw ConfigError("model.alpha must be > 0", "model.alpha");
    return s;
}

Ensemble build_ensemble(const Setup& s, std::size_t n) {
    return init_sample(s.init, n, s.data->dim(), s.dyn.mode, s.dyn.seed, s.alpha);
}

std::vector<std::size_t> counts(const RunConfig& c, const std::string& path) {
    std::vector<std::size_t> out;
    for (double v : c.numbers(path)) out.push_back(static_cast<std::size_t>(v));
    return out;
}

void validate_experiment(const RunConfig& c) {
    const std::string& e = c.experiment;
    // building the shared objects runs every library-level check
    const bool needs_estimator = e != "kernel-crossover" && e != "krr-check" && e != "fokker-planck-check";
    const Setup s = build_setup(c, false);
    if (needs_estimator) {
        if (c.text("estimator.strategy") != "monte-carlo" && c.text("estimator.strategy") != "gauss-hermite")
            throw ConfigError("estimator.strategy must be monte-carlo or gauss-hermite", "estimator.strategy");
        if (c.text("estimator.strategy") == "monte-carlo" && c.count("estimator.n_mc") < 1)
            throw ConfigError("estimator.n_mc must be >= 1", "estimator.n_mc");
    }
    if (e == "run-coupled") {
        build_kinds(c);
        for (double eps : c.numbers("study.eps_grid"))
            if (!(eps > 0.0)) throw ConfigError("study.eps_grid entries must be > 0", "study.eps_grid");
    }
    if (e == "gaussians-demo" && s.dyn.mode != CoefficientMode::Fixed)
        throw ConfigError("gaussians-demo runs in fixed-coefficient mode only", "dynamics.mode");
    if (e == "gap-scaling") {
        if (s.dyn.mode != CoefficientMode::Fixed)
            throw ConfigError("the N-scaling study runs in fixed-coefficient mode", "dynamics.mode");
        const auto grid = counts(c, "study.N_grid");
        if (grid.empty()) throw ConfigError("study.N_grid is empty", "study.N_grid");
        if (c.numbers("study.seeds").empty()) throw ConfigError("study.seeds is empty", "study.seeds");
        if (c.count("study.N_ref") < 8 * *std::max_element(grid.begin(), grid.end()))
            throw ConfigError("reference must dominate: N_ref >= 8 max(N_grid)", "study.N_ref");
    }
    if (e == "fokker-planck-check") {
        if (c.count("model.d") != 1) throw ConfigError("fokker-planck-check needs model.d = 1", "model.d");
        if (c.numbers("study.particles_grid").empty())
            throw ConfigError("study.particles_grid is empty", "study.particles_grid");
        if (!(c.number("fokker_planck.xi") > 0.0)) throw ConfigError("fokker_planck.xi must be > 0", "fokker_planck.xi");
        if (!(c.number("fokker_planck.L") > 0.0)) throw ConfigError("fokker_planck.L must be > 0", "fokker_planck.L");
        if (c.count("fokker_planck.M") < 2) throw ConfigError("fokker_planck.M must be >= 2", "fokker_planck.M");
        if (!(c.number("fokker_planck.init_sd") > 0.0))
            throw ConfigError("fokker_planck.init_sd must be > 0", "fokker_planck.init_sd");
    }
    if (e == "kernel-crossover" || e == "krr-check") {
        if (s.dyn.mode != CoefficientMode::General)
            throw ConfigError(e + " trains coefficients; set dynamics.mode = general", "dynamics.mode");
        if (s.n_particles % 2 != 0) throw ConfigError("antithetic init needs even dynamics.N", "dynamics.N");
        if (c.count("study.n_points") < 1) throw ConfigError("study.n_points must be >= 1", "study.n_points");
    }
    if (e == "kernel-crossover") {
        for (double a : c.numbers("study.alpha_grid"))
            if (!(a > 0.0)) throw ConfigError("study.alpha_grid entries must be > 0", "study.alpha_grid");
        if (c.numbers("study.alpha_grid").empty()) throw ConfigError("study.alpha_grid is empty", "study.alpha_grid");
    }
}

// ---- drivers ----

std::vector<double> trajectory_summary(const TrajectoryRecord& tr) {
    const auto risk = tr.column("risk_particles");
    const auto maxa = tr.column("max_abs_a");
    return {risk.front(), risk.back(), *std::min_element(risk.begin(), risk.end()), maxa.back(),
            static_cast<double>(tr.rows.size())};
}

void write_states(const RunConfig& c, const TrajectoryRecord& tr, RunOutputs& out) {
    if (!c.flag("io.save_states")) return;
    const auto steps = tr.column("step");
    for (std::size_t s = 0; s < tr.states.size(); ++s) {
        const auto path = c.out_dir() / "states" / ("step_" + std::to_string(static_cast<long long>(steps[s])) + ".csv");
        write_state(path, tr.states[s]);
        out.files.push_back(path);
    }
}

RunOutputs run_sgd(const RunConfig& c) {
    Setup s = build_setup(c);
    s.dyn.keep_states = c.flag("io.save_states");
    const Ensemble init = build_ensemble(s, s.n_particles);
    const TrajectoryRecord tr = noisy_sgd_run(init, s.dyn, s.schedule, *s.data, *s.est, *s.act);
    RunOutputs out;
    emit_csv(tr, c.out_dir() / "trajectory.csv");
    out.files.push_back(c.out_dir() / "trajectory.csv");
    write_state(c.out_dir() / "final_state.csv", tr.final_theta);
    out.files.push_back(c.out_dir() / "final_state.csv");
    write_states(c, tr, out);
    out.summary.columns = {"initial_risk", "final_risk", "min_risk", "final_max_abs_a", "snapshots"};
    out.summary.rows.push_back(trajectory_summary(tr));
    for (const auto& w : tr.warnings) std::cerr << "warning: " << w << "\n";
    return out;
}

RunOutputs run_coupled(const RunConfig& c) {
    Setup s = build_setup(c);
    const auto kinds = build_kinds(c);
    std::vector<double> eps_grid = c.numbers("study.eps_grid");
    if (eps_grid.empty()) eps_grid.push_back(s.dyn.eps);
    const Ensemble init = build_ensemble(s, s.n_particles);

    RunOutputs out;
    std::vector<std::string> gap_names;
    std::vector<std::vector<double>> sup_gaps;  // per eps
    for (std::size_t e = 0; e < eps_grid.size(); ++e) {
        DynamicsConfig dyn = s.dyn;
        dyn.eps = eps_grid[e];
        dyn.validate();
        const CoupledRecord rec = coupled_run(init, kinds, dyn, s.schedule, *s.data, *s.est, *s.act);
        const auto path = c.out_dir() / ("coupled_eps" + std::to_string(e) + ".csv");
        emit_csv(rec.combined, path);
        out.files.push_back(path);
        std::vector<double> sups;
        gap_names.clear();
        for (const auto& col : rec.combined.columns) {
            if (col.rfind("gap_", 0) != 0) continue;
            gap_names.push_back(col);
            const auto v = rec.combined.column(col);
            sups.push_back(*std::max_element(v.begin(), v.end()));
        }
        sup_gaps.push_back(std::move(sups));
        for (const auto& w : rec.combined.warnings) std::cerr << "warning: " << w << "\n";
    }
    out.summary.columns = {"eps"};
    for (const auto& g : gap_names) out.summary.columns.push_back("sup_" + g);
    for (const auto& g : gap_names) out.summary.columns.push_back("slope_" + g);
    std::vector<double> slopes(gap_names.size(), std::numeric_limits<double>::quiet_NaN());
    if (eps_grid.size() >= 2) {
        for (std::size_t g = 0; g < gap_names.size(); ++g) {
            std::vector<double> y;
            for (const auto& row : sup_gaps) y.push_back(row[g]);
            if (std::all_of(y.begin(), y.end(), [](double v) { return v > 0.0; })) slopes[g] = fit_loglog(eps_grid, y).slope;
        }
    }
    for (std::size_t e = 0; e < eps_grid.size(); ++e) {
        std::vector<double> row{eps_grid[e]};
        row.insert(row.end(), sup_gaps[e].begin(), sup_gaps[e].end());
        row.insert(row.end(), slopes.begin(), slopes.end());
        out.summary.rows.push_back(std::move(row));
    }
    return out;
}

RunOutputs run_gap_scaling(const RunConfig& c) {
    Setup s = build_setup(c);
    GapStudyConfig g;
    g.n_grid = counts(c, "study.N_grid");
    g.seeds.clear();
    for (double v : c.numbers("study.seeds")) g.seeds.push_back(static_cast<std::uint64_t>(v));
    g.n_ref = c.count("study.N_ref");
    g.ref_seed = c.seed_value("study.ref_seed");
    g.ref_h_ode = c.number("study.ref_h_ode");
    g.ref_stratified = c.flag("study.ref_stratified");
    g.dynamics = s.dyn;
    g.init = s.init;
    g.frozen_stream = c.flag("study.frozen_stream");
    const GapStudyResult res = gap_scaling_study(g, *s.data, *s.est, *s.act);

    RunOutputs out;
    for (const auto& run : res.runs) {
        const auto path = c.out_dir() / "runs" /
                          ("N" + std::to_string(run.n) + "_seed" + std::to_string(run.seed) + ".csv");
        emit_csv(run.trajectory, path);
        out.files.push_back(path);
    }
    std::vector<std::vector<double>> ref_rows;
    for (std::size_t k = 0; k < res.reference.times.size(); ++k)
        ref_rows.push_back({res.reference.times[k], res.reference.raw[k], res.reference.corrected[k]});
    write_csv(c.out_dir() / "reference.csv", {"t", "raw", "corrected"}, ref_rows);
    out.files.push_back(c.out_dir() / "reference.csv");
    if (res.non_monotone) std::cerr << "warning: median gap is not monotone in N\n";
    out.summary.columns = {"N", "median_gap", "fitted_slope", "ci_low", "ci_high"};
    for (std::size_t i = 0; i < g.n_grid.size(); ++i)
        out.summary.rows.push_back({static_cast<double>(g.n_grid[i]), res.median_gap[i], res.fit.slope, res.fit.ci_low,
                                    res.fit.ci_high});
    return out;
}

RunOutputs run_gaussians_demo(const RunConfig& c) {
    Setup s = build_setup(c);
    if (s.dyn.mode != CoefficientMode::Fixed)
        throw ConfigError("gaussians-demo runs in fixed-coefficient mode only", "dynamics.mode");
    // stability window k in [T/eps, 10 T/eps]
    const double T = s.dyn.T;
    s.dyn.T = 10.0 * T;
    const Ensemble init = build_ensemble(s, s.n_particles);
    const TrajectoryRecord tr = sgd_run(init, s.dyn, s.schedule, *s.data, *s.est, *s.act);
    RunOutputs out;
    emit_csv(tr, c.out_dir() / "trajectory.csv");
    out.files.push_back(c.out_dir() / "trajectory.csv");
    write_state(c.out_dir() / "final_state.csv", tr.final_theta);
    out.files.push_back(c.out_dir() / "final_state.csv");

    const auto t = tr.column("t");
    const auto risk = tr.column("risk_particles");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] + 1e-9 * s.dyn.eps < T) continue;
        lo = std::min(lo, risk[k]);
        hi = std::max(hi, risk[k]);
    }
    const double best = *std::min_element(risk.begin(), risk.end());
    out.summary.columns = {"initial_risk", "final_risk", "best_risk", "reduction", "plateau", "T", "eps"};
    out.summary.rows.push_back(
        {risk.front(), risk.back(), best, 1.0 - risk.back() / risk.front(), hi - lo, T, s.dyn.eps});
    return out;
}

RunOutputs run_kernel_crossover(const RunConfig& c) {
    const TruncatedReluDot act = build_activation(c);
    CrossoverConfig k;
    k.alpha_grid = c.numbers("study.alpha_grid");
    k.T = c.number("dynamics.T");
    k.h_ode = c.number("dynamics.h_ode") > 0.0 ? c.number("dynamics.h_ode") : c.number("dynamics.eps");
    k.snapshot_every = c.count("io.snapshot_every");
    k.n_points = c.count("study.n_points");
    k.d = c.count("model.d");
    k.n_particles = c.count("dynamics.N");
    k.a0 = c.number("dynamics.init.a0");
    k.seed = c.seed_value("seed");
    const CrossoverResult res = kernel_crossover_experiment(k, act);
    RunOutputs out;
    write_csv(c.out_dir() / "crossover.csv", res.columns, res.rows);
    out.files.push_back(c.out_dir() / "crossover.csv");
    out.summary.columns = {"alpha", "sup_gap", "sup_gap_half", "fitted_slope", "ci_low", "ci_high", "y_l2",
                           "initial_risk"};
    for (std::size_t a = 0; a < k.alpha_grid.size(); ++a)
        out.summary.rows.push_back({k.alpha_grid[a], res.sup_gap[a], res.sup_gap_half[a], res.fit.slope, res.fit.ci_low,
                                    res.fit.ci_high, res.y_l2, res.initial_risk});
    return out;
}

RunOutputs run_fokker_planck(const RunConfig& c) {
    FokkerPlanckCheckConfig f;
    f.gamma = c.number("model.gamma");
    f.delta = c.number("model.delta");
    f.s1 = c.number("model.activation.s1");
    f.s2 = c.number("model.activation.s2");
    f.t1 = c.number("model.activation.t1");
    f.t2 = c.number("model.activation.t2");
    f.n_mc = c.count("estimator.n_mc");
    f.xi = c.number("fokker_planck.xi");
    f.tau = c.number("dynamics.tau");
    f.lambda = c.number("dynamics.lambda");
    f.T = c.number("dynamics.T");
    f.h = c.number("dynamics.eps");
    f.snapshot_every = c.count("io.snapshot_every");
    f.L = c.number("fokker_planck.L");
    f.M = c.count("fokker_planck.M");
    f.init_mean = c.number("fokker_planck.init_mean");
    f.init_sd = c.number("fokker_planck.init_sd");
    f.seed = c.seed_value("seed");

    RunOutputs out;
    out.summary.columns = {"N", "terminal_l1", "l1_ratio", "grid_var", "particle_var", "ou_var", "grid_mass"};
    double prev = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t n : counts(c, "study.particles_grid")) {
        f.n_particles = n;
        const FokkerPlanckReport rep = fokker_planck_vs_langevin(f);
        const auto path = c.out_dir() / ("fp_N" + std::to_string(n) + ".csv");
        write_csv(path, rep.columns, rep.rows);
        out.files.push_back(path);
        // terminal densities on the grid cells
        const Eigen::VectorXd hist = histogram_density(rep.grid, rep.particles);
        std::vector<std::vector<double>> dens;
        for (std::size_t m = 0; m < rep.grid.M; ++m) {
            const auto i = static_cast<Eigen::Index>(m);
            dens.push_back({rep.grid.center(m), rep.grid.rho(i), hist(i)});
        }
        const auto dpath = c.out_dir() / ("density_N" + std::to_string(n) + ".csv");
        write_csv(dpath, {"w", "grid_density", "particle_density"}, dens);
        out.files.push_back(dpath);
        const auto& last = rep.rows.back();
        const double ou = f.lambda > 0.0 ? f.tau / (2.0 * f.lambda) : std::numeric_limits<double>::quiet_NaN();
        out.summary.rows.push_back({static_cast<double>(n), last[1], prev / last[1], last[4], last[6], ou, last[2]});
        prev = last[1];
    }
    return out;
}

RunOutputs run_krr_check(const RunConfig& c) {
    const TruncatedReluDot act = build_activation(c);
    const std::size_t d = c.count("model.d");
    const std::uint64_t seed = c.seed_value("seed");
    const EmpiricalDataset data = make_regression_data(c.count("study.n_points"), d, seed);
    InitSpec spec;
    spec.kind = InitSpec::Kind::Antithetic;
    spec.a0 = c.number("dynamics.init.a0");
    const Ensemble ens0 = init_sample(spec, c.count("dynamics.N"), d, CoefficientMode::General, seed);
    const KernelMatrix H = kernel_matrix(ens0, data.points(), act);
    const KrrSolve solve = krr_solve(H, data.labels());
    const double T = c.number("dynamics.T");
    const double h = c.number("dynamics.h_ode") > 0.0 ? c.number("dynamics.h_ode") : c.number("dynamics.eps");
    const auto steps = static_cast<std::size_t>(std::llround(T / h));
    if (steps < 1) throw ConfigError("dynamics.T / dynamics.h_ode must be >= 1", "dynamics.h_ode");

    // training points, then fresh test points
    std::vector<Eigen::VectorXd> zs;
    for (Eigen::Index j = 0; j < data.points().cols(); ++j) zs.emplace_back(data.points().col(j));
    const std::size_t extra = c.count("study.z_points");
    if (extra > 0) {
        const EmpiricalDataset test = make_regression_data(extra, d, seed + 1);
        for (Eigen::Index j = 0; j < test.points().cols(); ++j) zs.emplace_back(test.points().col(j));
    }
    RunOutputs out;
    std::vector<std::vector<double>> rows, limit_rows;
    double max_err = 0.0;
    for (std::size_t z = 0; z < zs.size(); ++z) {
        const Eigen::VectorXd hz = h_vector(ens0, zs[z], data.points(), act);
        const double integrated = integrate_linearized_prediction(H.matrix(), hz, data.labels(), T, steps);
        const double closed = linearized_prediction(H, hz, data.labels(), T);
        const double err = std::abs(integrated - closed);
        max_err = std::max(max_err, err);
        rows.push_back({static_cast<double>(z), integrated, closed, err});
        limit_rows.push_back({static_cast<double>(z), hz.dot(solve.coeffs)});
    }
    write_csv(c.out_dir() / "krr.csv", {"z_id", "prediction", "krr_value", "abs_err"}, rows);
    out.files.push_back(c.out_dir() / "krr.csv");
    write_csv(c.out_dir() / "krr_limit.csv", {"z_id", "krr_limit"}, limit_rows);
    out.files.push_back(c.out_dir() / "krr_limit.csv");
    double train_res = 0.0;
    for (Eigen::Index j = 0; j < data.points().cols(); ++j)
        train_res = std::max(train_res, std::abs(limit_rows[static_cast<std::size_t>(j)][1] - data.labels()(j)));
    out.summary.columns = {"n_points", "lambda_min", "lambda_max", "jitter_floor", "method", "jitter", "warning",
                           "max_abs_err", "max_train_residual", "T"};
    out.summary.rows.push_back({static_cast<double>(H.size()), H.lambda_min(), H.lambda_max(), H.jitter_floor(),
                                static_cast<double>(static_cast<int>(solve.method)), solve.jitter,
                                solve.warning ? 1.0 : 0.0, max_err, train_res, T});
    if (solve.warning) std::cerr << "warning: kernel matrix is singular; pseudo-inverse used\n";
    return out;
}

}  // namespace

const char* to_string(Source s) {
    switch (s) {
        case Source::Default: return "default";
        case Source::File: return "file";
        case Source::Flag: return "flag";
    }
    return "?";
}

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names = {"run-sgd",        "run-coupled",         "gap-scaling", "gaussians-demo",
                                                   "kernel-crossover", "fokker-planck-check", "krr-check"};
    return names;
}

const Json& RunConfig::at(const std::string& path) const { return lookup(values, path); }

double RunConfig::number(const std::string& path) const {
    const Json& j = at(path);
    if (!j.is_number()) throw ConfigError("expected a number at " + path, path);
    return j.get<double>();
}

std::size_t RunConfig::count(const std::string& path) const {
    const Json& j = at(path);
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0))
        throw ConfigError("expected a non-negative integer at " + path, path);
    return j.get<std::size_t>();
}

std::uint64_t RunConfig::seed_value(const std::string& path) const { return count(path); }

bool RunConfig::flag(const std::string& path) const {
    const Json& j = at(path);
    if (!j.is_boolean()) throw ConfigError("expected a boolean at " + path, path);
    return j.get<bool>();
}

std::string RunConfig::text(const std::string& path) const {
    const Json& j = at(path);
    if (!j.is_string()) throw ConfigError("expected a string at " + path, path);
    return j.get<std::string>();
}

std::vector<double> RunConfig::numbers(const std::string& path) const {
    const Json& j = at(path);
    if (!j.is_array()) throw ConfigError("expected an array at " + path, path);
    std::vector<double> out;
    for (const auto& v : j) out.push_back(v.get<double>());
    return out;
}

std::filesystem::path RunConfig::out_dir() const { return text("io.out_dir"); }

Json default_config(const std::string& experiment) {
    const auto& names = experiment_names();
    if (std::find(names.begin(), names.end(), experiment) == names.end())
        throw ConfigError("unknown experiment " + experiment, "experiment");
    Json base = shared_defaults();
    apply_overlay(base, overlay(experiment));
    base["experiment"] = experiment;
    return base;
}

RunConfig parse_and_validate(const std::string& experiment, const std::filesystem::path& file,
                             const std::vector<std::string>& overrides) {
    RunConfig cfg;
    cfg.experiment = experiment;
    cfg.values = default_config(experiment);
    record_leaves(cfg.values, "", Source::Default, cfg.provenance);
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw IoError("cannot open config file " + file.string());
        std::stringstream ss;
        ss << in.rdbuf();
        const std::string text = ss.str();
        if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
            Json parsed;
            try {
                parsed = Json::parse(text);
            } catch (const std::exception& e) {
                throw ConfigError(std::string("config file is not valid JSON: ") + e.what(), "--config");
            }
            merge_file(cfg.values, parsed, "", cfg.provenance);
        }
    }
    for (const auto& o : overrides) apply_flag(cfg.values, o, cfg.provenance);
    if (cfg.values["experiment"].get<std::string>() != experiment)
        throw ConfigError("config names experiment " + cfg.values["experiment"].get<std::string>() +
                              " but the command line asks for " + experiment,
                          "experiment");
    if (cfg.text("io.out_dir").empty()) throw ConfigError("io.out_dir must be non-empty", "io.out_dir");
    if (cfg.count("io.snapshot_every") < 1) throw ConfigError("io.snapshot_every must be >= 1", "io.snapshot_every");
    validate_experiment(cfg);
    return cfg;
}

std::string resolved_json(const RunConfig& cfg) { return cfg.values.dump(2) + "\n"; }

std::string provenance_json(const RunConfig& cfg) {
    Json j = Json::object();
    for (const auto& [path, src] : cfg.provenance) j[path] = to_string(src);
    return j.dump(2) + "\n";
}

RunOutputs run_experiment(const RunConfig& cfg) {
    const auto dir = cfg.out_dir();
    write_text(dir / "config.json", resolved_json(cfg));
    write_text(dir / "provenance.json", provenance_json(cfg));
    RunOutputs out;
    const std::string& e = cfg.experiment;
    if (e == "run-sgd") out = run_sgd(cfg);
    else if (e == "run-coupled") out = run_coupled(cfg);
    else if (e == "gap-scaling") out = run_gap_scaling(cfg);
    else if (e == "gaussians-demo") out = run_gaussians_demo(cfg);
    else if (e == "kernel-crossover") out = run_kernel_crossover(cfg);
    else if (e == "fokker-planck-check") out = run_fokker_planck(cfg);
    else if (e == "krr-check") out = run_krr_check(cfg);
    else throw ConfigError("unknown experiment " + e, "experiment");
    write_csv(dir / "summary.csv", out.summary.columns, out.summary.rows);
    out.files.insert(out.files.begin(), {dir / "config.json", dir / "provenance.json"});
    out.files.push_back(dir / "summary.csv");
    return out;
}

int exit_code_for_current_exception(std::string& message) {
    try {
        throw;
    } catch (const ConfigError& e) {
        message = e.path().empty() ? std::string(e.what()) : std::string(e.what()) + " [" + e.path() + "]";
        return kExitConfig;
    } catch (const UnsupportedError& e) {
        message = e.what();
        return kExitConfig;
    } catch (const IoError& e) {
        message = e.what();
        return kExitIo;
    } catch (const DivergenceError& e) {
        message = e.what();
        return kExitDivergence;
    } catch (const std::exception& e) {
        message = e.what();
        return kExitFailure;
    } catch (...) {
        message = "unknown failure";
        return kExitFailure;
    }
}

}  // namespace meanfield
