#include "meanfield/dynamics.hpp"

#include "meanfield/errors.hpp"
#include "meanfield/numeric.hpp"
#include "meanfield/potentials.hpp"
#include "meanfield/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace meanfield {

namespace {

constexpr double kDivergenceBound = 1e12;

void guard(const Eigen::MatrixXd& theta, std::size_t step) {
    for (Eigen::Index j = 0; j < theta.cols(); ++j)
        for (Eigen::Index r = 0; r < theta.rows(); ++r)
            if (!(std::abs(theta(r, j)) <= kDivergenceBound))
                throw DivergenceError("parameter left the finite region", static_cast<std::int64_t>(step));
}

/// Multiplies the trainable rows by `factor`; the a-row is frozen in fixed mode.
void scale_trainable(Eigen::MatrixXd& theta, double factor, CoefficientMode mode) {
    if (mode == CoefficientMode::General) {
        theta *= factor;
    } else {
        theta.bottomRows(theta.rows() - 1) *= factor;
    }
}

Eigen::Index first_trainable_row(CoefficientMode mode) { return mode == CoefficientMode::General ? 0 : 1; }

class Recorder {
public:
    Recorder(const DynamicsConfig& cfg, const Ensemble& init, const PopulationEstimator& est,
             const ActivationModel& model)
        : cfg_(cfg), init_(init), est_(est), model_(model) {
        rec_.columns = {"step", "t", "risk_particles", "risk_population_mc", "max_abs_a", "mean_abs_a"};
    }

    bool due(std::size_t k) const { return k % cfg_.snapshot_every == 0; }

    void snap(std::size_t k, const Eigen::MatrixXd& theta) {
        const Ensemble ens = init_.with_theta(theta);
        const double risk = risk_particles(ens, est_, model_);
        double pop = std::numeric_limits<double>::quiet_NaN();
        if (cfg_.record_population_risk && est_.strategy() == EstimatorStrategy::MonteCarlo)
            pop = risk_population_mc(ens, est_, model_);
        const Eigen::VectorXd abs_a = theta.row(0).transpose().cwiseAbs();
        const double mean_abs =
            pairwise_sum({abs_a.data(), static_cast<std::size_t>(abs_a.size())}) / static_cast<double>(abs_a.size());
        rec_.rows.push_back({static_cast<double>(k), static_cast<double>(k) * cfg_.eps, risk, pop, abs_a.maxCoeff(),
                             mean_abs});
        if (cfg_.keep_states) rec_.states.push_back(theta);
    }

    void warn(std::string msg) { rec_.warnings.push_back(std::move(msg)); }

    TrajectoryRecord finish(Eigen::MatrixXd theta) {
        rec_.final_theta = std::move(theta);
        return std::move(rec_);
    }

private:
    const DynamicsConfig& cfg_;
    const Ensemble& init_;
    const PopulationEstimator& est_;
    const ActivationModel& model_;
    TrajectoryRecord rec_;
};

void check_setup(const Ensemble& init, const DynamicsConfig& cfg, std::size_t data_dim) {
    cfg.validate();
    if (init.mode() != cfg.mode) throw ConfigError("initial ensemble mode differs from dynamics.mode", "dynamics.mode");
    check_dims(init.weight_dim(), data_dim);
}

void add_window_noise(Eigen::MatrixXd& theta, double scale, const DynamicsConfig& cfg, std::size_t window) {
    const auto dim = static_cast<std::size_t>(theta.rows());
    const std::size_t m = cfg.substeps();
    parallel_for(static_cast<std::size_t>(theta.cols()), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            for (auto j = static_cast<std::size_t>(first_trainable_row(cfg.mode)); j < dim; ++j)
                theta(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) +=
                    scale * window_normal(cfg.seed, i, window, j, dim, m);
    });
}

TrajectoryRecord run_sgd(const Ensemble& init, const DynamicsConfig& cfg, const StepSchedule& schedule,
                         const DataModel& data, const PopulationEstimator& est, const ActivationModel& model) {
    check_setup(init, cfg, data.dim());
    schedule.validate();
    const auto& act = require_dot_product(model);
    const std::size_t K = cfg.steps();
    const auto d = static_cast<Eigen::Index>(init.weight_dim());
    const auto np = static_cast<Eigen::Index>(init.size());
    const double dim = static_cast<double>(init.dim());
    const double alpha = init.scale_alpha();
    const bool general = cfg.mode == CoefficientMode::General;

    Eigen::MatrixXd theta = init.theta();
    Recorder rec(cfg, init, est, model);
    rec.snap(0, theta);

    CounterRng stream(cfg.seed, Purpose::Data, 0);
    Eigen::VectorXd x(d);
    Eigen::VectorXd proj(np);
    std::vector<double> terms(static_cast<std::size_t>(np));
    Eigen::VectorXd drift_a(np);
    Eigen::VectorXd drift_w(np);

    for (std::size_t k = 0; k < K; ++k) {
        const double s = cfg.eps * schedule(static_cast<double>(k) * cfg.eps);
        stream.seek(static_cast<std::uint64_t>(k) * data.draws_per_sample());
        const double y = data.sample(stream, x);

        proj.noalias() = theta.bottomRows(d).transpose() * x;
        for (Eigen::Index i = 0; i < np; ++i) terms[static_cast<std::size_t>(i)] = (alpha * theta(0, i)) * act.value(proj(i));
        const double fhat = order_independent_sum(terms) / static_cast<double>(np);
        const double coef = 2.0 * s * (y - fhat);
        for (Eigen::Index i = 0; i < np; ++i) {
            drift_a(i) = general ? coef * act.value(proj(i)) : 0.0;
            drift_w(i) = coef * theta(0, i) * act.slope(proj(i));
        }
        if (cfg.lambda > 0.0) scale_trainable(theta, 1.0 - 2.0 * cfg.lambda * s, cfg.mode);
        for (Eigen::Index i = 0; i < np; ++i) {
            if (general) theta(0, i) += drift_a(i);
            if (drift_w(i) != 0.0) theta.col(i).tail(d) += drift_w(i) * x;
        }
        if (cfg.tau > 0.0) add_window_noise(theta, std::sqrt(4.0 * s * cfg.tau / dim), cfg, k);
        guard(theta, k + 1);
        if (rec.due(k + 1)) rec.snap(k + 1, theta);
    }
    return rec.finish(std::move(theta));
}

Eigen::MatrixXd flow_field(const Eigen::MatrixXd& theta, double t, const DynamicsConfig& cfg,
                           const StepSchedule& schedule, double alpha, const PopulationEstimator& est,
                           const ActivationModel& model) {
    Eigen::MatrixXd f = mean_field_force(theta, cfg.mode, alpha, est, model).force;
    if (cfg.lambda > 0.0) {
        if (cfg.mode == CoefficientMode::General) {
            f -= cfg.lambda * theta;
        } else {
            f.bottomRows(f.rows() - 1) -= cfg.lambda * theta.bottomRows(theta.rows() - 1);
        }
    }
    return (2.0 * schedule(t)) * f;
}

Eigen::MatrixXd rk4_step(const Eigen::MatrixXd& theta, double t, double h, const DynamicsConfig& cfg,
                         const StepSchedule& schedule, double alpha, const PopulationEstimator& est,
                         const ActivationModel& model) {
    const Eigen::MatrixXd k1 = flow_field(theta, t, cfg, schedule, alpha, est, model);
    const Eigen::MatrixXd k2 = flow_field(theta + (0.5 * h) * k1, t + 0.5 * h, cfg, schedule, alpha, est, model);
    const Eigen::MatrixXd k3 = flow_field(theta + (0.5 * h) * k2, t + 0.5 * h, cfg, schedule, alpha, est, model);
    const Eigen::MatrixXd k4 = flow_field(theta + h * k3, t + h, cfg, schedule, alpha, est, model);
    return theta + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

double StepSchedule::operator()(double t) const {
    return family == Family::Constant ? c : c * std::exp(-rate * t);
}

void StepSchedule::validate() const {
    if (!(c > 0.0) || !std::isfinite(c)) throw ConfigError("step schedule constant must be > 0", "dynamics.schedule.c");
    if (family == Family::ExpDecay && (!(rate >= 0.0) || !std::isfinite(rate)))
        throw ConfigError("step schedule rate must be >= 0", "dynamics.schedule.rate");
}

const char* to_string(DynamicsKind kind) {
    switch (kind) {
        case DynamicsKind::Sgd: return "sgd";
        case DynamicsKind::NoisySgd: return "noisy-sgd";
        case DynamicsKind::Gd: return "gd";
        case DynamicsKind::NoisyGd: return "noisy-gd";
        case DynamicsKind::Pd: return "pd";
        case DynamicsKind::LangevinPd: return "langevin-pd";
    }
    return "?";
}

DynamicsKind parse_dynamics_kind(const std::string& name) {
    for (auto k : {DynamicsKind::Sgd, DynamicsKind::NoisySgd, DynamicsKind::Gd, DynamicsKind::NoisyGd,
                   DynamicsKind::Pd, DynamicsKind::LangevinPd})
        if (name == to_string(k)) return k;
    throw ConfigError("unknown dynamics '" + name + "'", "dynamics.kinds");
}

InitSpec::Kind parse_init_kind(const std::string& name) {
    if (name == "point-mass") return InitSpec::Kind::PointMass;
    if (name == "uniform") return InitSpec::Kind::Uniform;
    if (name == "antithetic") return InitSpec::Kind::Antithetic;
    if (name == "radial-sphere") return InitSpec::Kind::RadialSphere;
    throw ConfigError("unknown init kind '" + name + "'", "dynamics.init.kind");
}

std::size_t DynamicsConfig::steps() const {
    return static_cast<std::size_t>(std::floor(T / eps * (1.0 + 1e-12)));
}

std::size_t DynamicsConfig::substeps() const {
    const double h = step_ode();
    const double ratio = eps / h;
    const auto m = static_cast<std::size_t>(std::llround(ratio));
    if (m < 1 || std::abs(static_cast<double>(m) * h - eps) > 1e-9 * eps)
        throw ConfigError("h_ode must divide eps", "dynamics.h_ode");
    return m;
}

void DynamicsConfig::validate() const {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("eps must be > 0", "dynamics.eps");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0", "dynamics.lambda");
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be >= 0", "dynamics.tau");
    if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("T must be > 0", "dynamics.T");
    if (!(h_ode >= 0.0) || h_ode > eps) throw ConfigError("h_ode must lie in (0, eps]", "dynamics.h_ode");
    if (snapshot_every < 1) throw ConfigError("snapshot_every must be >= 1", "io.snapshot_every");
    if (steps() < 1) throw ConfigError("T / eps must be >= 1", "dynamics.T");
    (void)substeps();
}

Ensemble init_sample(const InitSpec& spec, std::size_t n_particles, std::size_t weight_dim, CoefficientMode mode,
                     std::uint64_t seed, double scale_alpha) {
    if (n_particles < 1) throw ConfigError("N must be >= 1", "dynamics.N");
    if (weight_dim < 1) throw ConfigError("weight dimension must be >= 1", "model.data.d");
    const auto d = static_cast<Eigen::Index>(weight_dim);
    const auto np = static_cast<Eigen::Index>(n_particles);
    const double var = spec.w_var > 0.0 ? spec.w_var : 1.0 / static_cast<double>(weight_dim + 1);
    const double sd = std::sqrt(var);
    if (mode == CoefficientMode::Fixed) {
        if (spec.kind == InitSpec::Kind::Uniform || spec.kind == InitSpec::Kind::Antithetic)
            throw ConfigError("fixed-coefficient mode needs a point-mass or radial-sphere init", "dynamics.init.kind");
        if (spec.a0 != 1.0) throw ConfigError("fixed-coefficient mode needs a0 = 1", "dynamics.init.a0");
    }
    Eigen::MatrixXd theta(d + 1, np);
    switch (spec.kind) {
        case InitSpec::Kind::PointMass:
        case InitSpec::Kind::Uniform:
            for (Eigen::Index i = 0; i < np; ++i) {
                CounterRng rng(seed, Purpose::Init, static_cast<std::uint64_t>(i));
                theta(0, i) = spec.kind == InitSpec::Kind::Uniform ? rng.uniform(-spec.a0, spec.a0) : spec.a0;
                for (Eigen::Index j = 0; j < d; ++j) theta(1 + j, i) = sd * rng.normal();
            }
            break;
        case InitSpec::Kind::Antithetic:
            if (n_particles % 2 != 0) throw ConfigError("antithetic initialization needs even N", "dynamics.N");
            for (Eigen::Index p = 0; p < np / 2; ++p) {
                CounterRng rng(seed, Purpose::Init, static_cast<std::uint64_t>(p));
                for (Eigen::Index j = 0; j < d; ++j) theta(1 + j, 2 * p) = sd * rng.normal();
                theta.col(2 * p + 1).tail(d) = theta.col(2 * p).tail(d);
                theta(0, 2 * p) = spec.a0;
                theta(0, 2 * p + 1) = -spec.a0;
            }
            break;
        case InitSpec::Kind::RadialSphere:
            if (!(spec.radius_min >= 0.0) || !(spec.radius_max >= spec.radius_min))
                throw ConfigError("radial init needs 0 <= radius_min <= radius_max", "dynamics.init.radius_min");
            for (Eigen::Index i = 0; i < np; ++i) {
                CounterRng rng(seed, Purpose::Init, static_cast<std::uint64_t>(i));
                const double r = rng.uniform(spec.radius_min, spec.radius_max);
                Eigen::VectorXd g(d);
                for (Eigen::Index j = 0; j < d; ++j) g(j) = rng.normal();
                theta(0, i) = spec.a0;
                theta.col(i).tail(d) = (r / g.norm()) * g;
            }
            break;
    }
    return Ensemble(std::move(theta), mode, scale_alpha);
}

std::size_t TrajectoryRecord::column_index(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw std::out_of_range("no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> TrajectoryRecord::column(const std::string& name) const {
    const std::size_t c = column_index(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
}

double fine_normal(std::uint64_t seed, std::size_t particle, std::size_t fine_step, std::size_t coordinate,
                   std::size_t dim) {
    const CounterRng rng(seed, Purpose::Noise, particle);
    return rng.normal_at(static_cast<std::uint64_t>(fine_step) * dim + coordinate);
}

double window_normal(std::uint64_t seed, std::size_t particle, std::size_t window, std::size_t coordinate,
                     std::size_t dim, std::size_t substeps) {
    const CounterRng rng(seed, Purpose::Noise, particle);
    if (substeps == 1) return rng.normal_at(static_cast<std::uint64_t>(window) * dim + coordinate);
    double s = 0.0;
    for (std::size_t l = 0; l < substeps; ++l)
        s += rng.normal_at(static_cast<std::uint64_t>(window * substeps + l) * dim + coordinate);
    return s / std::sqrt(static_cast<double>(substeps));
}

TrajectoryRecord sgd_run(const Ensemble& init, const DynamicsConfig& cfg, const StepSchedule& schedule,
                         const DataModel& data, const PopulationEstimator& est, const ActivationModel& model) {
    DynamicsConfig plain = cfg;
    plain.lambda = 0.0;
    plain.tau = 0.0;
    return run_sgd(init, plain, schedule, data, est, model);
}

TrajectoryRecord noisy_sgd_run(const Ensemble& init, const DynamicsConfig& cfg, const StepSchedule& schedule,
                               const DataModel& data, const PopulationEstimator& est, const ActivationModel& model) {
    return run_sgd(init, cfg, schedule, data, est, model);
}

TrajectoryRecord gd_run(const Ensemble& init, const DynamicsConfig& cfg, const StepSchedule& schedule,
                        const PopulationEstimator& est, const ActivationModel& model) {
    check_setup(init, cfg, est.dim());
    schedule.validate();
    const std::size_t K = cfg.steps();
    const double dim = static_cast<double>(init.dim());
    const double alpha = init.scale_alpha();
    Eigen::MatrixXd theta = init.theta();
    Recorder rec(cfg, init, est, model);
    rec.snap(0, theta);
    for (std::size_t k = 0; k < K; ++k) {
        const double s = cfg.eps * schedule(static_cast<double>(k) * cfg.eps);
        const Eigen::MatrixXd force = mean_field_force(theta, cfg.mode, alpha, est, model).force;
        if (cfg.lambda > 0.0) scale_trainable(theta, 1.0 - 2.0 * cfg.lambda * s, cfg.mode);
        theta += (2.0 * s) * force;
        if (cfg.tau > 0.0) add_window_noise(theta, std::sqrt(4.0 * s * cfg.tau / dim), cfg, k);
        guard(theta, k + 1);
        if (rec.due(k + 1)) rec.snap(k + 1, theta);
    }
    return rec.finish(std::move(theta));
}

TrajectoryRecord pd_integrate(const Ensemble& init, const DynamicsConfig& cfg, const StepSchedule& schedule,
                              const PopulationEstimator& est, const ActivationModel& model) {
    check_setup(init, cfg, est.dim());
    schedule.validate();
    const std::size_t K = cfg.steps();
    const std::size_t m = cfg.substeps();
    const double h = cfg.step_ode();
    const auto dim = static_cast<std::size_t>(init.dim());
    const double alpha = init.scale_alpha();
    const bool langevin = cfg.tau > 0.0;
    Eigen::MatrixXd theta = init.theta();
    Recorder rec(cfg, init, est, model);
    rec.snap(0, theta);

    for (std::size_t k = 0; k < K; ++k) {
        if (!langevin && cfg.ode_tol > 0.0 && rec.due(k)) {
            const double t = static_cast<double>(k * m) * h;
            const Eigen::MatrixXd full = rk4_step(theta, t, h, cfg, schedule, alpha, est, model);
            const Eigen::MatrixXd half = rk4_step(rk4_step(theta, t, 0.5 * h, cfg, schedule, alpha, est, model),
                                                  t + 0.5 * h, 0.5 * h, cfg, schedule, alpha, est, model);
            const double err = (full - half).cwiseAbs().maxCoeff() / 15.0;
            if (err > cfg.ode_tol) {
                std::ostringstream msg;
                msg.precision(17);
                msg << "t=" << t << ": step-halving error estimate " << err << " exceeds ode_tol " << cfg.ode_tol;
                rec.warn(msg.str());
            }
        }
        for (std::size_t l = 0; l < m; ++l) {
            const std::size_t fine = k * m + l;
            const double t = static_cast<double>(fine) * h;
            if (!langevin) {
                theta = rk4_step(theta, t, h, cfg, schedule, alpha, est, model);
            } else {
                const Eigen::MatrixXd drift = flow_field(theta, t, cfg, schedule, alpha, est, model);
                theta += h * drift;
                const double scale = std::sqrt(4.0 * schedule(t) * cfg.tau * h / static_cast<double>(dim));
                parallel_for(static_cast<std::size_t>(theta.cols()), [&](std::size_t b, std::size_t e) {
                    for (std::size_t i = b; i < e; ++i)
                        for (auto j = static_cast<std::size_t>(first_trainable_row(cfg.mode)); j < dim; ++j)
                            theta(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) +=
                                scale * fine_normal(cfg.seed, i, fine, j, dim);
                });
            }
            guard(theta, k + 1);
        }
        if (rec.due(k + 1)) rec.snap(k + 1, theta);
    }
    return rec.finish(std::move(theta));
}

TrajectoryRecord run_dynamics(DynamicsKind kind, const Ensemble& init, const DynamicsConfig& cfg,
                              const StepSchedule& schedule, const DataModel& data, const PopulationEstimator& est,
                              const ActivationModel& model) {
    DynamicsConfig plain = cfg;
    plain.lambda = 0.0;
    plain.tau = 0.0;
    switch (kind) {
        case DynamicsKind::Sgd: return sgd_run(init, plain, schedule, data, est, model);
        case DynamicsKind::NoisySgd: return noisy_sgd_run(init, cfg, schedule, data, est, model);
        case DynamicsKind::Gd: return gd_run(init, plain, schedule, est, model);
        case DynamicsKind::NoisyGd: return gd_run(init, cfg, schedule, est, model);
        case DynamicsKind::Pd: return pd_integrate(init, plain, schedule, est, model);
        case DynamicsKind::LangevinPd: return pd_integrate(init, cfg, schedule, est, model);
    }
    throw ConfigError("unknown dynamics");
}

double max_particle_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("particle gap needs equal shapes");
    return (a - b).colwise().norm().maxCoeff();
}

CoupledRecord coupled_run(const Ensemble& init, const std::vector<DynamicsKind>& kinds, const DynamicsConfig& cfg,
                          const StepSchedule& schedule, const DataModel& data, const PopulationEstimator& est,
                          const ActivationModel& model) {
    if (kinds.empty()) throw ConfigError("coupled run needs at least one dynamics", "dynamics.kinds");
    for (std::size_t i = 0; i < kinds.size(); ++i)
        for (std::size_t j = i + 1; j < kinds.size(); ++j)
            if (kinds[i] == kinds[j]) throw ConfigError("dynamics listed twice", "dynamics.kinds");
    if (init.mode() != cfg.mode) throw ConfigError("initial ensemble mode differs from dynamics.mode", "dynamics.mode");

    DynamicsConfig keep = cfg;
    keep.keep_states = true;
    CoupledRecord out;
    out.kinds = kinds;
    for (auto kind : kinds) out.runs.push_back(run_dynamics(kind, init, keep, schedule, data, est, model));

    auto& comb = out.combined;
    comb.columns = {"step", "t"};
    for (auto kind : kinds) comb.columns.push_back(std::string("risk_") + to_string(kind));
    for (std::size_t i = 0; i < kinds.size(); ++i)
        for (std::size_t j = i + 1; j < kinds.size(); ++j) {
            const std::string tag = std::string(to_string(kinds[i])) + "_" + to_string(kinds[j]);
            comb.columns.push_back("gap_" + tag);
            comb.columns.push_back("risk_gap_" + tag);
        }
    const std::size_t rc = out.runs.front().column_index("risk_particles");
    for (std::size_t r = 0; r < out.runs.front().rows.size(); ++r) {
        std::vector<double> row = {out.runs.front().rows[r][0], out.runs.front().rows[r][1]};
        for (const auto& run : out.runs) row.push_back(run.rows[r][rc]);
        for (std::size_t i = 0; i < kinds.size(); ++i)
            for (std::size_t j = i + 1; j < kinds.size(); ++j) {
                row.push_back(max_particle_gap(out.runs[i].states[r], out.runs[j].states[r]));
                row.push_back(std::abs(out.runs[i].rows[r][rc] - out.runs[j].rows[r][rc]));
            }
        comb.rows.push_back(std::move(row));
    }
    for (const auto& run : out.runs)
        for (const auto& w : run.warnings) comb.warnings.push_back(w);
    if (!cfg.keep_states)
        for (auto& run : out.runs) run.states.clear();
    return out;
}

}  // namespace meanfield
