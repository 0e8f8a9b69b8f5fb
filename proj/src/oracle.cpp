#include "meanfield/oracle.hpp"

#include "meanfield/errors.hpp"
#include "meanfield/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace meanfield {

// ---- reference flow ----

double corrected_risk(const RiskTerms& terms) {
    const double n = static_cast<double>(terms.n_particles);
    if (terms.n_particles < 2) throw ConfigError("reference correction needs N_ref >= 2", "study.N_ref");
    const double mean_diag = terms.sum_U_diag / n;
    const double mean_off = (terms.sum_U - terms.sum_U_diag) / (n * (n - 1.0));
    return terms.risk() - terms.alpha * terms.alpha / n * (mean_diag - mean_off);
}

ReferenceFlow build_reference_flow(const Ensemble& init, const DynamicsConfig& cfg, const StepSchedule& schedule,
                                   const PopulationEstimator& est, const ActivationModel& model) {
    ReferenceFlow ref;
    ref.cfg = cfg;
    ref.cfg.keep_states = true;
    ref.cfg.record_population_risk = false;
    ref.n_ref = init.size();
    ref.trajectory = pd_integrate(init, ref.cfg, schedule, est, model);
    ref.times = ref.trajectory.column("t");
    for (const auto& state : ref.trajectory.states) {
        const RiskTerms terms = risk_terms(init.with_theta(state), est, model);
        ref.terms.push_back(terms);
        ref.raw.push_back(terms.risk());
        ref.corrected.push_back(corrected_risk(terms));
    }
    if (!cfg.keep_states) ref.trajectory.states.clear();
    return ref;
}

ReferenceRisk reference_risk(const ReferenceFlow& ref, double t) {
    for (std::size_t i = 0; i < ref.times.size(); ++i)
        if (std::abs(ref.times[i] - t) <= 1e-12 * std::max(1.0, std::abs(t))) return {ref.raw[i], ref.corrected[i]};
    throw UnsupportedError("reference flow has no snapshot at t = " + std::to_string(t) + "; interpolation refused");
}

// ---- grid density ----

double GridDensity1D::mass() const { return rho.sum() * dw(); }

double GridDensity1D::mean() const {
    double s = 0.0;
    for (std::size_t m = 0; m < M; ++m) s += center(m) * rho(static_cast<Eigen::Index>(m));
    return s * dw() / mass();
}

double GridDensity1D::variance() const {
    // cell averages treated as piecewise-constant densities (adds dw^2/12 per cell)
    const double mu = mean();
    double s = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double c = center(m) - mu;
        s += (c * c + dw() * dw() / 12.0) * rho(static_cast<Eigen::Index>(m));
    }
    return s * dw() / mass();
}

double GridDensity1D::boundary_mass() const { return (rho(0) + rho(static_cast<Eigen::Index>(M) - 1)) * dw(); }

GridDensity1D GridDensity1D::gaussian(double L, std::size_t M, double mu, double sd) {
    if (!(L > 0.0) || M < 3) throw ConfigError("grid needs L > 0 and M >= 3", "fokker_planck.M");
    if (!(sd > 0.0)) throw ConfigError("initial width must be > 0", "fokker_planck.init_sd");
    GridDensity1D g;
    g.L = L;
    g.M = M;
    g.rho.resize(static_cast<Eigen::Index>(M));
    const double h = g.dw();
    for (std::size_t m = 0; m < M; ++m) {
        const double lo = (-L + static_cast<double>(m) * h - mu) / (sd * std::sqrt(2.0));
        const double hi = (-L + static_cast<double>(m + 1) * h - mu) / (sd * std::sqrt(2.0));
        g.rho(static_cast<Eigen::Index>(m)) = 0.5 * (std::erf(hi) - std::erf(lo)) / h;
    }
    g.rho /= g.mass();
    return g;
}

GridDensity1D GridDensity1D::point(double L, std::size_t M, double w) {
    if (!(L > 0.0) || M < 3) throw ConfigError("grid needs L > 0 and M >= 3", "fokker_planck.M");
    GridDensity1D g;
    g.L = L;
    g.M = M;
    g.rho = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(M));
    const auto m = static_cast<Eigen::Index>(std::clamp((w + L) / g.dw(), 0.0, static_cast<double>(M) - 1.0));
    g.rho(m) = 1.0 / g.dw();
    return g;
}

double cfl_limit(const GridDensity1D& rho, const Eigen::VectorXd& psi_prime, const FokkerPlanckParams& p) {
    const double h = rho.dw();
    double limit = std::numeric_limits<double>::infinity();
    if (p.tau > 0.0) limit = std::min(limit, h * h * p.dim / (8.0 * p.xi * p.tau));
    const double vmax = psi_prime.cwiseAbs().maxCoeff();
    if (vmax > 0.0) limit = std::min(limit, h / (4.0 * p.xi * vmax));
    return limit;
}

GridDensity1D fokker_planck_1d_step(const GridDensity1D& rho, const Eigen::VectorXd& psi_prime, double dt,
                                    const FokkerPlanckParams& p) {
    if (psi_prime.size() != rho.rho.size()) throw ConfigError("drift table does not match the grid");
    if (!(dt > 0.0)) throw ConfigError("dt must be > 0", "fokker_planck.dt");
    const double limit = cfl_limit(rho, psi_prime, p);
    if (dt > limit) throw CflError("time step violates the CFL bound; use dt <= " + std::to_string(limit), limit);

    const auto M = rho.rho.size();
    const double h = rho.dw();
    const double kappa = 2.0 * p.xi * p.tau / p.dim;
    Eigen::VectorXd flux(M + 1);  // flux through interface m - 1/2
    flux(0) = 0.0;
    flux(M) = 0.0;
    for (Eigen::Index m = 0; m + 1 < M; ++m) {
        const double b = -p.xi * (psi_prime(m) + psi_prime(m + 1));  // mean of -2 xi psi' at the two cells
        const double adv = b > 0.0 ? b * rho.rho(m) : b * rho.rho(m + 1);
        const double diff = -kappa * (rho.rho(m + 1) - rho.rho(m)) / h;
        flux(m + 1) = adv + diff;
    }
    GridDensity1D out = rho;
    for (Eigen::Index m = 0; m < M; ++m) out.rho(m) = rho.rho(m) - dt / h * (flux(m + 1) - flux(m));
    out.t = rho.t + dt;
    if ((out.rho.array() < 0.0).any()) throw std::runtime_error("grid density became negative");
    return out;
}

GridDrift::GridDrift(const GridDensity1D& grid, const PopulationEstimator& est, const ActivationModel& model,
                     double lambda)
    : dw_(grid.dw()) {
    if (est.dim() != 1) throw UnsupportedError("grid drift needs one-dimensional data");
    if (est.strategy() != EstimatorStrategy::MonteCarlo) throw UnsupportedError("grid drift needs a Monte Carlo set");
    const auto& act = require_dot_product(model);
    const auto M = static_cast<Eigen::Index>(grid.M);
    const Eigen::RowVectorXd x = est.points().row(0);
    const Eigen::VectorXd& y = est.labels();
    const Eigen::Index n = x.size();
    Eigen::MatrixXd sig(M, n), dsig(M, n);
    for (Eigen::Index m = 0; m < M; ++m) {
        const double c = grid.center(static_cast<std::size_t>(m));
        for (Eigen::Index k = 0; k < n; ++k) {
            sig(m, k) = act.value(c * x(k));
            dsig(m, k) = act.slope(c * x(k)) * x(k);
        }
    }
    dv_ = -(dsig * y) / static_cast<double>(n);
    for (Eigen::Index m = 0; m < M; ++m) dv_(m) += lambda * grid.center(static_cast<std::size_t>(m));
    du_ = dsig * sig.transpose() / static_cast<double>(n);
}

Eigen::VectorXd GridDrift::psi_prime(const GridDensity1D& rho) const { return dv_ + du_ * (rho.rho * dw_); }

GridDensity1D fokker_planck_evolve(GridDensity1D rho, double t_end, const GridDrift& drift,
                                   const FokkerPlanckParams& p) {
    while (rho.t < t_end) {
        const Eigen::VectorXd psi = drift.psi_prime(rho);
        double dt = 0.5 * cfl_limit(rho, psi, p);
        const double remaining = t_end - rho.t;
        if (!(dt < remaining)) dt = remaining;
        if (remaining <= 1e-14 * std::max(1.0, t_end)) break;
        rho = fokker_planck_1d_step(rho, psi, dt, p);
    }
    rho.t = t_end;
    return rho;
}

Eigen::VectorXd histogram_density(const GridDensity1D& grid, const Eigen::VectorXd& w) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.M));
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double pos = (w(i) + grid.L) / grid.dw();
        if (pos < 0.0 || pos >= static_cast<double>(grid.M)) continue;
        h(static_cast<Eigen::Index>(pos)) += 1.0;
    }
    return h / (static_cast<double>(w.size()) * grid.dw());
}

Eigen::VectorXd sample_grid_density(const GridDensity1D& grid, std::size_t n, std::uint64_t seed) {
    std::vector<double> cdf(grid.M);
    double acc = 0.0;
    for (std::size_t m = 0; m < grid.M; ++m) {
        acc += grid.rho(static_cast<Eigen::Index>(m)) * grid.dw();
        cdf[m] = acc;
    }
    Eigen::VectorXd w(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        CounterRng rng(seed, Purpose::Init, i);
        const double u = rng.uniform() * acc;
        const auto m = static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        const std::size_t cell = std::min(m, grid.M - 1);
        w(static_cast<Eigen::Index>(i)) = -grid.L + (static_cast<double>(cell) + rng.uniform()) * grid.dw();
    }
    return w;
}

FokkerPlanckReport fokker_planck_vs_langevin(const FokkerPlanckCheckConfig& cfg) {
    const AnisotropicGaussians data(1, cfg.gamma, cfg.delta);
    const auto est = PopulationEstimator::monte_carlo(data, cfg.n_mc, cfg.seed);
    const TruncatedReluDot act(cfg.s1, cfg.s2, cfg.t1, cfg.t2);

    GridDensity1D grid = GridDensity1D::gaussian(cfg.L, cfg.M, cfg.init_mean, cfg.init_sd);
    const Eigen::VectorXd w0 = sample_grid_density(grid, cfg.n_particles, cfg.seed);
    Eigen::MatrixXd theta(2, w0.size());
    theta.row(0).setOnes();
    theta.row(1) = w0.transpose();
    const Ensemble init(theta, CoefficientMode::Fixed);

    DynamicsConfig dyn;
    dyn.eps = cfg.h;
    dyn.h_ode = cfg.h;
    dyn.T = cfg.T;
    dyn.tau = cfg.tau;
    dyn.lambda = cfg.lambda;
    dyn.mode = CoefficientMode::Fixed;
    dyn.seed = cfg.seed;
    dyn.snapshot_every = cfg.snapshot_every;
    dyn.keep_states = true;
    dyn.record_population_risk = false;
    const TrajectoryRecord traj = pd_integrate(init, dyn, StepSchedule::constant(cfg.xi), est, act);

    const FokkerPlanckParams params{cfg.xi, cfg.tau, cfg.lambda, 2.0};
    const GridDrift drift(grid, est, act, cfg.lambda);

    FokkerPlanckReport rep;
    rep.columns = {"t", "l1", "grid_mass", "grid_mean", "grid_var", "particle_mean", "particle_var", "boundary_mass"};
    const auto times = traj.column("t");
    for (std::size_t s = 0; s < times.size(); ++s) {
        grid = fokker_planck_evolve(std::move(grid), times[s], drift, params);
        const Eigen::VectorXd w = traj.states[s].row(1).transpose();
        const Eigen::VectorXd hist = histogram_density(grid, w);
        const double l1 = (grid.rho - hist).cwiseAbs().sum() * grid.dw();
        const double pm = w.mean();
        const double pv = (w.array() - pm).square().sum() / static_cast<double>(w.size());
        rep.rows.push_back({times[s], l1, grid.mass(), grid.mean(), grid.variance(), pm, pv, grid.boundary_mass()});
    }
    rep.grid = grid;
    rep.particles = traj.states.back().row(1).transpose();
    return rep;
}

// ---- Wasserstein-2 ----

std::vector<std::size_t> solve_assignment(const Eigen::MatrixXd& cost) {
    // shortest augmenting path with potentials, O(n^3)
    const auto n = static_cast<std::size_t>(cost.rows());
    if (cost.cols() != cost.rows()) throw ConfigError("assignment needs a square cost matrix");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> assignment(n);
    for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
    return assignment;
}

double w2_estimate(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.cols() != b.cols()) throw UnsupportedError("W2 estimate needs equal particle counts");
    if (a.rows() != b.rows()) throw ConfigError("W2 estimate needs equal dimensions");
    const Eigen::Index n = a.cols();
    std::vector<Eigen::Index> keep;
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double c = a(r, 0);
        if ((a.row(r).array() == c).all() && (b.row(r).array() == c).all()) continue;
        keep.push_back(r);
    }
    if (keep.empty()) return 0.0;
    if (keep.size() == 1) {
        std::vector<double> x(static_cast<std::size_t>(n));
        std::vector<double> y(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            x[static_cast<std::size_t>(i)] = a(keep[0], i);
            y[static_cast<std::size_t>(i)] = b(keep[0], i);
        }
        std::sort(x.begin(), x.end());
        std::sort(y.begin(), y.end());
        std::vector<double> sq(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - y[i]) * (x[i] - y[i]);
        return std::sqrt(pairwise_sum(sq) / static_cast<double>(n));
    }
    if (n > 512) throw UnsupportedError("multi-dimensional W2 estimate is limited to N <= 512");
    Eigen::MatrixXd cost(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            double s = 0.0;
            for (const auto r : keep) s += (a(r, i) - b(r, j)) * (a(r, i) - b(r, j));
            cost(i, j) = s;
        }
    const auto assignment = solve_assignment(cost);
    std::vector<double> sq(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        sq[static_cast<std::size_t>(i)] = cost(i, static_cast<Eigen::Index>(assignment[static_cast<std::size_t>(i)]));
    return std::sqrt(pairwise_sum(sq) / static_cast<double>(n));
}

double w2_estimate(const Ensemble& a, const Ensemble& b) { return w2_estimate(a.theta(), b.theta()); }

// ---- N-scaling study ----

Ensemble reference_sample(const InitSpec& spec, std::size_t n_particles, std::size_t weight_dim, std::uint64_t seed) {
    if (n_particles < 2 || n_particles % 2 != 0) throw ConfigError("reference sample needs even N_ref", "study.N_ref");
    if (spec.kind != InitSpec::Kind::PointMass && spec.kind != InitSpec::Kind::RadialSphere)
        throw ConfigError("fixed-coefficient mode needs a point-mass or radial-sphere init", "dynamics.init.kind");
    if (spec.kind == InitSpec::Kind::RadialSphere && (!(spec.radius_min >= 0.0) || !(spec.radius_max >= spec.radius_min)))
        throw ConfigError("radial init needs 0 <= radius_min <= radius_max", "dynamics.init.radius_min");
    const auto d = static_cast<Eigen::Index>(weight_dim);
    const auto np = static_cast<Eigen::Index>(n_particles);
    const double sd = std::sqrt(spec.w_var > 0.0 ? spec.w_var : 1.0 / static_cast<double>(weight_dim + 1));
    Eigen::MatrixXd theta(d + 1, np);
    theta.row(0).setConstant(spec.a0);
    Eigen::VectorXd g(d);
    for (Eigen::Index p = 0; p < np / 2; ++p) {
        CounterRng rng(seed, Purpose::Init, static_cast<std::uint64_t>(p));
        for (Eigen::Index j = 0; j < d; ++j) g(j) = rng.normal();
        for (Eigen::Index s = 0; s < 2; ++s) {
            const Eigen::Index i = 2 * p + s;
            const double sign = s == 0 ? 1.0 : -1.0;
            if (spec.kind == InitSpec::Kind::PointMass) {
                theta.col(i).tail(d) = sign * sd * g;
            } else {
                const double u = rng.uniform();
                const double r = spec.radius_min + (spec.radius_max - spec.radius_min) *
                                                       (static_cast<double>(i) + u) / static_cast<double>(np);
                theta.col(i).tail(d) = (sign * r / g.norm()) * g;
            }
        }
    }
    return Ensemble(std::move(theta), CoefficientMode::Fixed);
}

GapStudyResult gap_scaling_study(const GapStudyConfig& cfg, const DataModel& data, const PopulationEstimator& est,
                                 const ActivationModel& model) {
    if (cfg.n_grid.empty() || cfg.seeds.empty()) throw ConfigError("study grids must be non-empty", "study.N_grid");
    const std::size_t n_max = *std::max_element(cfg.n_grid.begin(), cfg.n_grid.end());
    if (cfg.n_ref < 8 * n_max)
        throw ConfigError("reference must dominate: N_ref >= 8 max(N_grid)", "study.N_ref");
    if (cfg.dynamics.mode != CoefficientMode::Fixed)
        throw ConfigError("the N-scaling study runs in fixed-coefficient mode", "dynamics.mode");
    cfg.dynamics.validate();
    const StepSchedule schedule = StepSchedule::constant(0.5);
    const std::size_t d = data.dim();

    // reference: one snapshot per SGD snapshot interval, integrated at h_ode
    DynamicsConfig ref_cfg = cfg.dynamics;
    ref_cfg.eps = cfg.dynamics.eps * static_cast<double>(cfg.dynamics.snapshot_every);
    ref_cfg.snapshot_every = 1;
    if (cfg.ref_h_ode < 0.0 || cfg.ref_h_ode > ref_cfg.eps * (1.0 + 1e-12))
        throw ConfigError("reference step must lie in [0, eps * snapshot_every]", "study.ref_h_ode");
    ref_cfg.h_ode = cfg.ref_h_ode > 0.0 ? cfg.ref_h_ode : ref_cfg.eps;
    ref_cfg.validate();
    ref_cfg.lambda = 0.0;
    ref_cfg.tau = 0.0;
    const Ensemble ref_init = cfg.ref_stratified ? reference_sample(cfg.init, cfg.n_ref, d, cfg.ref_seed)
                                                 : init_sample(cfg.init, cfg.n_ref, d, CoefficientMode::Fixed, cfg.ref_seed);

    GapStudyResult out;
    out.reference = build_reference_flow(ref_init, ref_cfg, schedule, est, model);

    const EmpiricalDataset frozen(est.points(), est.labels());
    const DataModel& stream = cfg.frozen_stream ? static_cast<const DataModel&>(frozen) : data;

    DynamicsConfig sgd_cfg = cfg.dynamics;
    sgd_cfg.h_ode = 0.0;
    sgd_cfg.record_population_risk = false;
    sgd_cfg.keep_states = false;

    const std::size_t jobs = cfg.n_grid.size() * cfg.seeds.size();
    out.runs.resize(jobs);
    run_jobs(jobs, [&](std::size_t job) {
        const std::size_t ni = job / cfg.seeds.size();
        const std::size_t si = job % cfg.seeds.size();
        GapStudyRun run;
        run.n = cfg.n_grid[ni];
        run.seed = cfg.seeds[si];
        DynamicsConfig c = sgd_cfg;
        c.seed = run.seed;
        const Ensemble init = init_sample(cfg.init, run.n, d, CoefficientMode::Fixed, run.seed);
        run.trajectory = sgd_run(init, c, schedule, stream, est, model);
        auto& tr = run.trajectory;
        tr.columns.push_back("ref_raw");
        tr.columns.push_back("ref_corrected");
        tr.columns.push_back("gap");
        const std::size_t rc = tr.column_index("risk_particles");
        for (std::size_t r = 0; r < tr.rows.size(); ++r) {
            const auto ref = reference_risk(out.reference, tr.rows[r][1]);
            const double gap = std::abs(tr.rows[r][rc] - ref.corrected);
            tr.rows[r].push_back(ref.raw);
            tr.rows[r].push_back(ref.corrected);
            tr.rows[r].push_back(gap);
            run.sup_gap = std::max(run.sup_gap, gap);
        }
        out.runs[job] = std::move(run);
    });

    std::vector<double> ns;
    for (std::size_t ni = 0; ni < cfg.n_grid.size(); ++ni) {
        std::vector<double> gaps;
        for (std::size_t si = 0; si < cfg.seeds.size(); ++si) gaps.push_back(out.runs[ni * cfg.seeds.size() + si].sup_gap);
        out.median_gap.push_back(median(gaps));
        ns.push_back(static_cast<double>(cfg.n_grid[ni]));
    }
    out.fit = fit_loglog(ns, out.median_gap);
    for (std::size_t i = 1; i < out.median_gap.size(); ++i)
        if (ns[i] > ns[i - 1] && out.median_gap[i] > 1.1 * out.median_gap[i - 1]) out.non_monotone = true;
    return out;
}

}  // namespace meanfield
