// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include "meanfield/dynamics.hpp"
#include "meanfield/errors.hpp"
#include "meanfield/kernel.hpp"
#include "meanfield/lab.hpp"
#include "meanfield/numeric.hpp"
#include "meanfield/oracle.hpp"
#include "meanfield/potentials.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>
#include <sys/wait.h>

using namespace meanfield;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool ok = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<Verdict()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = body();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= budget_s;
    const bool pass = v.ok && in_time;
    if (!pass) ++failures;
    std::printf("%s %s: %s; %.1f s of %.0f s%s\n", pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), secs,
                budget_s, in_time ? "" : " (over budget)");
    std::fflush(stdout);
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::path(MEANFIELD_TEST_TMP) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Eigen::MatrixXd random_theta(std::size_t d, std::size_t n, CoefficientMode mode, std::mt19937_64& gen,
                             double w_sd = 0.7) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd theta(static_cast<Eigen::Index>(d + 1), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < theta.cols(); ++i) {
        theta(0, i) = mode == CoefficientMode::Fixed ? 1.0 : g(gen);
        for (Eigen::Index j = 1; j < theta.rows(); ++j) theta(j, i) = w_sd * g(gen);
    }
    return theta;
}

double kink_clearance(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& x, const TruncatedReluDot& act) {
    double best = INFINITY;
    const Eigen::MatrixXd proj = x.transpose() * theta.bottomRows(theta.rows() - 1);
    for (Eigen::Index k = 0; k < proj.rows(); ++k) {
        const double nx = x.col(k).norm();
        for (Eigen::Index i = 0; i < proj.cols(); ++i)
            best = std::min(best, std::min(std::abs(proj(k, i) - act.t1()), std::abs(proj(k, i) - act.t2())) / nx);
    }
    return best;
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}

/// Central differences of f around x.
Eigen::VectorXd central_fd(const Eigen::VectorXd& x, const std::function<double(const Eigen::VectorXd&)>& f,
                           Eigen::Index first = 0, double h = 1e-6) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
    for (Eigen::Index j = first; j < x.size(); ++j) {
        Eigen::VectorXd p = x, m = x;
        p(j) += h;
        m(j) -= h;
        out(j) = (f(p) - f(m)) / (2 * h);
    }
    return out;
}

RunOutputs lab_run(const std::string& experiment, std::vector<std::string> flags, const std::string& dir) {
    flags.push_back("--io.out_dir=" + scratch(dir).string());
    return run_experiment(parse_and_validate(experiment, {}, flags));
}

// ---------------------------------------------------------------------------

Verdict risk_identity() {
    const std::size_t d = 5;
    AnisotropicGaussians data(d, 0.4, 0.5);
    TruncatedReluDot act(-1.0, 2.0, -0.3, 1.1);
    const auto est = PopulationEstimator::monte_carlo(data, 512, 11);
    std::mt19937_64 gen(2024);
    const std::size_t ns[] = {1, 3, 17};
    double worst = 0.0;
    for (int c = 0; c < 30; ++c) {
        const std::size_t n = ns[c % 3];
        const auto mode = (c / 3) % 2 == 0 ? CoefficientMode::Fixed : CoefficientMode::General;
        const double alpha = (c / 6) % 2 == 0 ? 1.0 : 10.0;
        const Ensemble ens(random_theta(d, n, mode, gen), mode, alpha);
        const double r1 = risk_particles(ens, est, act);
        const double r2 = risk_population_mc(ens, est, act);
        worst = std::max(worst, std::abs(r1 - r2) / std::max(1.0, std::abs(r2)));
    }
    return {worst <= 1e-12, fmt("30 cases, max |decomposition - residual| / max(1, risk) = %.2e (tol 1e-12)", worst)};
}

Verdict gradient_suite() {
    const std::size_t d = 4;
    AnisotropicGaussians data(d, 0.5, 0.5, AnisotropicGaussians::random_rotation(d, 2));
    TruncatedReluDot act(-0.2, 1.0, -0.5, 0.8);
    const auto mc = PopulationEstimator::monte_carlo(data, 96, 5);
    const auto gh = PopulationEstimator::gauss_hermite(data, 41);
    std::mt19937_64 gen(99);
    double worst = 0.0;
    int points = 0, draws = 0;
    while (points < 100 && draws < 5000) {
        ++draws;
        const auto mode = points % 2 == 0 ? CoefficientMode::General : CoefficientMode::Fixed;
        const std::size_t n = 2 + points % 3;
        const double alpha = points % 4 < 2 ? 1.0 : 3.0;
        const Eigen::MatrixXd th = random_theta(d, n, mode, gen);
        if (kink_clearance(th, mc.points(), act) < 1e-4) continue;
        ++points;
        const Parameter p1{th(0, 0), th.col(0).tail(d)}, p2{th(0, 1), th.col(1).tail(d)};
        const Eigen::Index first = mode == CoefficientMode::Fixed ? 1 : 0;
        auto param = [&](const Eigen::VectorXd& v) { return Parameter{v(0), v.tail(d)}; };
        auto track = [&](const Eigen::VectorXd& fd, const Eigen::VectorXd& an) {
            if (an.norm() > 0.0 || fd.norm() > 0.0) worst = std::max(worst, rel_err(fd, an));
        };

        // sigma_star at a sample point
        const Eigen::VectorXd x = mc.points().col(points % mc.points().cols());
        track(central_fd(th.col(0), [&](const Eigen::VectorXd& v) { return sigma_star(param(v), x, act); }, first)
                  .tail(d + 1 - first),
              grad_sigma_star(p1, x, act, mode).tail(d + 1 - first) * (mode == CoefficientMode::Fixed ? p1.a : 1.0));

        for (const auto* est : {&mc, &gh}) {
            track(central_fd(p1.w, [&](const Eigen::VectorXd& w) { return potential_v(w, *est, act); }),
                  grad_v(p1.w, *est, act));
            track(central_fd(p1.w, [&](const Eigen::VectorXd& w) { return potential_u(w, p2.w, *est, act); }),
                  grad1_u(p1.w, p2.w, *est, act));
            if (mode == CoefficientMode::General) {
                track(central_fd(th.col(0), [&](const Eigen::VectorXd& v) { return potential_V(param(v), *est, act); }),
                      grad_V(p1, *est, act, mode));
                track(central_fd(th.col(0),
                                 [&](const Eigen::VectorXd& v) { return potential_U(param(v), p2, *est, act); }),
                      grad1_U(p1, p2, *est, act, mode));
            }
        }

        // risk against -(2 alpha / N) force, particle 0
        const Ensemble ens(th, mode, alpha);
        const Eigen::VectorXd force = mean_field_force(th, mode, alpha, mc, act).force.col(0);
        const Eigen::VectorXd fd = central_fd(th.col(0), [&](const Eigen::VectorXd& v) {
            Eigen::MatrixXd t = th;
            t.col(0) = v;
            return risk_particles(ens.with_theta(t), mc, act);
        }, first);
        track(fd.tail(d + 1 - first), (-2.0 * alpha / static_cast<double>(n) * force).tail(d + 1 - first));
    }
    return {points == 100 && worst <= 1e-5,
            fmt("%.0f non-kink points, worst relative error %.2e (tol 1e-5)", points, worst)};
}

Verdict pd_monotone() {
    const std::size_t d = 10;
    AnisotropicGaussians data(d, 0.5, 0.5);
    TruncatedReluDot act(0.0, 1.0, 0.0, 1.0);
    const auto est = PopulationEstimator::monte_carlo(data, 1024, 3);
    DynamicsConfig cfg;
    cfg.eps = 0.01;
    cfg.T = 5.0;
    cfg.record_population_risk = false;
    double worst = -INFINITY;
    std::size_t snapshots = 0;
    for (auto mode : {CoefficientMode::Fixed, CoefficientMode::General}) {
        InitSpec spec;
        spec.kind = mode == CoefficientMode::Fixed ? InitSpec::Kind::PointMass : InitSpec::Kind::Uniform;
        cfg.mode = mode;
        const auto rec = pd_integrate(init_sample(spec, 100, d, mode, 4), cfg, StepSchedule::constant(0.5), est, act);
        const auto r = rec.column("risk_particles");
        for (std::size_t k = 1; k < r.size(); ++k) worst = std::max(worst, (r[k] - r[k - 1]) / cfg.eps);
        snapshots += r.size();
    }
    return {worst <= 1e-8, fmt("%.0f snapshots over both modes, max increase / dt = %.2e (tol 1e-8)",
                               static_cast<double>(snapshots), worst)};
}

struct EpsSetup {
    static constexpr std::size_t d = 10;
    AnisotropicGaussians data{d, 0.5, 0.5};
    TruncatedReluDot act{0.0, 1.0, 0.0, 1.0};
    PopulationEstimator est = PopulationEstimator::monte_carlo(data, 1024, 7);
    Ensemble init = init_sample(InitSpec{}, 100, d, CoefficientMode::Fixed, 3);
    StepSchedule schedule = StepSchedule::constant(0.5);

    /// Snapshots every 1/16 up to T = 1 for eps = 2^-p.
    DynamicsConfig config(int p) const {
        DynamicsConfig c;
        c.T = 1.0;
        c.eps = 1.0 / static_cast<double>(1 << p);
        c.snapshot_every = static_cast<std::size_t>(1) << (p - 4);
        c.keep_states = true;
        c.record_population_risk = false;
        return c;
    }
};

double sup_gap(const TrajectoryRecord& a, const TrajectoryRecord& b) {
    double g = 0.0;
    for (std::size_t s = 0; s < a.states.size(); ++s) g = std::max(g, max_particle_gap(a.states[s], b.states[s]));
    return g;
}

Verdict eps_scaling() {
    const EpsSetup s;
    DynamicsConfig pc = s.config(4);
    pc.h_ode = 1.0 / 2048;
    const auto pd = pd_integrate(s.init, pc, s.schedule, s.est, s.act);
    std::vector<double> eps, gap;
    for (int p = 4; p <= 9; ++p) {
        const DynamicsConfig c = s.config(p);
        eps.push_back(c.eps);
        gap.push_back(sup_gap(gd_run(s.init, c, s.schedule, s.est, s.act), pd));
    }
    const auto fit = fit_loglog(eps, gap);
    return {std::abs(fit.slope - 1.0) <= 0.2,
            fmt("GD vs particle flow, eps 1/16..1/512, slope %.3f (target 1.0 +/- 0.2), gap %.2e..%.2e", fit.slope,
                gap.front(), gap.back())};
}

Verdict sqrt_eps_scaling() {
    const EpsSetup s;
    const EmpiricalDataset frozen(s.est.points(), s.est.labels());
    std::vector<double> eps;
    std::vector<std::vector<double>> gaps(6);
    for (int p = 4; p <= 9; ++p) eps.push_back(1.0 / static_cast<double>(1 << p));
    std::vector<double> flat(6 * 8);
    run_jobs(flat.size(), [&](std::size_t job) {
        DynamicsConfig c = s.config(4 + static_cast<int>(job % 6));
        c.seed = 1 + job / 6;
        const auto gd = gd_run(s.init, c, s.schedule, s.est, s.act);
        const auto sgd = sgd_run(s.init, c, s.schedule, frozen, s.est, s.act);
        flat[job] = sup_gap(gd, sgd);
    });
    for (std::size_t job = 0; job < flat.size(); ++job) gaps[job % 6].push_back(flat[job]);
    std::vector<double> med;
    for (auto& g : gaps) med.push_back(median(g));
    const auto fit = fit_loglog(eps, med);
    return {std::abs(fit.slope - 0.5) <= 0.2,
            fmt("SGD vs GD, median of 8 seeds, slope %.3f (target 0.5 +/- 0.2), gap %.2e..%.2e", fit.slope,
                med.front(), med.back())};
}

Verdict n_scaling() {
    const auto out = lab_run("gap-scaling", {}, "gap_scaling");
    const auto& rows = out.summary.rows;
    const double slope = rows.front()[2];
    std::string gaps;
    for (const auto& r : rows) gaps += (gaps.empty() ? "" : " ") + fmt("%.2e", r[1]);
    return {std::abs(slope + 0.5) <= 0.2,
            fmt("N 25..800 against N_ref 6400, median of seeds 1-8, slope %.3f (target -0.5 +/- 0.2, CI [%.2f, %.2f])",
                slope, rows.front()[3], rows.front()[4]) +
                ", median gaps " + gaps};
}

Verdict fokker_planck() {
    const auto out = lab_run("fokker-planck-check", {}, "fokker_planck");
    bool ok = true;
    std::string ratios;
    for (std::size_t i = 1; i < out.summary.rows.size(); ++i) {
        const double r = out.summary.rows[i][2];
        ok = ok && std::abs(r - 2.0) <= 0.3 * 2.0;
        ratios += (ratios.empty() ? "" : ", ") + fmt("%.3f", r);
    }
    // flat activation: the flow is Ornstein-Uhlenbeck with variance tau / (lambda D)
    FokkerPlanckCheckConfig f;
    f.s1 = f.s2 = 0.0;
    f.T = 5.0;
    f.n_particles = 4000;
    const auto rep = fokker_planck_vs_langevin(f);
    const double target = f.tau / (f.lambda * 2.0);
    const double grid_var = rep.rows.back()[4], particle_var = rep.rows.back()[6];
    const double worst = std::max(std::abs(grid_var / target - 1.0), std::abs(particle_var / target - 1.0));
    ok = ok && worst <= 0.05;
    return {ok, "L1 ratios per 4x particles " + ratios + " (target 2 +/- 30%); OU variance grid " +
                    fmt("%.4f, particles %.4f vs %.4f (within %.1f%%, tol 5%%)", grid_var, particle_var, target,
                        100.0 * worst)};
}

Verdict kernel_exponential() {
    TruncatedReluDot act(0.0, 1.0, 0.0, 1.0);
    InitSpec spec;
    spec.kind = InitSpec::Kind::Antithetic;
    double series_err = 0.0, krr_res = 0.0;
    bool monotone = true;
    int krr_cases = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Ensemble ens = init_sample(spec, 200, 3, CoefficientMode::General, seed);
        // two-point instances against the truncated exponential series
        const EmpiricalDataset two = make_regression_data(2, 3, seed);
        const KernelMatrix H2 = kernel_matrix(ens, two.points(), act);
        for (double t : {0.1, 0.5, 1.0, 2.0}) {
            const Eigen::MatrixXd A = -H2.matrix() * t / 2.0;
            Eigen::VectorXd term = two.labels(), sum = term;
            for (int k = 1; k < 40; ++k) {
                term = A * term / static_cast<double>(k);
                sum += term;
            }
            series_err = std::max(series_err, (linearized_residual(H2, two.labels(), t) - sum).norm());
        }
        // residual norm on a 20-point time grid, 20 training points
        const EmpiricalDataset data = make_regression_data(20, 3, seed + 100);
        const KernelMatrix H = kernel_matrix(ens, data.points(), act);
        double prev = INFINITY;
        for (int k = 0; k < 20; ++k) {
            const double norm = linearized_residual(H, data.labels(), 10.0 * k / 19.0).norm();
            monotone = monotone && norm <= prev;
            prev = norm;
        }
        // kernel ridge interpolation on well-conditioned instances
        const EmpiricalDataset small = make_regression_data(4, 3, seed + 200);
        const KernelMatrix H4 = kernel_matrix(ens, small.points(), act);
        if (H4.lambda_min() > 1e3 * H4.jitter_floor()) {
            ++krr_cases;
            for (Eigen::Index j = 0; j < 4; ++j)
                krr_res = std::max(krr_res, std::abs(krr_limit_predict(ens, small, small.points().col(j), act).value -
                                                     small.labels()(j)));
        }
    }
    const bool ok = series_err <= 1e-10 && monotone && krr_cases > 0 && krr_res <= 1e-8;
    return {ok, fmt("series error %.2e (tol 1e-10), ", series_err) + (monotone ? "norm monotone" : "norm NOT monotone") +
                    fmt(", KRR training residual %.2e over %.0f instances (tol 1e-8)", krr_res, krr_cases)};
}

Verdict crossover() {
    const auto out = lab_run("kernel-crossover", {}, "crossover");
    const double slope = out.summary.rows.front()[3];
    return {std::abs(slope + 1.0) <= 0.3,
            fmt("alpha 2..64, n 32, d 8, N 2000, slope %.3f (target -1.0 +/- 0.3), sup gap %.2e..%.2e", slope,
                out.summary.rows.front()[1], out.summary.rows.back()[1])};
}

Verdict krr_limit() {
    double worst = 0.0;
    for (int seed = 1; seed <= 3; ++seed) {
        const auto out = lab_run("krr-check", {"--seed=" + std::to_string(seed)}, "krr");
        worst = std::max(worst, out.summary.rows.front()[7]);
    }
    return {worst <= 1e-6, fmt("3 fixtures of 4 points at t = 200, max |integrated - closed form| %.2e (tol 1e-6)",
                               worst)};
}

Verdict gaussians_demo() {
    const auto out = lab_run("gaussians-demo", {}, "demo");
    const auto& r = out.summary.rows.front();
    const bool ok = r[3] >= 0.30 && r[4] <= 0.05;
    return {ok, fmt("pinned fixture: risk %.3f -> %.3f, reduction %.1f%% (>= 30%%), plateau %.4f (<= 0.05)", r[0], r[1],
                    100.0 * r[3], r[4])};
}

Verdict determinism() {
    const std::vector<std::string> runs = {
        "run-coupled --dynamics.N=60 --dynamics.T=0.5 --estimator.n_mc=256 --dynamics.tau=0.1 --dynamics.lambda=0.1 "
        "--dynamics.mode=general --dynamics.init.kind=uniform --dynamics.h_ode=0.005 "
        "--dynamics.kinds=[\\\"noisy-sgd\\\",\\\"noisy-gd\\\",\\\"langevin-pd\\\"] --study.eps_grid=[0.02,0.01]",
        "gap-scaling --study.N_grid=[10,20] --study.N_ref=160 --study.seeds=[1,2,3] --dynamics.T=0.05 "
        "--estimator.n_mc=128",
        "fokker-planck-check --study.particles_grid=[500,2000] --dynamics.T=0.5",
        "krr-check",
    };
    const fs::path root = scratch("determinism");
    std::size_t compared = 0;
    std::string bad;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        for (const char* threads : {"1", "4"}) {
            const fs::path out = root / ("run" + std::to_string(k)) / threads;
            const std::string cmd = std::string("MEANFIELD_LAB_THREADS=") + threads + " \"" MEANFIELD_LAB_EXE "\" " +
                                    runs[k] + " --io.out_dir=\"" + out.string() + "\" > /dev/null";
            const int status = std::system(cmd.c_str());
            if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "command failed: " + runs[k]};
        }
        const fs::path one = root / ("run" + std::to_string(k)) / "1";
        for (const auto& f : fs::recursive_directory_iterator(one)) {
            if (f.path().extension() != ".csv") continue;
            const fs::path other = root / ("run" + std::to_string(k)) / "4" / fs::relative(f.path(), one);
            ++compared;
            if (slurp(f.path()) != slurp(other)) bad += " " + fs::relative(f.path(), root).string();
        }
    }
    return {bad.empty() && compared > 0,
            fmt("%.0f CSVs from 4 experiments, threads 1 vs 4 ", static_cast<double>(compared)) +
                (bad.empty() ? std::string("byte-identical") : "differ:" + bad)};
}

}  // namespace

int main() {
    std::printf("meanfield acceptance, %zu worker thread(s)\n", num_threads());
    criterion("risk identity", 5, risk_identity);
    criterion("gradient suite", 10, gradient_suite);
    criterion("particle flow risk monotone", 60, pd_monotone);
    criterion("eps scaling GD vs flow", 120, eps_scaling);
    criterion("sqrt-eps scaling SGD vs GD", 180, sqrt_eps_scaling);
    criterion("N scaling", 600, n_scaling);
    criterion("Fokker-Planck oracle", 180, fokker_planck);
    criterion("kernel exponential", 5, kernel_exponential);
    criterion("kernel crossover", 300, crossover);
    criterion("KRR limit", 5, krr_limit);
    criterion("Gaussians demo", 300, gaussians_demo);
    criterion("determinism", 60, determinism);
    std::printf("%d failure(s)\n", failures);
    return failures == 0 ? 0 : 1;
}
