#include "meanfield/kernel.hpp"

#include "meanfield/errors.hpp"
#include "meanfield/estimator.hpp"
#include "meanfield/potentials.hpp"
#include "meanfield/rng.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace meanfield {

double kernel_eval(const Ensemble& ens, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& z, const ActivationModel& model) {
    double s = 0.0;
    for (std::size_t i = 0; i < ens.size(); ++i) {
        const Parameter p = ens.particle(i);
        s += grad_sigma_star(p, x, model, ens.mode()).dot(grad_sigma_star(p, z, model, ens.mode()));
    }
    return s / static_cast<double>(ens.size());
}

KernelMatrix::KernelMatrix(Eigen::MatrixXd H) : H_(std::move(H)) {
    if (H_.rows() < 1 || H_.rows() != H_.cols()) throw ConfigError("kernel matrix must be square and non-empty");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H_);
    if (eig.info() != Eigen::Success) throw std::runtime_error("symmetric eigensolver failed on the kernel matrix");
    values_ = eig.eigenvalues();
    vectors_ = eig.eigenvectors();
}

Eigen::Index KernelMatrix::null_space_dim() const { return (values_.array() < jitter_floor()).count(); }

KernelMatrix kernel_matrix(const Ensemble& ens, const Eigen::MatrixXd& points, const ActivationModel& model) {
    const Eigen::Index n = points.cols();
    Eigen::MatrixXd H(n, n);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) cells.emplace_back(i, j);
    parallel_for(cells.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t c = b; c < e; ++c) {
            const auto [i, j] = cells[c];
            H(i, j) = kernel_eval(ens, points.col(i), points.col(j), model);
        }
    }, 8);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < i; ++j) H(i, j) = H(j, i);
    return KernelMatrix(std::move(H));
}

Eigen::VectorXd h_vector(const Ensemble& ens, const Eigen::Ref<const Eigen::VectorXd>& z,
                         const Eigen::MatrixXd& points, const ActivationModel& model) {
    Eigen::VectorXd h(points.cols());
    for (Eigen::Index j = 0; j < points.cols(); ++j) h(j) = kernel_eval(ens, z, points.col(j), model);
    return h;
}

Eigen::VectorXd linearized_residual(const KernelMatrix& H, const Eigen::VectorXd& y, double t) {
    if (y.size() != H.size()) throw ConfigError("target length differs from kernel size");
    if (t == 0.0) return y;
    const double n = static_cast<double>(H.size());
    const Eigen::VectorXd decay = (-H.eigenvalues().array() * (t / n)).exp();
    return H.eigenvectors() * (decay.asDiagonal() * (H.eigenvectors().transpose() * y));
}

double linearized_prediction(const KernelMatrix& H, const Eigen::VectorXd& h, const Eigen::VectorXd& y, double t) {
    const double n = static_cast<double>(H.size());
    const Eigen::VectorXd hq = H.eigenvectors().transpose() * h;
    const Eigen::VectorXd yq = H.eigenvectors().transpose() * y;
    double s = 0.0;
    for (Eigen::Index k = 0; k < H.size(); ++k) {
        const double lam = H.eigenvalues()(k);
        const double factor = lam > 0.0 ? -std::expm1(-lam * t / n) / lam : t / n;
        s += hq(k) * yq(k) * factor;
    }
    return s;
}

const char* to_string(KrrSolve::Method m) {
    switch (m) {
        case KrrSolve::Method::Direct: return "direct";
        case KrrSolve::Method::Jitter: return "jitter";
        case KrrSolve::Method::PseudoInverse: return "pseudo-inverse";
    }
    return "?";
}

KrrSolve krr_solve(const KernelMatrix& H, const Eigen::VectorXd& y) {
    if (y.size() != H.size()) throw ConfigError("target length differs from kernel size");
    const Eigen::Index n = H.size();
    const double floor = H.jitter_floor();
    const double top = std::abs(H.lambda_max());
    KrrSolve out;
    if (H.lambda_min() > floor) {
        Eigen::LLT<Eigen::MatrixXd> llt(H.matrix());
        if (llt.info() == Eigen::Success) {
            out.coeffs = llt.solve(y);
            return out;
        }
    }
    for (double j = floor; j > 0.0 && j <= 1e-6 * H.trace() / static_cast<double>(n) * (1.0 + 1e-9); j *= 10.0) {
        if (!(H.lambda_min() + j > 1e-15 * top)) continue;
        Eigen::MatrixXd shifted = H.matrix();
        shifted.diagonal().array() += j;
        Eigen::LLT<Eigen::MatrixXd> llt(shifted);
        if (llt.info() != Eigen::Success) continue;
        out.coeffs = llt.solve(y);
        out.method = KrrSolve::Method::Jitter;
        out.jitter = j;
        return out;
    }
    const Eigen::VectorXd yq = H.eigenvectors().transpose() * y;
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k)
        if (H.eigenvalues()(k) > floor) inv(k) = 1.0 / H.eigenvalues()(k);
    out.coeffs = H.eigenvectors() * (inv.asDiagonal() * yq);
    out.method = KrrSolve::Method::PseudoInverse;
    out.warning = true;
    return out;
}

KrrPrediction krr_limit_predict(const Ensemble& ens0, const EmpiricalDataset& data,
                                const Eigen::Ref<const Eigen::VectorXd>& z, const ActivationModel& model) {
    const KernelMatrix H = kernel_matrix(ens0, data.points(), model);
    KrrPrediction out;
    out.solve = krr_solve(H, data.labels());
    out.value = h_vector(ens0, z, data.points(), model).dot(out.solve.coeffs);
    return out;
}

double integrate_linearized_prediction(const Eigen::MatrixXd& H, const Eigen::VectorXd& h, const Eigen::VectorXd& y,
                                       double t_end, std::size_t steps) {
    const double n = static_cast<double>(H.rows());
    const double dt = t_end / static_cast<double>(steps);
    Eigen::VectorXd u = y;
    double f = 0.0;
    auto du = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return -(H * v) / n; };
    auto df = [&](const Eigen::VectorXd& v) { return h.dot(v) / n; };
    for (std::size_t s = 0; s < steps; ++s) {
        const Eigen::VectorXd k1 = du(u);
        const Eigen::VectorXd u2 = u + 0.5 * dt * k1;
        const Eigen::VectorXd k2 = du(u2);
        const Eigen::VectorXd u3 = u + 0.5 * dt * k2;
        const Eigen::VectorXd k3 = du(u3);
        const Eigen::VectorXd u4 = u + dt * k3;
        const Eigen::VectorXd k4 = du(u4);
        f += dt / 6.0 * (df(u) + 2.0 * df(u2) + 2.0 * df(u3) + df(u4));
        u += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return f;
}

RescaledFlow rescaled_flow(const Ensemble& ens, double alpha, const DynamicsConfig& cfg, const EmpiricalDataset& data,
                           const ActivationModel& model) {
    if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0", "study.alpha_grid");
    const auto est = PopulationEstimator::exact_empirical(data);
    DynamicsConfig c = cfg;
    c.lambda = 0.0;
    c.tau = 0.0;
    c.keep_states = true;
    c.mode = ens.mode();
    RescaledFlow out;
    const Ensemble scaled = ens.with_scale(alpha);
    out.trajectory = pd_integrate(scaled, c, StepSchedule::constant(0.5 / alpha), est, model);
    out.times = out.trajectory.column("t");
    for (const auto& state : out.trajectory.states)
        out.residuals.push_back(data.labels() - predict_batch(scaled.with_theta(state), data.points(), model));
    return out;
}

EmpiricalDataset make_regression_data(std::size_t n, std::size_t d, std::uint64_t seed) {
    if (n < 1 || d < 1) throw ConfigError("regression data needs n >= 1 and d >= 1", "study.n_points");
    CounterRng rng(seed, Purpose::Study, 0);
    const auto dd = static_cast<Eigen::Index>(d);
    Eigen::VectorXd beta(dd);
    for (Eigen::Index j = 0; j < dd; ++j) beta(j) = rng.normal() / std::sqrt(static_cast<double>(d));
    Eigen::MatrixXd x(dd, static_cast<Eigen::Index>(n));
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        for (Eigen::Index j = 0; j < dd; ++j) x(j, k) = rng.normal();
        y(k) = std::sin(beta.dot(x.col(k)));
    }
    return EmpiricalDataset(std::move(x), std::move(y));
}

CrossoverResult kernel_crossover_experiment(const CrossoverConfig& cfg, const ActivationModel& model) {
    if (cfg.alpha_grid.empty()) throw ConfigError("alpha grid is empty", "study.alpha_grid");
    const EmpiricalDataset data = make_regression_data(cfg.n_points, cfg.d, cfg.seed);
    InitSpec spec;
    spec.kind = InitSpec::Kind::Antithetic;
    spec.a0 = cfg.a0;
    const Ensemble ens0 = init_sample(spec, cfg.n_particles, cfg.d, CoefficientMode::General, cfg.seed);
    const KernelMatrix H = kernel_matrix(ens0, data.points(), model);
    const double n = static_cast<double>(cfg.n_points);

    DynamicsConfig dyn;
    dyn.mode = CoefficientMode::General;
    dyn.h_ode = cfg.h_ode;
    dyn.eps = cfg.h_ode;
    dyn.T = cfg.T;
    dyn.snapshot_every = cfg.snapshot_every;
    dyn.record_population_risk = false;
    dyn.seed = cfg.seed;

    CrossoverResult out;
    out.columns = {"alpha", "t", "gap_l2", "risk_alpha", "risk_linearized"};
    out.y_l2 = std::sqrt(data.labels().squaredNorm() / n);
    out.initial_risk = data.labels().squaredNorm() / n;
    std::vector<std::vector<std::vector<double>>> per_alpha(cfg.alpha_grid.size());
    out.sup_gap.assign(cfg.alpha_grid.size(), 0.0);
    out.sup_gap_half.assign(cfg.alpha_grid.size(), 0.0);
    run_jobs(cfg.alpha_grid.size(), [&](std::size_t a) {
        const double alpha = cfg.alpha_grid[a];
        const RescaledFlow flow = rescaled_flow(ens0, alpha, dyn, data, model);
        for (std::size_t s = 0; s < flow.times.size(); ++s) {
            const double t = flow.times[s];
            const Eigen::VectorXd ustar = linearized_residual(H, data.labels(), t);
            const double gap = std::sqrt((flow.residuals[s] - ustar).squaredNorm() / n);
            per_alpha[a].push_back({alpha, t, gap, flow.residuals[s].squaredNorm() / n, ustar.squaredNorm() / n});
            out.sup_gap[a] = std::max(out.sup_gap[a], gap);
            if (t <= 0.5 * cfg.T * (1.0 + 1e-12)) out.sup_gap_half[a] = std::max(out.sup_gap_half[a], gap);
        }
    });
    for (auto& rows : per_alpha)
        for (auto& r : rows) out.rows.push_back(std::move(r));
    out.fit = fit_loglog(cfg.alpha_grid, out.sup_gap);
    return out;
}

}  // namespace meanfield
