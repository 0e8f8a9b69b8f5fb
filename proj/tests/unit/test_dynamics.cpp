#include "doctest.h"

#include "fixtures.hpp"

#include "meanfield/errors.hpp"
#include "meanfield/numeric.hpp"
#include "meanfield/potentials.hpp"
#include "meanfield/rng.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace meanfield;

namespace {

struct Small {
    std::size_t d = 3;
    AnisotropicGaussians data{3, 0.34, 0.5};
    TruncatedReluDot act{0.0, 1.0, 0.0, 1.0};
    PopulationEstimator est = PopulationEstimator::monte_carlo(data, 256, 2);
};

}  // namespace

TEST_CASE("init samplers: moments and nesting") {
    const std::size_t d = 5;
    InitSpec pm;
    pm.w_var = 0.3;
    const Ensemble a = init_sample(pm, 20000, d, CoefficientMode::Fixed, 4);
    const Eigen::MatrixXd w = a.weights();
    CHECK(a.coefficients().cwiseEqual(1.0).all());
    CHECK(std::abs(w.mean()) < 0.01);
    CHECK(w.array().square().mean() == doctest::Approx(0.3).epsilon(0.02));
    const Ensemble small = init_sample(pm, 50, d, CoefficientMode::Fixed, 4);
    CHECK(small.theta() == a.theta().leftCols(50));

    InitSpec un;
    un.kind = InitSpec::Kind::Uniform;
    un.a0 = 2.0;
    const Ensemble u = init_sample(un, 20000, d, CoefficientMode::General, 4);
    CHECK(u.coefficients().cwiseAbs().maxCoeff() <= 2.0);
    CHECK(u.coefficients().array().square().mean() == doctest::Approx(4.0 / 3.0).epsilon(0.03));
    // default variance is 1 / D
    CHECK(u.weights().array().square().mean() == doctest::Approx(1.0 / 6.0).epsilon(0.02));

    InitSpec rs;
    rs.kind = InitSpec::Kind::RadialSphere;
    rs.radius_min = 1.0;
    rs.radius_max = 3.0;
    const Ensemble r = init_sample(rs, 20000, d, CoefficientMode::Fixed, 4);
    const Eigen::VectorXd norms = r.weights().colwise().norm().transpose();
    CHECK(norms.minCoeff() >= 1.0 - 1e-12);
    CHECK(norms.maxCoeff() <= 3.0 + 1e-12);
    CHECK(norms.mean() == doctest::Approx(2.0).epsilon(0.01));
    CHECK(std::abs(r.weights().rowwise().mean().maxCoeff()) < 0.05);

    InitSpec an;
    an.kind = InitSpec::Kind::Antithetic;
    CHECK_THROWS_AS(init_sample(an, 5, d, CoefficientMode::General, 1), ConfigError);
    CHECK_THROWS_AS(init_sample(un, 5, d, CoefficientMode::Fixed, 1), ConfigError);
}

TEST_CASE("one SGD step by hand") {
    Small s;
    InitSpec spec;
    spec.kind = InitSpec::Kind::Uniform;
    const Ensemble init = init_sample(spec, 3, s.d, CoefficientMode::General, 1, 2.0);
    DynamicsConfig cfg;
    cfg.mode = CoefficientMode::General;
    cfg.eps = 0.1;
    cfg.T = 0.1;
    cfg.seed = 42;
    const auto sched = StepSchedule::constant(0.7);
    const auto rec = sgd_run(init, cfg, sched, s.data, s.est, s.act);

    CounterRng rng(42, Purpose::Data, 0);
    Eigen::VectorXd x(3);
    const double y = s.data.sample(rng, x);
    const Eigen::MatrixXd& th = init.theta();
    double f = 0.0;
    for (int i = 0; i < 3; ++i) f += 2.0 * th(0, i) * s.act.value(th.col(i).tail(3).dot(x));
    f /= 3.0;
    Eigen::MatrixXd expect = th;
    const double step = 2.0 * 0.1 * 0.7 * (y - f);
    for (int i = 0; i < 3; ++i) {
        const double t = th.col(i).tail(3).dot(x);
        expect(0, i) += step * s.act.value(t);
        expect.col(i).tail(3) += step * th(0, i) * s.act.slope(t) * x;
    }
    CHECK((rec.final_theta - expect).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(rec.rows.size() == 2);
}

TEST_CASE("a GD step is the average SGD step over the sample set") {
    Small s;
    EmpiricalDataset frozen(s.est.points(), s.est.labels());
    InitSpec spec;
    spec.kind = InitSpec::Kind::Uniform;
    const Ensemble init = init_sample(spec, 7, s.d, CoefficientMode::General, 3, 1.5);
    DynamicsConfig cfg;
    cfg.mode = CoefficientMode::General;
    cfg.eps = 0.05;
    cfg.T = 0.05;
    const auto sched = StepSchedule::constant(0.5);
    const Eigen::MatrixXd gd = gd_run(init, cfg, sched, s.est, s.act).final_theta;

    const Eigen::MatrixXd& th = init.theta();
    Eigen::MatrixXd mean_step = Eigen::MatrixXd::Zero(th.rows(), th.cols());
    const auto n = s.est.points().cols();
    for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::VectorXd x = s.est.points().col(k);
        double f = 0.0;
        for (Eigen::Index i = 0; i < th.cols(); ++i) f += 1.5 * th(0, i) * s.act.value(th.col(i).tail(3).dot(x));
        f /= static_cast<double>(th.cols());
        const double r = s.est.labels()(k) - f;
        for (Eigen::Index i = 0; i < th.cols(); ++i) {
            const double t = th.col(i).tail(3).dot(x);
            mean_step(0, i) += r * s.act.value(t);
            mean_step.col(i).tail(3) += r * th(0, i) * s.act.slope(t) * x;
        }
    }
    mean_step *= 2.0 * 0.05 * 0.5 / static_cast<double>(n);
    CHECK((gd - (th + mean_step)).cwiseAbs().maxCoeff() < 1e-14);

    // and the empirical mean of many single SGD steps approaches it
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(th.rows(), th.cols());
    const int reps = 4000;
    for (int seed = 1; seed <= reps; ++seed) {
        DynamicsConfig c = cfg;
        c.seed = static_cast<std::uint64_t>(seed);
        acc += sgd_run(init, c, sched, frozen, s.est, s.act).final_theta;
    }
    acc /= reps;
    CHECK((acc - gd).cwiseAbs().maxCoeff() < 4e-3);
}

TEST_CASE("noise-free variants coincide bit for bit") {
    Small s;
    const Ensemble init = init_sample(InitSpec{}, 10, s.d, CoefficientMode::Fixed, 2);
    DynamicsConfig cfg;
    cfg.eps = 0.02;
    cfg.T = 0.4;
    cfg.snapshot_every = 5;
    const auto sched = StepSchedule::constant(0.5);
    const auto a = sgd_run(init, cfg, sched, s.data, s.est, s.act);
    const auto b = noisy_sgd_run(init, cfg, sched, s.data, s.est, s.act);
    CHECK(a.final_theta == b.final_theta);
    CHECK(a.rows == b.rows);
    CHECK(a.rows.size() == 5);

    // fixed mode: noise and decay never touch the a-row
    DynamicsConfig noisy = cfg;
    noisy.tau = 0.3;
    noisy.lambda = 0.5;
    const auto c = noisy_sgd_run(init, noisy, sched, s.data, s.est, s.act);
    CHECK(c.final_theta.row(0).cwiseEqual(1.0).all());
    CHECK(c.final_theta != a.final_theta);
    const auto g = gd_run(init, noisy, sched, s.est, s.act);
    CHECK(g.final_theta.row(0).cwiseEqual(1.0).all());
}

TEST_CASE("window noise is the normalized sum of the fine increments") {
    for (std::size_t m : {1, 4, 7}) {
        double sum = 0.0;
        for (std::size_t l = 0; l < m; ++l) sum += fine_normal(9, 3, 5 * m + l, 2, 4);
        CHECK(window_normal(9, 3, 5, 2, 4, m) == doctest::Approx(sum / std::sqrt(static_cast<double>(m))).epsilon(1e-14));
    }
}

TEST_CASE("Ornstein-Uhlenbeck variance under noisy GD") {
    const std::size_t d = 1;
    AnisotropicGaussians data(d, 1.0, 0.5);
    TruncatedReluDot flat(0.0, 0.0, 0.0, 1.0);
    const auto est = PopulationEstimator::monte_carlo(data, 16, 1);
    InitSpec spec;
    spec.w_var = 0.01;
    const Ensemble init = init_sample(spec, 20000, d, CoefficientMode::Fixed, 5);
    DynamicsConfig cfg;
    cfg.eps = 0.01;
    cfg.T = 6.0;
    cfg.tau = 0.5;
    cfg.lambda = 1.0;
    cfg.snapshot_every = 600;
    const auto rec = gd_run(init, cfg, StepSchedule::constant(0.5), est, flat);
    const Eigen::ArrayXd w = rec.final_theta.row(1).transpose().array();
    const double var = (w - w.mean()).square().mean();
    // exact stationary variance of the recursion w' = (1 - 2 lambda s) w + sqrt(4 s tau / D) g
    const double s = 0.005, q = 1.0 - 2.0 * cfg.lambda * s;
    const double exact = (4.0 * s * cfg.tau / 2.0) / (1.0 - q * q);
    CHECK(var == doctest::Approx(exact).epsilon(0.03));
    CHECK(exact == doctest::Approx(cfg.tau / (cfg.lambda * 2.0)).epsilon(0.01));
}

TEST_CASE("particle flow converges at fourth order") {
    const std::size_t d = 4;
    AnisotropicGaussians data(d, 0.5, 0.5);
    TruncatedReluDot act(0.0, 1.0, 0.0, 1.0);
    const auto est = PopulationEstimator::gauss_hermite(data, 41);
    InitSpec spec;
    spec.kind = InitSpec::Kind::Uniform;
    const Ensemble init = init_sample(spec, 6, d, CoefficientMode::General, 8);
    DynamicsConfig cfg;
    cfg.mode = CoefficientMode::General;
    cfg.T = 1.0;
    cfg.eps = 0.2;
    const auto sched = StepSchedule::constant(0.5);
    auto run = [&](double h) {
        DynamicsConfig c = cfg;
        c.h_ode = h;
        c.snapshot_every = 5;
        return pd_integrate(init, c, sched, est, act).final_theta;
    };
    const Eigen::MatrixXd ref = run(0.2 / 64);
    const double e1 = (run(0.2 / 2) - ref).norm();
    const double e2 = (run(0.2 / 4) - ref).norm();
    const double e3 = (run(0.2 / 8) - ref).norm();
    CHECK(e1 / e2 > 10.0);
    CHECK(e2 / e3 > 10.0);
}

TEST_CASE("particle flow does not increase the risk") {
    Small s;
    const Ensemble init = init_sample(InitSpec{}, 30, s.d, CoefficientMode::Fixed, 3);
    DynamicsConfig cfg;
    cfg.eps = 0.05;
    cfg.h_ode = 0.025;
    cfg.T = 2.0;
    cfg.record_population_risk = false;
    const auto rec = pd_integrate(init, cfg, StepSchedule::exp_decay(1.0, 0.5), s.est, s.act);
    const auto r = rec.column("risk_particles");
    for (std::size_t k = 1; k < r.size(); ++k) CHECK(r[k] <= r[k - 1] + 1e-8 * cfg.eps);
    CHECK(r.back() < r.front());
}

TEST_CASE("results do not depend on the thread count") {
    const std::size_t d = 6;
    AnisotropicGaussians data(d, 0.5, 0.5);
    TruncatedReluDot act(0.0, 1.0, 0.0, 1.0);
    const auto est = PopulationEstimator::monte_carlo(data, 512, 2);
    InitSpec spec;
    spec.kind = InitSpec::Kind::Uniform;
    const Ensemble init = init_sample(spec, 300, d, CoefficientMode::General, 2);
    DynamicsConfig cfg;
    cfg.mode = CoefficientMode::General;
    cfg.eps = 0.05;
    cfg.T = 0.5;
    cfg.tau = 0.1;
    cfg.lambda = 0.1;
    cfg.h_ode = 0.025;
    cfg.keep_states = true;
    const std::vector<DynamicsKind> kinds{DynamicsKind::NoisySgd, DynamicsKind::NoisyGd, DynamicsKind::LangevinPd};
    const std::size_t saved = num_threads();
    set_num_threads(1);
    const auto a = coupled_run(init, kinds, cfg, StepSchedule::constant(0.5), data, est, act);
    set_num_threads(4);
    const auto b = coupled_run(init, kinds, cfg, StepSchedule::constant(0.5), data, est, act);
    set_num_threads(saved);
    CHECK(a.combined.rows == b.combined.rows);
    for (std::size_t k = 0; k < a.runs.size(); ++k) CHECK(a.runs[k].final_theta == b.runs[k].final_theta);
}

TEST_CASE("configuration errors and divergence") {
    DynamicsConfig cfg;
    cfg.eps = 0.01;
    cfg.h_ode = 0.003;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.h_ode = 0.02;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.h_ode = 0.0025;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.substeps() == 4);
    cfg.T = 0.001;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(StepSchedule::constant(-1.0).validate(), ConfigError);
    CHECK(StepSchedule::exp_decay(2.0, 0.5)(2.0) == doctest::Approx(2.0 * std::exp(-1.0)));
    CHECK(parse_dynamics_kind("langevin-pd") == DynamicsKind::LangevinPd);
    CHECK_THROWS_AS(parse_dynamics_kind("adam"), ConfigError);

    Small s;
    InitSpec spec;
    spec.kind = InitSpec::Kind::Uniform;
    const Ensemble init = init_sample(spec, 4, s.d, CoefficientMode::General, 1, 1e6);
    DynamicsConfig big;
    big.mode = CoefficientMode::General;
    big.eps = 1.0;
    big.T = 50.0;
    big.snapshot_every = 50;
    CHECK_THROWS_AS(gd_run(init, big, StepSchedule::constant(1.0), s.est, s.act), DivergenceError);
}
