#include "doctest.h"

#include "meanfield/kernel.hpp"
#include "meanfield/potentials.hpp"

#include <cmath>
#include <random>

using namespace meanfield;

namespace {

/// exp(-H t / n) y by its Taylor series.
Eigen::VectorXd series_residual(const Eigen::MatrixXd& H, const Eigen::VectorXd& y, double t, int terms) {
    const Eigen::MatrixXd A = -H * (t / static_cast<double>(H.rows()));
    Eigen::VectorXd term = y, sum = y;
    for (int k = 1; k < terms; ++k) {
        term = A * term / static_cast<double>(k);
        sum += term;
    }
    return sum;
}

struct Fixture {
    TruncatedReluDot act{-0.5, 1.0, -0.5, 1.0};
    EmpiricalDataset data;
    Ensemble ens;
    Fixture(std::size_t n, std::size_t d, std::size_t np, std::uint64_t seed)
        : data(make_regression_data(n, d, seed)), ens(sample(np, d, seed)) {}
    static Ensemble sample(std::size_t np, std::size_t d, std::uint64_t seed) {
        InitSpec spec;
        spec.kind = InitSpec::Kind::Antithetic;
        return init_sample(spec, np, d, CoefficientMode::General, seed);
    }
};

}  // namespace

TEST_CASE("kernel entries are averaged gradient inner products") {
    Fixture f(5, 3, 40, 1);
    const KernelMatrix H = kernel_matrix(f.ens, f.data.points(), f.act);
    for (Eigen::Index a = 0; a < 5; ++a) {
        for (Eigen::Index b = 0; b < 5; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < f.ens.size(); ++i) {
                const Parameter p = f.ens.particle(i);
                s += grad_sigma_star(p, f.data.points().col(a), f.act, CoefficientMode::General)
                         .dot(grad_sigma_star(p, f.data.points().col(b), f.act, CoefficientMode::General));
            }
            CHECK(H.matrix()(a, b) == doctest::Approx(s / 40.0).epsilon(1e-13));
        }
    }
    CHECK(H.matrix() == H.matrix().transpose());
    CHECK(H.lambda_min() >= -1e-12);
    const Eigen::VectorXd h = h_vector(f.ens, f.data.points().col(2), f.data.points(), f.act);
    CHECK((h - H.matrix().col(2)).norm() < 1e-14);
}

TEST_CASE("linearized residual matches the exponential series") {
    std::mt19937_64 gen(4);
    std::normal_distribution<double> g;
    for (int rep = 0; rep < 10; ++rep) {
        Eigen::MatrixXd B(2, 2);
        B << g(gen), g(gen), g(gen), g(gen);
        Eigen::MatrixXd H = B * B.transpose();
        H *= 4.0 / H.trace();  // keeps the series well inside its fast-convergence range
        const Eigen::VectorXd y = Eigen::Vector2d(g(gen), g(gen));
        const KernelMatrix K(H);
        for (double t : {0.1, 0.5, 1.0}) {
            const Eigen::VectorXd a = linearized_residual(K, y, t);
            const Eigen::VectorXd b = series_residual(H, y, t, 40);
            CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-10);
        }
    }
}

TEST_CASE("linearized residual norm decreases in time") {
    Fixture f(12, 3, 100, 2);
    const KernelMatrix H = kernel_matrix(f.ens, f.data.points(), f.act);
    double prev = INFINITY;
    for (int k = 0; k < 20; ++k) {
        const double nrm = linearized_residual(H, f.data.labels(), 0.5 * k).norm();
        CHECK(nrm <= prev);
        prev = nrm;
    }
}

TEST_CASE("kernel ridge limit interpolates the training set") {
    Fixture f(6, 3, 200, 3);
    const KernelMatrix H = kernel_matrix(f.ens, f.data.points(), f.act);
    REQUIRE(H.lambda_min() > 1e3 * H.jitter_floor());
    const KrrSolve s = krr_solve(H, f.data.labels());
    CHECK(s.method == KrrSolve::Method::Direct);
    for (Eigen::Index j = 0; j < 6; ++j) {
        const auto p = krr_limit_predict(f.ens, f.data, f.data.points().col(j), f.act);
        CHECK(std::abs(p.value - f.data.labels()(j)) <= 1e-8);
    }
    // the long-time linearized prediction tends to the ridge limit
    const Eigen::VectorXd hz = h_vector(f.ens, Eigen::Vector3d(0.3, -0.2, 0.9), f.data.points(), f.act);
    const double tlong = 1e3 * 6.0 / H.lambda_min();
    CHECK(linearized_prediction(H, hz, f.data.labels(), tlong) == doctest::Approx(hz.dot(s.coeffs)).epsilon(1e-9));
}

TEST_CASE("integrated linearized prediction against the closed form") {
    Fixture f(4, 2, 200, 5);
    const KernelMatrix H = kernel_matrix(f.ens, f.data.points(), f.act);
    for (int z = 0; z < 3; ++z) {
        const Eigen::VectorXd zp = make_regression_data(3, 2, 50).points().col(z);
        const Eigen::VectorXd hz = h_vector(f.ens, zp, f.data.points(), f.act);
        for (double T : {1.0, 50.0}) {
            const double a = integrate_linearized_prediction(H.matrix(), hz, f.data.labels(), T,
                                                             static_cast<std::size_t>(T / 0.01));
            CHECK(std::abs(a - linearized_prediction(H, hz, f.data.labels(), T)) <= 1e-6);
        }
    }
}

TEST_CASE("singular kernels take the fallback paths") {
    Eigen::MatrixXd H(3, 3);
    H << 1, 1, 0, 1, 1, 0, 0, 0, 2;
    const KernelMatrix K(H);
    CHECK(K.null_space_dim() == 1);
    const Eigen::Vector3d y(1.0, -1.0, 0.5);
    const KrrSolve s = krr_solve(K, y);
    CHECK(s.method == KrrSolve::Method::Jitter);
    CHECK(s.jitter == doctest::Approx(K.jitter_floor()));
    CHECK_FALSE(s.warning);

    // null direction (1,-1,0)/sqrt2 grows linearly
    const Eigen::Vector3d h(1.0, -1.0, 0.0);
    const double t = 2.0;
    CHECK(linearized_prediction(K, h, y, t) == doctest::Approx(2.0 * t / 3.0).epsilon(1e-12));
    CHECK(integrate_linearized_prediction(H, h, y, t, 200) == doctest::Approx(2.0 * t / 3.0).epsilon(1e-10));

    Eigen::MatrixXd bad(2, 2);
    bad << 2, 0, 0, -1;
    const KrrSolve p = krr_solve(KernelMatrix(bad), Eigen::Vector2d(1, 1));
    CHECK(p.method == KrrSolve::Method::PseudoInverse);
    CHECK(p.warning);
    CHECK(p.coeffs.isApprox(Eigen::Vector2d(0.5, 0)));
}

TEST_CASE("rescaled flow approaches the linearization as alpha grows") {
    CrossoverConfig c;
    c.alpha_grid = {4, 16};
    c.n_points = 8;
    c.d = 3;
    c.n_particles = 200;
    c.T = 0.5;
    c.h_ode = 0.05;
    c.snapshot_every = 2;
    const TruncatedReluDot act(0.0, 1.0, 0.0, 1.0);
    const CrossoverResult r = kernel_crossover_experiment(c, act);
    REQUIRE(r.sup_gap.size() == 2);
    CHECK(r.sup_gap[1] < r.sup_gap[0]);
    CHECK(r.rows.size() == 2 * 6);
}
