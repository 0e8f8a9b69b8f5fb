#pragma once

#include "meanfield/data.hpp"
#include "meanfield/dynamics.hpp"
#include "meanfield/estimator.hpp"
#include "meanfield/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

namespace fixtures {

using namespace meanfield;

inline Eigen::MatrixXd random_theta(std::size_t d, std::size_t n, CoefficientMode mode, std::mt19937_64& gen,
                                    double w_sd = 0.7) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd theta(static_cast<Eigen::Index>(d + 1), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < theta.cols(); ++i) {
        theta(0, i) = mode == CoefficientMode::Fixed ? 1.0 : g(gen);
        for (Eigen::Index j = 1; j < theta.rows(); ++j) theta(j, i) = w_sd * g(gen);
    }
    return theta;
}

/// Distance from every sample projection to the nearest kink, scaled by |x|.
inline double kink_clearance(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& x, const TruncatedReluDot& act) {
    double best = INFINITY;
    const Eigen::MatrixXd proj = x.transpose() * theta.bottomRows(theta.rows() - 1);
    for (Eigen::Index k = 0; k < proj.rows(); ++k) {
        const double nx = x.col(k).norm();
        for (Eigen::Index i = 0; i < proj.cols(); ++i)
            best = std::min(best, std::min(std::abs(proj(k, i) - act.t1()), std::abs(proj(k, i) - act.t2())) / nx);
    }
    return best;
}

/// Risk as the plain mean of squared residuals, computed without the library.
inline double brute_risk(const Eigen::MatrixXd& theta, double alpha, const Eigen::MatrixXd& x,
                         const Eigen::VectorXd& y, const TruncatedReluDot& act) {
    long double total = 0.0L;
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        long double f = 0.0L;
        for (Eigen::Index i = 0; i < theta.cols(); ++i)
            f += theta(0, i) * act.value(theta.col(i).tail(theta.rows() - 1).dot(x.col(k)));
        f *= alpha / static_cast<long double>(theta.cols());
        total += (y(k) - f) * (y(k) - f);
    }
    return static_cast<double>(total / x.cols());
}

}  // namespace fixtures
