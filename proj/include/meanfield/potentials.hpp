#pragma once

#include "meanfield/estimator.hpp"
#include "meanfield/model.hpp"

#include <Eigen/Dense>

namespace meanfield {

using VecRef = Eigen::Ref<const Eigen::VectorXd>;

// sigma_star(x; theta) = a sigma(x; w) and its theta-gradient.

double sigma_star(const Parameter& theta, const VecRef& x, const ActivationModel& model);

/// (sigma(x,w), a grad_w sigma(x,w)) in general mode; (0, grad_w sigma(x,w))
/// in fixed mode, so the a-slot is never moved.
Eigen::VectorXd grad_sigma_star(const Parameter& theta, const VecRef& x, const ActivationModel& model,
                                CoefficientMode mode);

// Potentials of the lifted risk. v and u act on weights; V and U on full
// parameters (V = a v, U = a1 a2 u).

double potential_v(const VecRef& w, const PopulationEstimator& est, const ActivationModel& model);
double potential_u(const VecRef& w1, const VecRef& w2, const PopulationEstimator& est, const ActivationModel& model);
double potential_V(const Parameter& theta, const PopulationEstimator& est, const ActivationModel& model);
double potential_U(const Parameter& theta1, const Parameter& theta2, const PopulationEstimator& est,
                   const ActivationModel& model);

Eigen::VectorXd grad_v(const VecRef& w, const PopulationEstimator& est, const ActivationModel& model);
/// Gradient of u in its first argument.
Eigen::VectorXd grad1_u(const VecRef& w1, const VecRef& w2, const PopulationEstimator& est,
                        const ActivationModel& model);

/// (v(w), a grad v(w)); a-slot reported as 0 in fixed mode.
Eigen::VectorXd grad_V(const Parameter& theta, const PopulationEstimator& est, const ActivationModel& model,
                       CoefficientMode mode);
/// (a2 u(w1,w2), a1 a2 grad1 u(w1,w2)); a-slot reported as 0 in fixed mode.
Eigen::VectorXd grad1_U(const Parameter& theta1, const Parameter& theta2, const PopulationEstimator& est,
                        const ActivationModel& model, CoefficientMode mode);

/// f_hat(x) = (alpha / N) sum_i a_i sigma(x; w_i). Each term is formed as
/// (alpha a_i) sigma_i and the terms are summed order-independently, so the
/// result is invariant under particle permutations and exactly 0 for
/// antithetic ensembles.
double predict(const Ensemble& ens, const VecRef& x, const ActivationModel& model);
/// predict() for every column of `points` (d x n).
Eigen::VectorXd predict_batch(const Ensemble& ens, const Eigen::MatrixXd& points, const ActivationModel& model);

/// Three-term decomposition E y^2 + (2 alpha/N) sum V + (alpha^2/N^2) sum sum U
/// on the estimator's frozen set (or quadrature).
double risk_particles(const Ensemble& ens, const PopulationEstimator& est, const ActivationModel& model);

/// Pieces of the decomposition, unscaled:
///   risk = mean_y2 + (2 alpha/N) sum_V + (alpha^2/N^2) sum_U.
/// sum_U_diag is sum_i U(theta_i, theta_i).
struct RiskTerms {
    double mean_y2 = 0.0;
    double sum_V = 0.0;
    double sum_U = 0.0;
    double sum_U_diag = 0.0;
    double max_U_diag = 0.0;
    std::size_t n_particles = 0;
    double alpha = 1.0;

    double risk() const;
};

RiskTerms risk_terms(const Ensemble& ens, const PopulationEstimator& est, const ActivationModel& model);

/// Direct squared-residual form; Monte Carlo estimators only.
double risk_population_mc(const Ensemble& ens, const PopulationEstimator& est, const ActivationModel& model);

/// G(theta_i; rho_hat) = E[(y - f_hat_alpha(x)) grad sigma_star(x; theta_i)]
///                     = -grad V(theta_i) - (alpha/N) sum_j grad_1 U(theta_i, theta_j)
/// for every particle (columns of the returned D x N matrix).
struct ForceField {
    Eigen::MatrixXd force;
    /// y_k - f_hat(x_k) on the sample set (empty for Gauss-Hermite).
    Eigen::VectorXd residual;
};

ForceField mean_field_force(const Eigen::MatrixXd& theta, CoefficientMode mode, double scale_alpha,
                            const PopulationEstimator& est, const ActivationModel& model);

/// Same quantity by direct summation of grad_V and grad1_U over all pairs.
/// O(N^2); used as an independent route in tests and for Gauss-Hermite.
Eigen::MatrixXd mean_field_force_direct(const Ensemble& ens, const PopulationEstimator& est,
                                        const ActivationModel& model);

/// Requires a dot-product activation; throws UnsupportedError otherwise.
const DotProductActivation& require_dot_product(const ActivationModel& model);

}  // namespace meanfield
