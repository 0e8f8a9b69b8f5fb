#include "meanfield/estimator.hpp"

#include "meanfield/errors.hpp"
#include "meanfield/numeric.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

namespace meanfield {

QuadratureRule gauss_hermite_rule(int n_nodes) {
    if (n_nodes < 1) throw ConfigError("Gauss-Hermite needs at least one node", "estimator.n_nodes");
    const Eigen::Index n = n_nodes;
    // Jacobi matrix of the probabilists' Hermite polynomials.
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index k = 1; k < n; ++k) {
        jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
        jacobi(k - 1, k) = jacobi(k, k - 1);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    QuadratureRule rule;
    rule.nodes = eig.eigenvalues();
    rule.weights = eig.eigenvectors().row(0).array().square().transpose();
    // symmetrize: the rule is exactly symmetric about 0
    for (Eigen::Index k = 0; k < n / 2; ++k) {
        const double x = 0.5 * (rule.nodes(n - 1 - k) - rule.nodes(k));
        const double wt = 0.5 * (rule.weights(k) + rule.weights(n - 1 - k));
        rule.nodes(k) = -x;
        rule.nodes(n - 1 - k) = x;
        rule.weights(k) = wt;
        rule.weights(n - 1 - k) = wt;
    }
    if (n % 2 == 1) rule.nodes(n / 2) = 0.0;
    rule.weights /= rule.weights.sum();
    return rule;
}

QuadratureRule gauss_legendre_rule(int n_nodes) {
    if (n_nodes < 1) throw ConfigError("Gauss-Legendre needs at least one node", "estimator.n_nodes");
    const Eigen::Index n = n_nodes;
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index k = 1; k < n; ++k) {
        const double kk = static_cast<double>(k);
        jacobi(k, k - 1) = kk / std::sqrt(4.0 * kk * kk - 1.0);
        jacobi(k - 1, k) = jacobi(k, k - 1);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    QuadratureRule rule;
    rule.nodes = eig.eigenvalues();
    rule.weights = 2.0 * eig.eigenvectors().row(0).array().square().transpose();
    for (Eigen::Index k = 0; k < n / 2; ++k) {
        const double x = 0.5 * (rule.nodes(n - 1 - k) - rule.nodes(k));
        const double wt = 0.5 * (rule.weights(k) + rule.weights(n - 1 - k));
        rule.nodes(k) = -x;
        rule.nodes(n - 1 - k) = x;
        rule.weights(k) = wt;
        rule.weights(n - 1 - k) = wt;
    }
    if (n % 2 == 1) rule.nodes(n / 2) = 0.0;
    rule.weights *= 2.0 / rule.weights.sum();
    return rule;
}

PopulationEstimator PopulationEstimator::monte_carlo(const DataModel& data, std::size_t n_mc, std::uint64_t seed) {
    if (n_mc < 1) throw ConfigError("n_mc must be >= 1", "estimator.n_mc");
    PopulationEstimator est;
    est.strategy_ = EstimatorStrategy::MonteCarlo;
    est.dim_ = data.dim();
    const auto n = static_cast<Eigen::Index>(n_mc);
    est.points_.resize(static_cast<Eigen::Index>(est.dim_), n);
    est.labels_.resize(n);
    CounterRng rng(seed, Purpose::Frozen, 0);
    if (const auto* mix = data.as_gaussian_mixture()) {
        if (n_mc % 2 != 0) throw ConfigError("class-balanced Monte Carlo set needs even n_mc", "estimator.n_mc");
        for (Eigen::Index j = 0; j < n; ++j) {
            const double y = (j % 2 == 0) ? 1.0 : -1.0;
            mix->sample_class(y, rng, est.points_.col(j));
            est.labels_(j) = y;
        }
    } else {
        for (Eigen::Index j = 0; j < n; ++j) est.labels_(j) = data.sample(rng, est.points_.col(j));
    }
    const Eigen::VectorXd y2 = est.labels_.array().square();
    est.mean_y2_ = pairwise_sum({y2.data(), static_cast<std::size_t>(y2.size())}) / static_cast<double>(n_mc);
    return est;
}

PopulationEstimator PopulationEstimator::exact_empirical(const EmpiricalDataset& data) {
    PopulationEstimator est;
    est.strategy_ = EstimatorStrategy::MonteCarlo;
    est.dim_ = data.dim();
    est.points_ = data.points();
    est.labels_ = data.labels();
    const Eigen::VectorXd y2 = est.labels_.array().square();
    est.mean_y2_ =
        pairwise_sum({y2.data(), static_cast<std::size_t>(y2.size())}) / static_cast<double>(data.size());
    return est;
}

PopulationEstimator PopulationEstimator::gauss_hermite(const DataModel& data, int n_nodes) {
    const auto* mix = data.as_gaussian_mixture();
    if (mix == nullptr)
        throw UnsupportedError("Gauss-Hermite estimator requires Gaussian-mixture data (AnisotropicGaussians)");
    PopulationEstimator est;
    est.strategy_ = EstimatorStrategy::GaussHermite;
    est.dim_ = data.dim();
    est.rule_ = gauss_legendre_rule(n_nodes);
    est.components_ = {MixtureComponent{0.5, 1.0, mix->covariance(1.0)},
                       MixtureComponent{0.5, -1.0, mix->covariance(-1.0)}};
    est.mean_y2_ = 1.0;
    return est;
}

const Eigen::MatrixXd& PopulationEstimator::points() const {
    if (strategy_ != EstimatorStrategy::MonteCarlo) throw UnsupportedError("Gauss-Hermite estimator has no sample set");
    return points_;
}

const Eigen::VectorXd& PopulationEstimator::labels() const {
    if (strategy_ != EstimatorStrategy::MonteCarlo) throw UnsupportedError("Gauss-Hermite estimator has no sample set");
    return labels_;
}

const QuadratureRule& PopulationEstimator::rule() const {
    if (strategy_ != EstimatorStrategy::GaussHermite) throw UnsupportedError("Monte Carlo estimator has no quadrature rule");
    return rule_;
}

}  // namespace meanfield
