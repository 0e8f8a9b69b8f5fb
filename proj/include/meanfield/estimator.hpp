#pragma once

#include "meanfield/data.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>

namespace meanfield {

struct QuadratureRule {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};

/// Standard normal weight: sum_k weights[k] f(nodes[k]) ~ E f(G). Golub-Welsch
/// construction; nodes ascending, weights sum to 1.
QuadratureRule gauss_hermite_rule(int n_nodes);
/// Unit weight on [-1, 1]; weights sum to 2.
QuadratureRule gauss_legendre_rule(int n_nodes);

enum class EstimatorStrategy { MonteCarlo, GaussHermite };

/// Frozen quadrature for E_{y,x}[.]: either a fixed sample set drawn once and
/// reused for every evaluation (common random numbers), or deterministic
/// Gaussian integrals over the projections of a Gaussian-mixture data model.
///
/// The Gaussian route integrates one projection in closed form against the
/// activation and the other with an n_nodes Gauss-Legendre rule on every
/// kink-free piece, so piecewise-linear activations are integrated to
/// near machine precision (a plain tensor Gauss-Hermite rule is not).
class PopulationEstimator {
public:
    /// Class-balanced for AnisotropicGaussians (labels alternate +1, -1, so
    /// n_mc must be even there).
    static PopulationEstimator monte_carlo(const DataModel& data, std::size_t n_mc, std::uint64_t seed);
    /// The data set itself as the sample set: expectations are exact finite sums.
    static PopulationEstimator exact_empirical(const EmpiricalDataset& data);
    static PopulationEstimator gauss_hermite(const DataModel& data, int n_nodes = 41);

    EstimatorStrategy strategy() const { return strategy_; }
    std::size_t dim() const { return dim_; }

    // Sample-set access (MonteCarlo only).
    const Eigen::MatrixXd& points() const;
    const Eigen::VectorXd& labels() const;
    std::size_t size() const { return static_cast<std::size_t>(labels_.size()); }

    // Gaussian-route access.
    struct MixtureComponent {
        double probability;
        double label;
        Eigen::MatrixXd covariance;
    };
    /// Gauss-Legendre rule applied on each smooth piece.
    const QuadratureRule& rule() const;
    const std::array<MixtureComponent, 2>& components() const { return components_; }

    /// E y^2 under the estimator (sample mean for MonteCarlo).
    double mean_y_squared() const { return mean_y2_; }

private:
    PopulationEstimator() = default;

    EstimatorStrategy strategy_ = EstimatorStrategy::MonteCarlo;
    std::size_t dim_ = 0;
    Eigen::MatrixXd points_;
    Eigen::VectorXd labels_;
    QuadratureRule rule_;
    std::array<MixtureComponent, 2> components_{};
    double mean_y2_ = 0.0;
};

}  // namespace meanfield
