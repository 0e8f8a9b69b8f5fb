#pragma once

#include "meanfield/rng.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>

namespace meanfield {

class AnisotropicGaussians;

/// Joint law of (x, y).
class DataModel {
public:
    virtual ~DataModel() = default;

    virtual std::size_t dim() const = 0;
    /// Writes one draw into x (length dim()) and returns the label. Consumes
    /// exactly draws_per_sample() counters from rng.
    virtual double sample(CounterRng& rng, Eigen::Ref<Eigen::VectorXd> x) const = 0;
    virtual std::uint64_t draws_per_sample() const = 0;
    /// sup |y|.
    virtual double label_bound() const = 0;

    virtual const AnisotropicGaussians* as_gaussian_mixture() const { return nullptr; }
};

/// y = +1 or -1 with probability 1/2; x | y ~ N(0, Sigma_y) with
///   Sigma_(+/-) = U^T diag((1 +/- delta)^2 I_s0, I_(d-s0)) U,  s0 = round(gamma d).
class AnisotropicGaussians final : public DataModel {
public:
    AnisotropicGaussians(std::size_t d, double gamma, double delta, Eigen::MatrixXd rotation);
    /// Identity rotation.
    AnisotropicGaussians(std::size_t d, double gamma, double delta);

    /// Haar-distributed orthogonal matrix from the Rotation stream of `seed`.
    static Eigen::MatrixXd random_rotation(std::size_t d, std::uint64_t seed);

    std::size_t dim() const override { return d_; }
    double sample(CounterRng& rng, Eigen::Ref<Eigen::VectorXd> x) const override;
    std::uint64_t draws_per_sample() const override { return 1 + 2 * d_; }
    double label_bound() const override { return 1.0; }
    const AnisotropicGaussians* as_gaussian_mixture() const override { return this; }

    /// Draw x conditioned on the label (+1 or -1); consumes 2 d counters.
    void sample_class(double label, CounterRng& rng, Eigen::Ref<Eigen::VectorXd> x) const;

    const Eigen::MatrixXd& covariance(double label) const { return label > 0 ? cov_plus_ : cov_minus_; }
    const Eigen::MatrixXd& rotation() const { return rotation_; }
    std::size_t informative_dim() const { return s0_; }
    double gamma() const { return gamma_; }
    double delta() const { return delta_; }

private:
    std::size_t d_;
    double gamma_;
    double delta_;
    std::size_t s0_;
    Eigen::MatrixXd rotation_;
    Eigen::MatrixXd cov_plus_;
    Eigen::MatrixXd cov_minus_;
};

/// Finite data set; sampling picks a uniform index (with replacement).
class EmpiricalDataset final : public DataModel {
public:
    /// points: d x n, labels: n.
    EmpiricalDataset(Eigen::MatrixXd points, Eigen::VectorXd labels);

    std::size_t dim() const override { return static_cast<std::size_t>(points_.rows()); }
    std::size_t size() const { return static_cast<std::size_t>(points_.cols()); }
    double sample(CounterRng& rng, Eigen::Ref<Eigen::VectorXd> x) const override;
    std::uint64_t draws_per_sample() const override { return 1; }
    double label_bound() const override { return label_bound_; }

    const Eigen::MatrixXd& points() const { return points_; }
    const Eigen::VectorXd& labels() const { return labels_; }

private:
    Eigen::MatrixXd points_;
    Eigen::VectorXd labels_;
    double label_bound_;
};

}  // namespace meanfield
