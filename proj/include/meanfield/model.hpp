#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace meanfield {

enum class CoefficientMode { Fixed, General };

const char* to_string(CoefficientMode mode);

/// One neuron: second-layer coefficient a and first-layer weight w.
struct Parameter {
    double a = 1.0;
    Eigen::VectorXd w;
};

/// N particles stored column-wise in a D x N matrix; column i is (a_i, w_i).
/// Doubles as the empirical measure of the particles. Immutable once built.
class Ensemble {
public:
    Ensemble(Eigen::MatrixXd theta, CoefficientMode mode, double scale_alpha = 1.0);

    static Ensemble from_parameters(std::span<const Parameter> particles, CoefficientMode mode,
                                    double scale_alpha = 1.0);

    std::size_t size() const { return static_cast<std::size_t>(theta_.cols()); }
    /// D = 1 + weight dimension.
    std::size_t dim() const { return static_cast<std::size_t>(theta_.rows()); }
    std::size_t weight_dim() const { return dim() - 1; }

    double a(std::size_t i) const { return theta_(0, static_cast<Eigen::Index>(i)); }
    auto w(std::size_t i) const { return theta_.col(static_cast<Eigen::Index>(i)).tail(theta_.rows() - 1); }
    Parameter particle(std::size_t i) const;

    auto coefficients() const { return theta_.row(0); }
    auto weights() const { return theta_.bottomRows(theta_.rows() - 1); }

    const Eigen::MatrixXd& theta() const { return theta_; }
    CoefficientMode mode() const { return mode_; }
    double scale_alpha() const { return scale_alpha_; }

    /// Same mode and scale, new particle positions.
    Ensemble with_theta(Eigen::MatrixXd theta) const { return Ensemble(std::move(theta), mode_, scale_alpha_); }
    Ensemble with_scale(double scale_alpha) const { return Ensemble(theta_, mode_, scale_alpha); }

private:
    Eigen::MatrixXd theta_;
    CoefficientMode mode_;
    double scale_alpha_;
};

class DotProductActivation;

/// sigma(x; w) together with its w-gradient.
class ActivationModel {
public:
    virtual ~ActivationModel() = default;

    virtual double sigma(const Eigen::Ref<const Eigen::VectorXd>& x,
                         const Eigen::Ref<const Eigen::VectorXd>& w) const = 0;
    virtual Eigen::VectorXd grad_w_sigma(const Eigen::Ref<const Eigen::VectorXd>& x,
                                         const Eigen::Ref<const Eigen::VectorXd>& w) const = 0;
    /// sup |sigma|.
    virtual double bound() const = 0;

    /// Non-null when sigma(x; w) depends on x only through <w, x>; the
    /// vectorized kernels and Gauss-Hermite estimators require this.
    virtual const DotProductActivation* as_dot_product() const { return nullptr; }
};

class DotProductActivation : public ActivationModel {
public:
    virtual double value(double t) const = 0;
    /// Derivative of value(t); right-derivative at kinks.
    virtual double slope(double t) const = 0;
    /// Elementwise value and slope over n projections; either output may be null.
    virtual void evaluate(const double* t, double* value, double* slope, std::size_t n) const;

    /// Points where value() is not smooth.
    virtual std::vector<double> kinks() const { return {}; }

    /// E value(X), E slope(X) and E slope(X) G for X = mu + s G, G ~ N(0, 1).
    struct GaussianMoments {
        double value = 0.0;
        double slope = 0.0;
        double slope_g = 0.0;
    };
    /// The default uses a 96-node Gauss-Hermite rule, adequate for smooth activations only.
    virtual GaussianMoments gaussian_moments(double mu, double s) const;

    double sigma(const Eigen::Ref<const Eigen::VectorXd>& x,
                 const Eigen::Ref<const Eigen::VectorXd>& w) const override;
    Eigen::VectorXd grad_w_sigma(const Eigen::Ref<const Eigen::VectorXd>& x,
                                 const Eigen::Ref<const Eigen::VectorXd>& w) const override;
    const DotProductActivation* as_dot_product() const override { return this; }
};

/// Piecewise-linear bounded activation applied to <w, x>:
///   s1 for t <= t1, s2 for t >= t2, linear in between.
class TruncatedReluDot final : public DotProductActivation {
public:
    TruncatedReluDot(double s1, double s2, double t1, double t2);

    double value(double t) const override {
        return s1_ + slope_ * (std::min(std::max(t, t1_), t2_) - t1_);
    }
    double slope(double t) const override { return slope_ * static_cast<double>((t >= t1_) & (t < t2_)); }
    double bound() const override;
    void evaluate(const double* t, double* value, double* slope, std::size_t n) const override;
    std::vector<double> kinks() const override { return {t1_, t2_}; }
    /// Closed form through the normal cdf.
    GaussianMoments gaussian_moments(double mu, double s) const override;

    double s1() const { return s1_; }
    double s2() const { return s2_; }
    double t1() const { return t1_; }
    double t2() const { return t2_; }

private:
    double s1_, s2_, t1_, t2_;
    double slope_;
};

/// Throws ConfigError if `w` and `x` have incompatible lengths.
void check_dims(std::size_t weight_dim, std::size_t data_dim);

}  // namespace meanfield
