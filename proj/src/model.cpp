#include "meanfield/model.hpp"

#include "meanfield/errors.hpp"
#include "meanfield/estimator.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace meanfield {

const char* to_string(CoefficientMode mode) { return mode == CoefficientMode::Fixed ? "fixed" : "general"; }

Ensemble::Ensemble(Eigen::MatrixXd theta, CoefficientMode mode, double scale_alpha)
    : theta_(std::move(theta)), mode_(mode), scale_alpha_(scale_alpha) {
    if (theta_.cols() < 1) throw ConfigError("ensemble needs at least one particle");
    if (theta_.rows() < 2) throw ConfigError("particles need a weight vector of length >= 1");
    if (!(scale_alpha_ > 0.0) || !std::isfinite(scale_alpha_)) throw ConfigError("scale_alpha must be > 0");
    if (!theta_.allFinite()) throw ConfigError("ensemble has non-finite entries");
    if (mode_ == CoefficientMode::Fixed && (theta_.row(0).array() != 1.0).any())
        throw ConfigError("fixed-coefficient ensemble requires a = 1 for every particle");
}

Ensemble Ensemble::from_parameters(std::span<const Parameter> particles, CoefficientMode mode,
                                   double scale_alpha) {
    if (particles.empty()) throw ConfigError("ensemble needs at least one particle");
    const auto d = particles.front().w.size();
    Eigen::MatrixXd theta(d + 1, static_cast<Eigen::Index>(particles.size()));
    for (std::size_t i = 0; i < particles.size(); ++i) {
        if (particles[i].w.size() != d) throw ConfigError("particles must share the same weight dimension");
        theta(0, static_cast<Eigen::Index>(i)) = particles[i].a;
        theta.col(static_cast<Eigen::Index>(i)).tail(d) = particles[i].w;
    }
    return Ensemble(std::move(theta), mode, scale_alpha);
}

Parameter Ensemble::particle(std::size_t i) const { return Parameter{a(i), w(i)}; }

double DotProductActivation::sigma(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const Eigen::Ref<const Eigen::VectorXd>& w) const {
    check_dims(static_cast<std::size_t>(w.size()), static_cast<std::size_t>(x.size()));
    return value(w.dot(x));
}

Eigen::VectorXd DotProductActivation::grad_w_sigma(const Eigen::Ref<const Eigen::VectorXd>& x,
                                                   const Eigen::Ref<const Eigen::VectorXd>& w) const {
    check_dims(static_cast<std::size_t>(w.size()), static_cast<std::size_t>(x.size()));
    return slope(w.dot(x)) * x;
}

TruncatedReluDot::TruncatedReluDot(double s1, double s2, double t1, double t2)
    : s1_(s1), s2_(s2), t1_(t1), t2_(t2) {
    if (!(t1 < t2)) throw ConfigError("truncated ReLU requires t1 < t2", "model.activation.t1 < t2");
    if (!std::isfinite(s1) || !std::isfinite(s2) || !std::isfinite(t1) || !std::isfinite(t2))
        throw ConfigError("truncated ReLU parameters must be finite", "model.activation");
    slope_ = (s2 - s1) / (t2 - t1);
}

void DotProductActivation::evaluate(const double* t, double* value, double* slope, std::size_t n) const {
    if (value)
        for (std::size_t k = 0; k < n; ++k) value[k] = this->value(t[k]);
    if (slope)
        for (std::size_t k = 0; k < n; ++k) slope[k] = this->slope(t[k]);
}

void TruncatedReluDot::evaluate(const double* t, double* value, double* slope, std::size_t n) const {
    if (value)
        for (std::size_t k = 0; k < n; ++k) value[k] = TruncatedReluDot::value(t[k]);
    if (slope)
        for (std::size_t k = 0; k < n; ++k) slope[k] = TruncatedReluDot::slope(t[k]);
}

DotProductActivation::GaussianMoments DotProductActivation::gaussian_moments(double mu, double s) const {
    static const QuadratureRule rule = gauss_hermite_rule(96);
    GaussianMoments m;
    for (Eigen::Index k = 0; k < rule.nodes.size(); ++k) {
        const double g = rule.nodes(k);
        const double d = slope(mu + s * g);
        m.value += rule.weights(k) * value(mu + s * g);
        m.slope += rule.weights(k) * d;
        m.slope_g += rule.weights(k) * d * g;
    }
    return m;
}

namespace {

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

DotProductActivation::GaussianMoments TruncatedReluDot::gaussian_moments(double mu, double s) const {
    GaussianMoments m;
    if (!(s > 0.0)) {
        m.value = value(mu);
        m.slope = slope(mu);
        return m;
    }
    const double a = (t1_ - mu) / s;
    const double b = (t2_ - mu) / s;
    // P(a <= G < b) without cancellation in either tail
    const double inside = a > 0.0 ? normal_cdf(-a) - normal_cdf(-b) : normal_cdf(b) - normal_cdf(a);
    const double pa = normal_pdf(a), pb = normal_pdf(b);
    // E clip(X, t1, t2) - t1 = (t2 - t1) P(G >= b) + (mu - t1) P(a <= G < b) + s (pdf(a) - pdf(b))
    const double clipped = (t2_ - t1_) * normal_cdf(-b) + (mu - t1_) * inside + s * (pa - pb);
    m.value = s1_ + slope_ * clipped;
    m.slope = slope_ * inside;
    m.slope_g = slope_ * (pa - pb);
    return m;
}

double TruncatedReluDot::bound() const { return std::max(std::abs(s1_), std::abs(s2_)); }

void check_dims(std::size_t weight_dim, std::size_t data_dim) {
    if (weight_dim != data_dim)
        throw ConfigError("dimension mismatch: weight length " + std::to_string(weight_dim) + " vs data length " +
                          std::to_string(data_dim));
}

}  // namespace meanfield
