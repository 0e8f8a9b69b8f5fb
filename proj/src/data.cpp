#include "meanfield/data.hpp"

#include "meanfield/errors.hpp"

#include <cmath>

namespace meanfield {

AnisotropicGaussians::AnisotropicGaussians(std::size_t d, double gamma, double delta, Eigen::MatrixXd rotation)
    : d_(d), gamma_(gamma), delta_(delta), rotation_(std::move(rotation)) {
    if (d_ < 1) throw ConfigError("data dimension must be >= 1", "model.data.d");
    if (!(gamma_ >= 0.0 && gamma_ <= 1.0)) throw ConfigError("gamma must lie in [0, 1]", "model.data.gamma");
    if (!(delta_ >= 0.0 && delta_ < 1.0)) throw ConfigError("delta must lie in [0, 1)", "model.data.delta");
    const auto n = static_cast<Eigen::Index>(d_);
    if (rotation_.rows() != n || rotation_.cols() != n) throw ConfigError("rotation must be d x d");
    const double orth_err = (rotation_.transpose() * rotation_ - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
    if (orth_err > 1e-12) throw ConfigError("rotation is not orthogonal to 1e-12");

    s0_ = static_cast<std::size_t>(std::lround(gamma_ * static_cast<double>(d_)));
    Eigen::VectorXd diag_plus = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd diag_minus = Eigen::VectorXd::Ones(n);
    diag_plus.head(static_cast<Eigen::Index>(s0_)).setConstant((1.0 + delta_) * (1.0 + delta_));
    diag_minus.head(static_cast<Eigen::Index>(s0_)).setConstant((1.0 - delta_) * (1.0 - delta_));
    cov_plus_ = rotation_.transpose() * diag_plus.asDiagonal() * rotation_;
    cov_minus_ = rotation_.transpose() * diag_minus.asDiagonal() * rotation_;
    // exact symmetry
    cov_plus_ = 0.5 * (cov_plus_ + cov_plus_.transpose()).eval();
    cov_minus_ = 0.5 * (cov_minus_ + cov_minus_.transpose()).eval();
}

AnisotropicGaussians::AnisotropicGaussians(std::size_t d, double gamma, double delta)
    : AnisotropicGaussians(d, gamma, delta,
                           Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))) {}

Eigen::MatrixXd AnisotropicGaussians::random_rotation(std::size_t d, std::uint64_t seed) {
    const auto n = static_cast<Eigen::Index>(d);
    CounterRng rng(seed, Purpose::Rotation, 0);
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
    // sign fix makes Q Haar distributed
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    // one Gram-Schmidt polish pass keeps ||Q^T Q - I|| at rounding level
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index k = 0; k < j; ++k) q.col(j) -= q.col(k).dot(q.col(j)) * q.col(k);
        q.col(j).normalize();
    }
    return q;
}

void AnisotropicGaussians::sample_class(double label, CounterRng& rng, Eigen::Ref<Eigen::VectorXd> x) const {
    const double scale = label > 0 ? 1.0 + delta_ : 1.0 - delta_;
    Eigen::VectorXd g(static_cast<Eigen::Index>(d_));
    for (std::size_t i = 0; i < d_; ++i) g(static_cast<Eigen::Index>(i)) = (i < s0_ ? scale : 1.0) * rng.normal();
    x.noalias() = rotation_.transpose() * g;
}

double AnisotropicGaussians::sample(CounterRng& rng, Eigen::Ref<Eigen::VectorXd> x) const {
    const double y = rng.uniform() < 0.5 ? 1.0 : -1.0;
    sample_class(y, rng, x);
    return y;
}

EmpiricalDataset::EmpiricalDataset(Eigen::MatrixXd points, Eigen::VectorXd labels)
    : points_(std::move(points)), labels_(std::move(labels)) {
    if (points_.cols() < 1) throw ConfigError("empirical dataset needs at least one point");
    if (labels_.size() != points_.cols()) throw ConfigError("points and labels differ in count");
    if (!points_.allFinite() || !labels_.allFinite()) throw ConfigError("empirical dataset has non-finite entries");
    label_bound_ = labels_.cwiseAbs().maxCoeff();
}

double EmpiricalDataset::sample(CounterRng& rng, Eigen::Ref<Eigen::VectorXd> x) const {
    const auto n = static_cast<std::uint64_t>(points_.cols());
    const auto idx = static_cast<Eigen::Index>(std::min<std::uint64_t>(
        n - 1, static_cast<std::uint64_t>(rng.uniform() * static_cast<double>(n))));
    x = points_.col(idx);
    return labels_(idx);
}

}  // namespace meanfield
