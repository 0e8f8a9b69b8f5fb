#pragma once

#include "meanfield/data.hpp"
#include "meanfield/dynamics.hpp"
#include "meanfield/model.hpp"
#include "meanfield/numeric.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace meanfield {

/// H(x, z) = (1/N) sum_i <grad sigma_star(x; theta_i), grad sigma_star(z; theta_i)>.
double kernel_eval(const Ensemble& ens, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& z, const ActivationModel& model);

/// Gram matrix on a data set with its symmetric eigendecomposition.
class KernelMatrix {
public:
    explicit KernelMatrix(Eigen::MatrixXd H);

    const Eigen::MatrixXd& matrix() const { return H_; }
    Eigen::Index size() const { return H_.rows(); }
    /// Ascending.
    const Eigen::VectorXd& eigenvalues() const { return values_; }
    const Eigen::MatrixXd& eigenvectors() const { return vectors_; }
    double lambda_min() const { return values_(0); }
    double lambda_max() const { return values_(values_.size() - 1); }
    double trace() const { return H_.trace(); }
    /// 1e-10 trace / n: the first jitter level and the null-space floor.
    double jitter_floor() const { return 1e-10 * trace() / static_cast<double>(size()); }
    /// Eigenvalues below jitter_floor().
    Eigen::Index null_space_dim() const;

private:
    Eigen::MatrixXd H_;
    Eigen::VectorXd values_;
    Eigen::MatrixXd vectors_;
};

/// Upper triangle by kernel_eval, mirrored.
KernelMatrix kernel_matrix(const Ensemble& ens, const Eigen::MatrixXd& points, const ActivationModel& model);
/// [H(z, x_1), ..., H(z, x_n)].
Eigen::VectorXd h_vector(const Ensemble& ens, const Eigen::Ref<const Eigen::VectorXd>& z,
                         const Eigen::MatrixXd& points, const ActivationModel& model);

/// u*_t = exp(-H t / n) y.
Eigen::VectorXd linearized_residual(const KernelMatrix& H, const Eigen::VectorXd& y, double t);

/// h^T H^{-1} (I - exp(-H t / n)) y; null-space directions contribute h^T q q^T y t / n.
double linearized_prediction(const KernelMatrix& H, const Eigen::VectorXd& h, const Eigen::VectorXd& y, double t);

struct KrrSolve {
    enum class Method { Direct, Jitter, PseudoInverse };
    Eigen::VectorXd coeffs;
    Method method = Method::Direct;
    double jitter = 0.0;
    /// Set when the pseudo-inverse path was taken.
    bool warning = false;
};

const char* to_string(KrrSolve::Method m);

/// H c = y: Cholesky when H is safely positive definite, else diagonal jitter
/// 1e-10 trace/n escalating x10 up to 1e-6 trace/n, else pseudo-inverse.
KrrSolve krr_solve(const KernelMatrix& H, const Eigen::VectorXd& y);

struct KrrPrediction {
    double value = 0.0;
    KrrSolve solve;
};

/// h(z)^T H^{-1} y with H and h built from ens0.
KrrPrediction krr_limit_predict(const Ensemble& ens0, const EmpiricalDataset& data,
                                const Eigen::Ref<const Eigen::VectorXd>& z, const ActivationModel& model);

/// RK4 on du/dt = -H u / n, df/dt = h^T u / n from u = y, f = 0.
double integrate_linearized_prediction(const Eigen::MatrixXd& H, const Eigen::VectorXd& h, const Eigen::VectorXd& y,
                                       double t_end, std::size_t steps);

struct RescaledFlow {
    TrajectoryRecord trajectory;     // from pd_integrate, states kept
    std::vector<double> times;
    std::vector<Eigen::VectorXd> residuals;  // u_t(x_j) = y_j - f_alpha(x_j)
};

/// d theta/dt = (1/alpha) E_x[(f(x) - f_alpha(x)) grad sigma_star(x; theta)] on
/// the empirical data, integrated by RK4 at cfg.h_ode (lambda, tau ignored).
RescaledFlow rescaled_flow(const Ensemble& ens, double alpha, const DynamicsConfig& cfg, const EmpiricalDataset& data,
                           const ActivationModel& model);

/// Targets y_j = sin(<beta, x_j>), x_j ~ N(0, I_d), beta ~ N(0, I_d / d), from the Study stream.
EmpiricalDataset make_regression_data(std::size_t n, std::size_t d, std::uint64_t seed);

struct CrossoverConfig {
    std::vector<double> alpha_grid = {2, 4, 8, 16, 32, 64};
    double T = 2.0;
    double h_ode = 0.01;
    std::size_t snapshot_every = 10;
    std::size_t n_points = 32;
    std::size_t d = 8;
    std::size_t n_particles = 2000;
    double a0 = 1.0;
    std::uint64_t seed = 1;
};

struct CrossoverResult {
    /// alpha, t, gap_l2, risk_alpha, risk_linearized
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    std::vector<double> sup_gap;       // per alpha
    std::vector<double> sup_gap_half;  // sup over t <= T/2
    LinearFit fit;
    double y_l2 = 0.0;
    double initial_risk = 0.0;
};

/// Shared antithetic init across alpha; the linearized residual uses the
/// kernel of that init.
CrossoverResult kernel_crossover_experiment(const CrossoverConfig& cfg, const ActivationModel& model);

}  // namespace meanfield
