#pragma once

#include "meanfield/data.hpp"
#include "meanfield/estimator.hpp"
#include "meanfield/model.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace meanfield {

/// Step-size profile xi(t); SGD and GD use s_k = eps xi(k eps).
struct StepSchedule {
    enum class Family { Constant, ExpDecay };

    Family family = Family::Constant;
    double c = 0.5;
    double rate = 0.0;

    static StepSchedule constant(double c) { return {Family::Constant, c, 0.0}; }
    /// xi(t) = c exp(-rate t).
    static StepSchedule exp_decay(double c, double rate) { return {Family::ExpDecay, c, rate}; }

    double operator()(double t) const;
    /// sup xi and the Lipschitz constant of xi on [0, inf).
    double bound() const { return c; }
    double lipschitz() const { return family == Family::Constant ? 0.0 : c * rate; }
    void validate() const;
};

enum class DynamicsKind { Sgd, NoisySgd, Gd, NoisyGd, Pd, LangevinPd };

const char* to_string(DynamicsKind kind);
DynamicsKind parse_dynamics_kind(const std::string& name);

struct DynamicsConfig {
    double eps = 0.01;
    double lambda = 0.0;
    double tau = 0.0;
    double T = 1.0;
    /// Internal step of the particle flow and of the Brownian grid; must divide eps.
    /// 0 means h_ode = eps.
    double h_ode = 0.0;
    CoefficientMode mode = CoefficientMode::Fixed;
    std::uint64_t seed = 1;
    std::size_t snapshot_every = 1;
    /// Step-halving error threshold for the particle flow; 0 disables the check.
    double ode_tol = 0.0;
    /// Keep the full parameter matrix at every snapshot.
    bool keep_states = false;
    /// Also record the squared-residual risk (Monte Carlo estimators only).
    bool record_population_risk = true;

    std::size_t steps() const;
    /// Number of h_ode substeps per eps window.
    std::size_t substeps() const;
    double step_ode() const { return h_ode > 0.0 ? h_ode : eps; }
    bool noiseless() const { return tau == 0.0 && lambda == 0.0; }
    void validate() const;
};

struct InitSpec {
    enum class Kind {
        PointMass,     // a = a0, w ~ N(0, w_var I)
        Uniform,       // a ~ Unif[-a0, a0], w ~ N(0, w_var I)
        Antithetic,    // pairs (a0, w), (-a0, w), w ~ N(0, w_var I)
        RadialSphere,  // a = a0, w = r u, r ~ Unif[radius_min, radius_max], u ~ Unif(S^(d-1))
    };
    Kind kind = Kind::PointMass;
    double a0 = 1.0;
    /// Per-coordinate variance of w; 0 means 1/D.
    double w_var = 0.0;
    double radius_min = 0.0;
    double radius_max = 1.0;
};

InitSpec::Kind parse_init_kind(const std::string& name);

/// Particle i draws from its own Init stream, so the first N particles are
/// the same for every ensemble size >= N (pairs for Antithetic).
Ensemble init_sample(const InitSpec& spec, std::size_t n_particles, std::size_t weight_dim, CoefficientMode mode,
                     std::uint64_t seed, double scale_alpha = 1.0);

/// Snapshot table. Columns: step, t, risk_particles, risk_population_mc,
/// max_abs_a, mean_abs_a.
struct TrajectoryRecord {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    std::vector<Eigen::MatrixXd> states;
    std::vector<std::string> warnings;
    Eigen::MatrixXd final_theta;

    std::size_t column_index(const std::string& name) const;
    std::vector<double> column(const std::string& name) const;
};

/// One-pass SGD: step k draws (x_k, y_k) from the Data stream of cfg.seed.
TrajectoryRecord sgd_run(const Ensemble& init, const DynamicsConfig& cfg, const StepSchedule& schedule,
                         const DataModel& data, const PopulationEstimator& est, const ActivationModel& model);

/// SGD with ridge lambda and temperature tau. With tau = lambda = 0 this is
/// sgd_run bit for bit.
TrajectoryRecord noisy_sgd_run(const Ensemble& init, const DynamicsConfig& cfg, const StepSchedule& schedule,
                               const DataModel& data, const PopulationEstimator& est, const ActivationModel& model);

/// Full-batch GD on the estimator's expectations; noisy when tau or lambda > 0.
TrajectoryRecord gd_run(const Ensemble& init, const DynamicsConfig& cfg, const StepSchedule& schedule,
                        const PopulationEstimator& est, const ActivationModel& model);

/// Particle flow d theta/dt = 2 xi(t) (G(theta) - lambda theta): RK4 at h_ode when
/// tau = 0, Euler-Maruyama on the shared Brownian grid when tau > 0.
TrajectoryRecord pd_integrate(const Ensemble& init, const DynamicsConfig& cfg, const StepSchedule& schedule,
                              const PopulationEstimator& est, const ActivationModel& model);

TrajectoryRecord run_dynamics(DynamicsKind kind, const Ensemble& init, const DynamicsConfig& cfg,
                              const StepSchedule& schedule, const DataModel& data, const PopulationEstimator& est,
                              const ActivationModel& model);

struct CoupledRecord {
    std::vector<DynamicsKind> kinds;
    std::vector<TrajectoryRecord> runs;
    /// step, t, risk_<kind>..., then gap_<a>_<b> and risk_gap_<a>_<b> per pair.
    TrajectoryRecord combined;
};

/// Runs every requested dynamics from the same initial ensemble. Noisy
/// dynamics share Brownian increments; the SGD data stream is independent.
CoupledRecord coupled_run(const Ensemble& init, const std::vector<DynamicsKind>& kinds, const DynamicsConfig& cfg,
                          const StepSchedule& schedule, const DataModel& data, const PopulationEstimator& est,
                          const ActivationModel& model);

/// max_i ||theta_i - theta'_i||_2.
double max_particle_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Standard normal g for (particle, window, coordinate), the normalized sum of
/// the `substeps` fine Brownian increments of that window.
double window_normal(std::uint64_t seed, std::size_t particle, std::size_t window, std::size_t coordinate,
                     std::size_t dim, std::size_t substeps);
/// Fine increment l of the window grid (unit variance).
double fine_normal(std::uint64_t seed, std::size_t particle, std::size_t fine_step, std::size_t coordinate,
                   std::size_t dim);

}  // namespace meanfield
