#pragma once

#include "meanfield/dynamics.hpp"
#include "meanfield/errors.hpp"
#include "meanfield/estimator.hpp"
#include "meanfield/model.hpp"
#include "meanfield/numeric.hpp"
#include "meanfield/potentials.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace meanfield {

// ---- large-N reference flow ----

struct ReferenceFlow {
    DynamicsConfig cfg;
    TrajectoryRecord trajectory;
    std::vector<double> times;
    std::vector<double> raw;
    std::vector<double> corrected;
    std::vector<RiskTerms> terms;
    std::size_t n_ref = 0;
};

/// Runs the particle flow (Langevin when cfg.tau > 0) at N_ref and caches the
/// risk at every snapshot time.
ReferenceFlow build_reference_flow(const Ensemble& init, const DynamicsConfig& cfg, const StepSchedule& schedule,
                                   const PopulationEstimator& est, const ActivationModel& model);

/// raw minus the 1/N self-interaction bias:
///   corrected = raw - (alpha^2/N) [mean_i U_ii - mean_{i != j} U_ij].
double corrected_risk(const RiskTerms& terms);

struct ReferenceRisk {
    double raw;
    double corrected;
};

/// Exact cached snapshot times only; any other t throws UnsupportedError.
ReferenceRisk reference_risk(const ReferenceFlow& ref, double t);

// ---- 1-D Fokker-Planck grid (fixed coefficients, D - 1 = 1) ----

struct GridDensity1D {
    double L = 1.0;
    std::size_t M = 0;
    Eigen::VectorXd rho;  // cell averages
    double t = 0.0;

    double dw() const { return 2.0 * L / static_cast<double>(M); }
    double center(std::size_t m) const { return -L + (static_cast<double>(m) + 0.5) * dw(); }
    double mass() const;
    double mean() const;
    double variance() const;
    /// Mass in the outermost cell on each side.
    double boundary_mass() const;

    /// Cell averages of N(mu, sd^2), renormalized to unit mass.
    static GridDensity1D gaussian(double L, std::size_t M, double mu, double sd);
    /// All mass in the cell containing w.
    static GridDensity1D point(double L, std::size_t M, double w);
};

struct FokkerPlanckParams {
    double xi = 0.5;
    double tau = 0.0;
    double lambda = 0.0;
    /// Parameter dimension D (2 for one weight plus the frozen coefficient).
    double dim = 2.0;
};

/// Raised when dt exceeds the stability bound; carries the largest admissible dt.
class CflError : public ConfigError {
public:
    CflError(const std::string& what, double suggested_dt) : ConfigError(what, "fokker_planck.dt"), dt_(suggested_dt) {}
    double suggested_dt() const { return dt_; }

private:
    double dt_;
};

/// min(dw^2 D / (8 xi tau), dw / (4 xi max|psi'|)); +inf when both terms vanish.
double cfl_limit(const GridDensity1D& rho, const Eigen::VectorXd& psi_prime, const FokkerPlanckParams& p);

/// One explicit finite-volume step of
///   d_t rho = 2 xi d_w(rho psi') + (2 xi tau / D) d_ww rho
/// with upwind drift flux, centered diffusion and zero flux at +/- L.
/// psi_prime holds d_w Psi_lambda at the cell centers (ridge term included).
GridDensity1D fokker_planck_1d_step(const GridDensity1D& rho, const Eigen::VectorXd& psi_prime, double dt,
                                    const FokkerPlanckParams& p);

/// Self-consistent drift d_w [v(w) + int u(w, w') rho(dw')] + lambda w on a
/// fixed grid, with the u-derivative table precomputed once.
class GridDrift {
public:
    GridDrift(const GridDensity1D& grid, const PopulationEstimator& est, const ActivationModel& model, double lambda);
    Eigen::VectorXd psi_prime(const GridDensity1D& rho) const;

private:
    Eigen::VectorXd dv_;      // v'(c_m) + lambda c_m
    Eigen::MatrixXd du_;      // d_1 u(c_m, c_l)
    double dw_;
};

/// Advances rho to time t_end with steps of half the CFL limit, landing on t_end exactly.
GridDensity1D fokker_planck_evolve(GridDensity1D rho, double t_end, const GridDrift& drift,
                                   const FokkerPlanckParams& p);

/// Histogram of particle weights on the grid cells, as a density (mass outside
/// [-L, L] is dropped).
Eigen::VectorXd histogram_density(const GridDensity1D& grid, const Eigen::VectorXd& w);

/// Draws n weights from the piecewise-constant grid density.
Eigen::VectorXd sample_grid_density(const GridDensity1D& grid, std::size_t n, std::uint64_t seed);

struct FokkerPlanckCheckConfig {
    // data and activation (d = 1)
    double gamma = 1.0;
    double delta = 0.5;
    double s1 = 0.0, s2 = 1.0, t1 = 0.0, t2 = 1.0;
    std::size_t n_mc = 1024;
    // dynamics
    double xi = 0.5;
    double tau = 0.5;
    double lambda = 1.0;
    double T = 1.0;
    double h = 0.005;
    std::size_t snapshot_every = 20;
    // grid
    double L = 4.0;
    std::size_t M = 400;
    double init_mean = 0.5;
    double init_sd = 0.3;
    std::size_t n_particles = 1000;
    std::uint64_t seed = 1;
};

struct FokkerPlanckReport {
    /// t, l1, grid_mass, grid_mean, grid_var, particle_mean, particle_var, boundary_mass
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    GridDensity1D grid;
    Eigen::VectorXd particles;
};

/// Langevin particle flow (N particles, fixed coefficients) against the grid
/// solution of the same equation; tau = 0 compares drift-only solutions.
FokkerPlanckReport fokker_planck_vs_langevin(const FokkerPlanckCheckConfig& cfg);

// ---- Wasserstein-2 ----

/// Exact W2 between two empirical measures with equal particle counts. Rows
/// that are identical constants in both (the frozen coefficient row in fixed
/// mode) are dropped; one remaining row uses the sorted coupling, otherwise an
/// exact assignment is solved (N <= 512).
double w2_estimate(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double w2_estimate(const Ensemble& a, const Ensemble& b);

/// Minimum-cost perfect matching on a square cost matrix; returns assignment[row] = col.
std::vector<std::size_t> solve_assignment(const Eigen::MatrixXd& cost);

// ---- N-scaling study ----

struct GapStudyConfig {
    std::vector<std::size_t> n_grid = {25, 50, 100, 200, 400, 800};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8};
    std::size_t n_ref = 6400;
    std::uint64_t ref_seed = 1000003;
    /// Draw the reference with reference_sample instead of plain iid particles.
    bool ref_stratified = true;
    DynamicsConfig dynamics;  // fixed mode; eps drives SGD
    /// RK4 step of the reference flow; must divide eps * snapshot_every. 0 means one step per snapshot.
    double ref_h_ode = 0.0;
    InitSpec init;
    /// SGD samples the estimator's frozen set instead of the population.
    bool frozen_stream = true;
};

struct GapStudyRun {
    std::size_t n = 0;
    std::uint64_t seed = 0;
    double sup_gap = 0.0;
    TrajectoryRecord trajectory;  // SGD snapshots plus ref_raw, ref_corrected, gap columns
};

struct GapStudyResult {
    std::vector<GapStudyRun> runs;
    std::vector<double> median_gap;  // per n_grid entry
    LinearFit fit;
    bool non_monotone = false;
    ReferenceFlow reference;
};

/// Low-variance fixed-mode sample of the initial law: antithetic pairs
/// (w, -w), and for radial-sphere inits one radius per stratum of
/// [radius_min, radius_max]. Only for reference flows, it is not nested in N.
Ensemble reference_sample(const InitSpec& spec, std::size_t n_particles, std::size_t weight_dim, std::uint64_t seed);

GapStudyResult gap_scaling_study(const GapStudyConfig& cfg, const DataModel& data, const PopulationEstimator& est,
                                 const ActivationModel& model);

}  // namespace meanfield
