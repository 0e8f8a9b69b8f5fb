#include "meanfield/potentials.hpp"

#include "meanfield/errors.hpp"
#include "meanfield/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <vector>

namespace meanfield {

namespace {

constexpr Eigen::Index kParticleBlock = 128;
constexpr Eigen::Index kSampleBlock = 256;

std::span<const double> as_span(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

/// Row-wise pairwise sums of a (rows x cols) matrix stored column-major.
Eigen::VectorXd rowwise_pairwise(const Eigen::MatrixXd& m) {
    Eigen::VectorXd out(m.rows());
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        out(r) = pairwise_sum(row);
    }
    return out;
}

void require_dims(const PopulationEstimator& est, Eigen::Index weight_dim) {
    check_dims(static_cast<std::size_t>(weight_dim), est.dim());
}

// ---- Gaussian routes (Gaussian-mixture data, dot-product activation) ----

constexpr double kTail = 10.0;     // the standard normal puts < 1e-22 beyond this
constexpr double kMaxPiece = 2.0;  // longest piece handed to one Gauss-Legendre rule

/// Breakpoints on [-kTail, kTail]: every kink t seen through g -> c g for c in
/// `scales`, refined so that no piece is longer than kMaxPiece.
std::vector<double> normal_pieces(const std::vector<double>& kinks, std::initializer_list<double> scales) {
    std::vector<double> b{-kTail, kTail};
    for (double c : scales) {
        if (c == 0.0) continue;
        for (double t : kinks)
            if (std::abs(t / c) < kTail) b.push_back(t / c);
    }
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    std::vector<double> out{b.front()};
    for (std::size_t i = 1; i < b.size(); ++i) {
        const auto parts = static_cast<int>(std::ceil((b[i] - b[i - 1]) / kMaxPiece));
        for (int k = 1; k < parts; ++k) out.push_back(b[i - 1] + (b[i] - b[i - 1]) * k / parts);
        out.push_back(b[i]);
    }
    return out;
}

/// Calls f(g, weight) so that sum weight * h(g) ~ E h(G) for h smooth between breaks.
template <class F>
void integrate_normal(const QuadratureRule& rule, const std::vector<double>& breaks, F&& f) {
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    for (std::size_t i = 1; i < breaks.size(); ++i) {
        const double mid = 0.5 * (breaks[i] + breaks[i - 1]);
        const double half = 0.5 * (breaks[i] - breaks[i - 1]);
        for (Eigen::Index k = 0; k < rule.nodes.size(); ++k) {
            const double g = mid + half * rule.nodes(k);
            f(g, half * rule.weights(k) * inv_sqrt_2pi * std::exp(-0.5 * g * g));
        }
    }
}

struct BivariateFactor {
    double l11, l21, l22;
};

BivariateFactor cholesky2(double c11, double c12, double c22) {
    BivariateFactor f{};
    f.l11 = std::sqrt(std::max(0.0, c11));
    if (f.l11 > 0.0) {
        f.l21 = c12 / f.l11;
        f.l22 = std::sqrt(std::max(0.0, c22 - f.l21 * f.l21));
    } else {
        f.l21 = 0.0;
        f.l22 = std::sqrt(std::max(0.0, c22));
    }
    return f;
}

double gh_v(const VecRef& w, const PopulationEstimator& est, const DotProductActivation& act) {
    double total = 0.0;
    for (const auto& comp : est.components()) {
        const double s = std::sqrt(std::max(0.0, w.dot(comp.covariance * w)));
        total += comp.probability * comp.label * act.gaussian_moments(0.0, s).value;
    }
    return -total;
}

// d/dw E sigma(s G) = E[sigma'(s G) G] C w / s
Eigen::VectorXd gh_grad_v(const VecRef& w, const PopulationEstimator& est, const DotProductActivation& act) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(w.size());
    for (const auto& comp : est.components()) {
        const Eigen::VectorXd cw = comp.covariance * w;
        const double s = std::sqrt(std::max(0.0, w.dot(cw)));
        if (s == 0.0) continue;
        g -= comp.probability * comp.label * act.gaussian_moments(0.0, s).slope_g / s * cw;
    }
    return g;
}

// (<w1,x>, <w2,x>) = (l11 G1, l21 G1 + l22 G2): G2 in closed form, G1 by quadrature.
double gh_u_ordered(const VecRef& w1, const VecRef& w2, const PopulationEstimator& est,
                    const DotProductActivation& act) {
    const auto kinks = act.kinks();
    double total = 0.0;
    for (const auto& comp : est.components()) {
        const Eigen::VectorXd c1 = comp.covariance * w1;
        const auto f = cholesky2(w1.dot(c1), w2.dot(c1), w2.dot(comp.covariance * w2));
        double e = 0.0;
        integrate_normal(est.rule(), normal_pieces(kinks, {f.l11, f.l21}), [&](double g, double wt) {
            e += wt * act.value(f.l11 * g) * act.gaussian_moments(f.l21 * g, f.l22).value;
        });
        total += comp.probability * e;
    }
    return total;
}

bool lexicographically_less(const VecRef& a, const VecRef& b) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a(i) < b(i)) return true;
        if (b(i) < a(i)) return false;
    }
    return false;
}

/// Gradient of E[sigma(<w1,x>) sigma(<w2,x>)] in w1 for one Gaussian component,
/// written so that it stays finite when w1 and w2 are parallel:
///   C w1 E[s'(z1) s(z2) z1] / c11 + (C w2 - C w1 c12 / c11) E[s'(z1) s'(z2)].
Eigen::VectorXd gh_grad1_u(const VecRef& w1, const VecRef& w2, const PopulationEstimator& est,
                           const DotProductActivation& act) {
    const auto kinks = act.kinks();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(w1.size());
    for (const auto& comp : est.components()) {
        const Eigen::VectorXd c1 = comp.covariance * w1;
        const Eigen::VectorXd c2 = comp.covariance * w2;
        const double c11 = w1.dot(c1);
        const double c12 = w2.dot(c1);
        const auto f = cholesky2(c11, c12, w2.dot(c2));
        double a_term = 0.0;
        double b_term = 0.0;
        integrate_normal(est.rule(), normal_pieces(kinks, {f.l11, f.l21}), [&](double u, double wt) {
            const double z1 = f.l11 * u;
            const double d1 = act.slope(z1);
            if (d1 == 0.0) return;
            const auto m = act.gaussian_moments(f.l21 * u, f.l22);
            a_term += wt * d1 * z1 * m.value;
            b_term += wt * d1 * m.slope;
        });
        if (c11 > 0.0) {
            g += comp.probability * (a_term / c11 * c1 + b_term * (c2 - (c12 / c11) * c1));
        } else {
            g += comp.probability * b_term * c2;
        }
    }
    return g;
}

// ---- Monte Carlo routes ----

double mc_v(const VecRef& w, const PopulationEstimator& est, const DotProductActivation& act) {
    const auto& x = est.points();
    const auto& y = est.labels();
    const Eigen::VectorXd proj = x.transpose() * w;
    Eigen::VectorXd terms(proj.size());
    for (Eigen::Index k = 0; k < proj.size(); ++k) terms(k) = y(k) * act.value(proj(k));
    return -pairwise_sum(as_span(terms)) / static_cast<double>(proj.size());
}

double mc_u(const VecRef& w1, const VecRef& w2, const PopulationEstimator& est, const DotProductActivation& act) {
    const auto& x = est.points();
    const Eigen::VectorXd p1 = x.transpose() * w1;
    const Eigen::VectorXd p2 = x.transpose() * w2;
    Eigen::VectorXd terms(p1.size());
    for (Eigen::Index k = 0; k < p1.size(); ++k) terms(k) = act.value(p1(k)) * act.value(p2(k));
    return pairwise_sum(as_span(terms)) / static_cast<double>(p1.size());
}

Eigen::VectorXd mc_grad_v(const VecRef& w, const PopulationEstimator& est, const DotProductActivation& act) {
    const auto& x = est.points();
    const auto& y = est.labels();
    const Eigen::VectorXd proj = x.transpose() * w;
    Eigen::MatrixXd terms(x.rows(), x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k) terms.col(k) = (y(k) * act.slope(proj(k))) * x.col(k);
    return -rowwise_pairwise(terms) / static_cast<double>(x.cols());
}

Eigen::VectorXd mc_grad1_u(const VecRef& w1, const VecRef& w2, const PopulationEstimator& est,
                           const DotProductActivation& act) {
    const auto& x = est.points();
    const Eigen::VectorXd p1 = x.transpose() * w1;
    const Eigen::VectorXd p2 = x.transpose() * w2;
    Eigen::MatrixXd terms(x.rows(), x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k) terms.col(k) = (act.slope(p1(k)) * act.value(p2(k))) * x.col(k);
    return rowwise_pairwise(terms) / static_cast<double>(x.cols());
}

}  // namespace

const DotProductActivation& require_dot_product(const ActivationModel& model) {
    const auto* dot = model.as_dot_product();
    if (dot == nullptr) throw UnsupportedError("operation requires a dot-product activation");
    return *dot;
}

double sigma_star(const Parameter& theta, const VecRef& x, const ActivationModel& model) {
    return theta.a * model.sigma(x, theta.w);
}

Eigen::VectorXd grad_sigma_star(const Parameter& theta, const VecRef& x, const ActivationModel& model,
                                CoefficientMode mode) {
    const auto d = theta.w.size();
    Eigen::VectorXd g(d + 1);
    const Eigen::VectorXd gw = model.grad_w_sigma(x, theta.w);
    if (mode == CoefficientMode::General) {
        g(0) = model.sigma(x, theta.w);
        g.tail(d) = theta.a * gw;
    } else {
        g(0) = 0.0;
        g.tail(d) = gw;
    }
    return g;
}

double potential_v(const VecRef& w, const PopulationEstimator& est, const ActivationModel& model) {
    require_dims(est, w.size());
    const auto& act = require_dot_product(model);
    return est.strategy() == EstimatorStrategy::MonteCarlo ? mc_v(w, est, act) : gh_v(w, est, act);
}

double potential_u(const VecRef& w1, const VecRef& w2, const PopulationEstimator& est, const ActivationModel& model) {
    require_dims(est, w1.size());
    require_dims(est, w2.size());
    const auto& act = require_dot_product(model);
    if (est.strategy() == EstimatorStrategy::MonteCarlo) return mc_u(w1, w2, est, act);
    // canonical argument order makes the quadrature bitwise symmetric
    return lexicographically_less(w2, w1) ? gh_u_ordered(w2, w1, est, act) : gh_u_ordered(w1, w2, est, act);
}

double potential_V(const Parameter& theta, const PopulationEstimator& est, const ActivationModel& model) {
    return theta.a * potential_v(theta.w, est, model);
}

double potential_U(const Parameter& theta1, const Parameter& theta2, const PopulationEstimator& est,
                   const ActivationModel& model) {
    return theta1.a * theta2.a * potential_u(theta1.w, theta2.w, est, model);
}

Eigen::VectorXd grad_v(const VecRef& w, const PopulationEstimator& est, const ActivationModel& model) {
    require_dims(est, w.size());
    const auto& act = require_dot_product(model);
    return est.strategy() == EstimatorStrategy::MonteCarlo ? mc_grad_v(w, est, act) : gh_grad_v(w, est, act);
}

Eigen::VectorXd grad1_u(const VecRef& w1, const VecRef& w2, const PopulationEstimator& est,
                        const ActivationModel& model) {
    require_dims(est, w1.size());
    require_dims(est, w2.size());
    const auto& act = require_dot_product(model);
    return est.strategy() == EstimatorStrategy::MonteCarlo ? mc_grad1_u(w1, w2, est, act)
                                                           : gh_grad1_u(w1, w2, est, act);
}

Eigen::VectorXd grad_V(const Parameter& theta, const PopulationEstimator& est, const ActivationModel& model,
                       CoefficientMode mode) {
    const auto d = theta.w.size();
    Eigen::VectorXd g(d + 1);
    g(0) = mode == CoefficientMode::General ? potential_v(theta.w, est, model) : 0.0;
    g.tail(d) = theta.a * grad_v(theta.w, est, model);
    return g;
}

Eigen::VectorXd grad1_U(const Parameter& theta1, const Parameter& theta2, const PopulationEstimator& est,
                        const ActivationModel& model, CoefficientMode mode) {
    const auto d = theta1.w.size();
    Eigen::VectorXd g(d + 1);
    g(0) = mode == CoefficientMode::General ? theta2.a * potential_u(theta1.w, theta2.w, est, model) : 0.0;
    g.tail(d) = (theta1.a * theta2.a) * grad1_u(theta1.w, theta2.w, est, model);
    return g;
}

double predict(const Ensemble& ens, const VecRef& x, const ActivationModel& model) {
    check_dims(ens.weight_dim(), static_cast<std::size_t>(x.size()));
    const auto& act = require_dot_product(model);
    const double alpha = ens.scale_alpha();
    const Eigen::VectorXd proj = ens.weights().transpose() * x;
    std::vector<double> terms(ens.size());
    for (std::size_t i = 0; i < ens.size(); ++i)
        terms[i] = (alpha * ens.a(i)) * act.value(proj(static_cast<Eigen::Index>(i)));
    return order_independent_sum(terms) / static_cast<double>(ens.size());
}

Eigen::VectorXd predict_batch(const Ensemble& ens, const Eigen::MatrixXd& points, const ActivationModel& model) {
    check_dims(ens.weight_dim(), static_cast<std::size_t>(points.rows()));
    const auto& act = require_dot_product(model);
    const double alpha = ens.scale_alpha();
    const auto n = points.cols();
    const auto nparticles = static_cast<Eigen::Index>(ens.size());
    Eigen::RowVectorXd coeff = alpha * ens.coefficients();
    Eigen::VectorXd out(n);
    const auto blocks = static_cast<std::size_t>((n + kSampleBlock - 1) / kSampleBlock);
    parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
        std::vector<double> terms(ens.size());
        for (std::size_t b = b0; b < b1; ++b) {
            const Eigen::Index start = static_cast<Eigen::Index>(b) * kSampleBlock;
            const Eigen::Index len = std::min(kSampleBlock, n - start);
            const Eigen::MatrixXd proj = ens.weights().transpose() * points.middleCols(start, len);  // N x len
            for (Eigen::Index k = 0; k < len; ++k) {
                for (Eigen::Index i = 0; i < nparticles; ++i)
                    terms[static_cast<std::size_t>(i)] = coeff(i) * act.value(proj(i, k));
                out(start + k) = order_independent_sum(terms) / static_cast<double>(ens.size());
            }
        }
    }, 1);
    return out;
}

double RiskTerms::risk() const {
    const double n = static_cast<double>(n_particles);
    return mean_y2 + (2.0 * alpha / n) * sum_V + (alpha * alpha / (n * n)) * sum_U;
}

RiskTerms risk_terms(const Ensemble& ens, const PopulationEstimator& est, const ActivationModel& model) {
    check_dims(ens.weight_dim(), est.dim());
    const auto& act = require_dot_product(model);
    const std::size_t np = ens.size();

    std::vector<double> v_terms(np);
    std::vector<double> diag_terms(np);
    RiskTerms out;
    out.mean_y2 = est.mean_y_squared();
    out.n_particles = np;
    out.alpha = ens.scale_alpha();

    if (est.strategy() == EstimatorStrategy::MonteCarlo) {
        const auto& x = est.points();
        const auto& y = est.labels();
        const Eigen::Index n = x.cols();
        const auto nparticles = static_cast<Eigen::Index>(np);
        // V_i = a_i v(w_i) and U_ii, one pairwise sum over samples per particle
        const auto pblocks = static_cast<std::size_t>((nparticles + kParticleBlock - 1) / kParticleBlock);
        parallel_for(pblocks, [&](std::size_t b0, std::size_t b1) {
            std::vector<double> terms(static_cast<std::size_t>(n));
            std::vector<double> squares(static_cast<std::size_t>(n));
            for (std::size_t b = b0; b < b1; ++b) {
                const Eigen::Index start = static_cast<Eigen::Index>(b) * kParticleBlock;
                const Eigen::Index len = std::min(kParticleBlock, nparticles - start);
                const Eigen::MatrixXd proj = x.transpose() * ens.weights().middleCols(start, len);  // n x len
                Eigen::MatrixXd sig(n, len);
                act.evaluate(proj.data(), sig.data(), nullptr, static_cast<std::size_t>(proj.size()));
                for (Eigen::Index i = 0; i < len; ++i) {
                    const double a = ens.a(static_cast<std::size_t>(start + i));
                    for (Eigen::Index k = 0; k < n; ++k) {
                        const double s = sig(k, i);
                        terms[static_cast<std::size_t>(k)] = y(k) * s;
                        squares[static_cast<std::size_t>(k)] = (a * s) * (a * s);
                    }
                    const auto idx = static_cast<std::size_t>(start + i);
                    v_terms[idx] = a * (-pairwise_sum(terms) / static_cast<double>(n));
                    diag_terms[idx] = pairwise_sum(squares) / static_cast<double>(n);
                }
            }
        }, 1);
        // sum_ij a_i a_j u(w_i, w_j) = (1/n) sum_k (sum_i a_i sigma_ik)^2
        Eigen::VectorXd m2(n);
        const auto sblocks = static_cast<std::size_t>((n + kSampleBlock - 1) / kSampleBlock);
        parallel_for(sblocks, [&](std::size_t b0, std::size_t b1) {
            std::vector<double> terms(np);
            for (std::size_t b = b0; b < b1; ++b) {
                const Eigen::Index start = static_cast<Eigen::Index>(b) * kSampleBlock;
                const Eigen::Index len = std::min(kSampleBlock, n - start);
                Eigen::MatrixXd proj = ens.weights().transpose() * x.middleCols(start, len);  // N x len
                act.evaluate(proj.data(), proj.data(), nullptr, static_cast<std::size_t>(proj.size()));
                for (Eigen::Index k = 0; k < len; ++k) {
                    for (Eigen::Index i = 0; i < nparticles; ++i)
                        terms[static_cast<std::size_t>(i)] = ens.a(static_cast<std::size_t>(i)) * proj(i, k);
                    const double m = order_independent_sum(terms);
                    m2(start + k) = m * m;
                }
            }
        }, 1);
        out.sum_U = pairwise_sum(as_span(m2)) / static_cast<double>(n);
    } else {
        std::vector<Parameter> particles(np);
        for (std::size_t i = 0; i < np; ++i) particles[i] = ens.particle(i);
        for (std::size_t i = 0; i < np; ++i) v_terms[i] = potential_V(particles[i], est, model);
        std::vector<double> pair_terms(np * np);
        for (std::size_t i = 0; i < np; ++i) {
            pair_terms[i * np + i] = potential_U(particles[i], particles[i], est, model);
            diag_terms[i] = pair_terms[i * np + i];
            for (std::size_t j = i + 1; j < np; ++j) {
                const double u = potential_U(particles[i], particles[j], est, model);
                pair_terms[i * np + j] = u;
                pair_terms[j * np + i] = u;
            }
        }
        out.sum_U = order_independent_sum(pair_terms);
    }

    out.sum_V = order_independent_sum(v_terms);
    out.sum_U_diag = order_independent_sum(diag_terms);
    out.max_U_diag = *std::max_element(diag_terms.begin(), diag_terms.end());
    return out;
}

double risk_particles(const Ensemble& ens, const PopulationEstimator& est, const ActivationModel& model) {
    return risk_terms(ens, est, model).risk();
}

double risk_population_mc(const Ensemble& ens, const PopulationEstimator& est, const ActivationModel& model) {
    if (est.strategy() != EstimatorStrategy::MonteCarlo)
        throw UnsupportedError("risk_population_mc needs a Monte Carlo sample set");
    const Eigen::VectorXd fhat = predict_batch(ens, est.points(), model);
    const Eigen::VectorXd sq = (est.labels() - fhat).array().square();
    return pairwise_sum(as_span(sq)) / static_cast<double>(sq.size());
}

ForceField mean_field_force(const Eigen::MatrixXd& theta, CoefficientMode mode, double scale_alpha,
                            const PopulationEstimator& est, const ActivationModel& model) {
    const Eigen::Index dim = theta.rows();
    const Eigen::Index nparticles = theta.cols();
    check_dims(static_cast<std::size_t>(dim - 1), est.dim());
    if (est.strategy() != EstimatorStrategy::MonteCarlo) {
        ForceField out;
        out.force = mean_field_force_direct(Ensemble(theta, mode, scale_alpha), est, model);
        return out;
    }
    const auto& act = require_dot_product(model);
    const auto& x = est.points();
    const auto& y = est.labels();
    const Eigen::Index n = x.cols();
    const auto weights = theta.bottomRows(dim - 1);
    const Eigen::RowVectorXd coeff = scale_alpha * theta.row(0);

    // pass 1: f_hat on the sample set, blocks reduced in fixed order
    const auto nblocks = static_cast<std::size_t>((nparticles + kParticleBlock - 1) / kParticleBlock);
    Eigen::MatrixXd partial(n, static_cast<Eigen::Index>(nblocks));
    // small problems keep sigma and sigma' per block for pass 2
    const bool cache = n * nparticles <= (Eigen::Index{1} << 21);
    std::vector<Eigen::MatrixXd> values(cache ? nblocks : 0), slopes(cache ? nblocks : 0);
    parallel_for(nblocks, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            const Eigen::Index start = static_cast<Eigen::Index>(b) * kParticleBlock;
            const Eigen::Index len = std::min(kParticleBlock, nparticles - start);
            const Eigen::MatrixXd proj = x.transpose() * weights.middleCols(start, len);  // n x len
            Eigen::MatrixXd s(n, len);
            if (cache) {
                slopes[b].resize(n, len);
                act.evaluate(proj.data(), s.data(), slopes[b].data(), static_cast<std::size_t>(proj.size()));
            } else {
                act.evaluate(proj.data(), s.data(), nullptr, static_cast<std::size_t>(proj.size()));
            }
            partial.col(static_cast<Eigen::Index>(b)) = s * coeff.segment(start, len).transpose();
            if (cache) values[b] = std::move(s);
        }
    }, 1);
    Eigen::VectorXd fhat = partial.col(0);
    for (Eigen::Index b = 1; b < partial.cols(); ++b) fhat += partial.col(b);
    fhat /= static_cast<double>(nparticles);

    ForceField out;
    out.residual = y - fhat;
    out.force.resize(dim, nparticles);
    const double inv_n = 1.0 / static_cast<double>(n);

    // pass 2: per-particle expectations against the residual
    parallel_for(nblocks, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            const Eigen::Index start = static_cast<Eigen::Index>(b) * kParticleBlock;
            const Eigen::Index len = std::min(kParticleBlock, nparticles - start);
            Eigen::MatrixXd value, slope_r;
            if (cache) {
                value = std::move(values[b]);
                slope_r = std::move(slopes[b]);
            } else {
                const Eigen::MatrixXd proj = x.transpose() * weights.middleCols(start, len);  // n x len
                value.resize(n, len);
                slope_r.resize(n, len);
                act.evaluate(proj.data(), value.data(), slope_r.data(), static_cast<std::size_t>(proj.size()));
            }
            slope_r.array().colwise() *= out.residual.array();
            if (mode == CoefficientMode::General)
                out.force.row(0).segment(start, len) = (out.residual.transpose() * value) * inv_n;
            else
                out.force.row(0).segment(start, len).setZero();
            Eigen::MatrixXd gw = x * slope_r;  // d x len
            for (Eigen::Index i = 0; i < len; ++i)
                out.force.col(start + i).tail(dim - 1) = (theta(0, start + i) * inv_n) * gw.col(i);
        }
    }, 1);
    return out;
}

Eigen::MatrixXd mean_field_force_direct(const Ensemble& ens, const PopulationEstimator& est,
                                        const ActivationModel& model) {
    const std::size_t np = ens.size();
    const double alpha = ens.scale_alpha();
    std::vector<Parameter> particles(np);
    for (std::size_t i = 0; i < np; ++i) particles[i] = ens.particle(i);
    Eigen::MatrixXd force(static_cast<Eigen::Index>(ens.dim()), static_cast<Eigen::Index>(np));
    for (std::size_t i = 0; i < np; ++i) {
        Eigen::VectorXd interaction = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ens.dim()));
        for (std::size_t j = 0; j < np; ++j) interaction += grad1_U(particles[i], particles[j], est, model, ens.mode());
        force.col(static_cast<Eigen::Index>(i)) =
            -grad_V(particles[i], est, model, ens.mode()) - (alpha / static_cast<double>(np)) * interaction;
    }
    return force;
}

}  // namespace meanfield
