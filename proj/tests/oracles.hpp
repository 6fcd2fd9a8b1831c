#pragma once

// Brute-force references used by the unit and acceptance tests. Nothing here
// calls into the library's filtering or regression code.

#include "mbsts/mbsts.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Joint Gaussian of (states_0..T-1, y_0..T-1) obtained by unrolling the
// recursions over the base noise u = (a0 - m0, eta_0..eta_{T-2}, eps_0..eps_{T-1}).
struct JointGaussian {
    VectorXd state_mean; // stacked T*n
    MatrixXd state_cov;
    VectorXd obs_mean;   // stacked T*p
    MatrixXd obs_cov;
    MatrixXd cross;      // state x obs
};

inline JointGaussian unroll(const mbsts::StateSpaceModel& m, Index steps) {
    const Index n = m.state_dim;
    const Index p = m.obs_dim;
    const Index r = m.selector.cols();
    const Index nu = n + (steps - 1) * r + steps * p;

    MatrixXd base = MatrixXd::Zero(nu, nu);
    base.topLeftCorner(n, n) = m.initial_cov;
    for (Index t = 0; t + 1 < steps; ++t) {
        base.block(n + t * r, n + t * r, r, r) = m.shock_cov;
    }
    const Index eps0 = n + (steps - 1) * r;
    for (Index t = 0; t < steps; ++t) {
        base.block(eps0 + t * p, eps0 + t * p, p, p) = m.obs_cov;
    }

    MatrixXd a_load = MatrixXd::Zero(steps * n, nu);
    MatrixXd y_load = MatrixXd::Zero(steps * p, nu);
    VectorXd a_mean(steps * n);
    VectorXd y_mean(steps * p);

    VectorXd mean = m.initial_mean;
    MatrixXd load = MatrixXd::Zero(n, nu);
    load.leftCols(n) = MatrixXd::Identity(n, n);
    for (Index t = 0; t < steps; ++t) {
        a_mean.segment(t * n, n) = mean;
        a_load.middleRows(t * n, n) = load;
        y_mean.segment(t * p, p) = m.observation * mean;
        y_load.middleRows(t * p, p) = m.observation * load;
        y_load.block(t * p, eps0 + t * p, p, p) += MatrixXd::Identity(p, p);
        if (t + 1 < steps) {
            mean = m.transition * mean + m.state_intercept;
            MatrixXd next = m.transition * load;
            next.block(0, n + t * r, n, r) += m.selector;
            load = next;
        }
    }
    JointGaussian g;
    g.state_mean = a_mean;
    g.obs_mean = y_mean;
    g.state_cov = a_load * base * a_load.transpose();
    g.obs_cov = y_load * base * y_load.transpose();
    g.cross = a_load * base * y_load.transpose();
    return g;
}

inline VectorXd stack_rows(const MatrixXd& y) {
    VectorXd out(y.size());
    for (Index t = 0; t < y.rows(); ++t) {
        out.segment(t * y.cols(), y.cols()) = y.row(t).transpose();
    }
    return out;
}

// log N(x; mean, cov) through an eigen decomposition.
inline double gaussian_log_density(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    const VectorXd z = es.eigenvectors().transpose() * (x - mean);
    double quad = 0.0;
    double log_det = 0.0;
    for (Index i = 0; i < z.size(); ++i) {
        quad += z[i] * z[i] / es.eigenvalues()[i];
        log_det += std::log(es.eigenvalues()[i]);
    }
    return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + log_det + quad);
}

inline double log_likelihood(const mbsts::StateSpaceModel& m, const MatrixXd& y) {
    const JointGaussian g = unroll(m, y.rows());
    return gaussian_log_density(stack_rows(y), g.obs_mean, g.obs_cov);
}

struct Conditional {
    std::vector<VectorXd> mean;
    std::vector<MatrixXd> cov;
};

// E[state_t | y] and Var[state_t | y] from Gaussian conditioning.
inline Conditional smoothed(const mbsts::StateSpaceModel& m, const MatrixXd& y) {
    const JointGaussian g = unroll(m, y.rows());
    const Eigen::LDLT<MatrixXd> ldlt(g.obs_cov);
    const VectorXd mean = g.state_mean + g.cross * ldlt.solve(stack_rows(y) - g.obs_mean);
    const MatrixXd cov = g.state_cov - g.cross * ldlt.solve(g.cross.transpose());
    Conditional c;
    const Index n = m.state_dim;
    for (Index t = 0; t < y.rows(); ++t) {
        c.mean.push_back(mean.segment(t * n, n));
        c.cov.push_back(cov.block(t * n, t * n, n, n));
    }
    return c;
}

// Exact posterior over all 2^d inclusion patterns of a one-series regression
// y = X_g b_g + e, e ~ N(0, s2 I), b_j ~ N(0, v_j) independently when included.
inline std::vector<double> inclusion_posterior(const MatrixXd& x, const VectorXd& y, double s2,
                                               const VectorXd& slab_var, double prob) {
    const Index d = x.cols();
    const Index n = x.rows();
    std::vector<double> logp(static_cast<std::size_t>(1) << d);
    for (std::size_t mask = 0; mask < logp.size(); ++mask) {
        MatrixXd cov = s2 * MatrixXd::Identity(n, n);
        int size = 0;
        for (Index j = 0; j < d; ++j) {
            if (mask & (std::size_t{1} << j)) {
                cov += slab_var[j] * x.col(j) * x.col(j).transpose();
                ++size;
            }
        }
        logp[mask] = gaussian_log_density(y, VectorXd::Zero(n), cov) + size * std::log(prob) +
                     static_cast<double>(d - size) * std::log1p(-prob);
    }
    const double top = *std::max_element(logp.begin(), logp.end());
    double total = 0.0;
    for (double& v : logp) {
        v = std::exp(v - top);
        total += v;
    }
    for (double& v : logp) v /= total;
    return logp;
}

// Generalised least squares for a stacked system with one design per series
// and cross-series error covariance sigma (Kronecker form).
inline VectorXd gls(const std::vector<MatrixXd>& x, const MatrixXd& y, const MatrixXd& sigma) {
    const Index m = y.cols();
    const Index n = y.rows();
    const Index d = x.front().cols();
    MatrixXd big = MatrixXd::Zero(m * n, m * d);
    VectorXd yy(m * n);
    for (Index s = 0; s < m; ++s) {
        big.block(s * n, s * d, n, d) = x[static_cast<std::size_t>(s)];
        yy.segment(s * n, n) = y.col(s);
    }
    const MatrixXd omega_inv = Eigen::kroneckerProduct(MatrixXd(sigma.inverse()), MatrixXd::Identity(n, n));
    return (big.transpose() * omega_inv * big).ldlt().solve(big.transpose() * omega_inv * yy);
}

// Normalised absolute error as a single fold.
inline double normalized_ae(const VectorXd& pred, const VectorXd& truth) {
    double num = 0.0;
    double top = truth[0];
    for (Index i = 0; i < truth.size(); ++i) {
        num += std::fabs(pred[i] - truth[i]);
        top = std::max(top, truth[i]);
    }
    return num / (static_cast<double>(truth.size()) * top);
}

inline MatrixXd random_spd(Index n, std::mt19937_64& gen, double scale = 1.0) {
    std::normal_distribution<double> nd;
    MatrixXd a(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) a(i, j) = nd(gen);
    return scale * (a * a.transpose() / static_cast<double>(n) + 0.2 * MatrixXd::Identity(n, n));
}

// A random structural model with a moderate (non-diffuse) initial prior so
// the dense oracle stays well conditioned.
inline mbsts::StateSpaceModel random_model(std::mt19937_64& gen, Index max_state_steps, Index& steps) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (;;) {
        const Index series = 1 + static_cast<Index>(u(gen) * 2.0);
        mbsts::ComponentSpec spec;
        for (Index s = 0; s < series; ++s) {
            mbsts::SeriesComponents c;
            c.trend = u(gen) < 0.7;
            c.seasonal = u(gen) < 0.5;
            c.cycle = u(gen) < 0.5;
            c.regression = false;
            c.seasons = 2 + static_cast<int>(u(gen) * 3.0);
            if (!(c.trend || c.seasonal || c.cycle)) c.trend = true;
            spec.series.push_back(c);
        }
        spec.rho = 0.1 + 0.9 * u(gen);
        spec.damping = 0.05 + 0.9 * u(gen);
        spec.frequency = std::numbers::pi * u(gen);
        spec.long_term_slope = VectorXd::NullaryExpr(series, [&] { return 2.0 * u(gen) - 1.0; });
        auto count = [&](bool mbsts::SeriesComponents::*flag) {
            return static_cast<Index>(spec.series_with(flag).size());
        };
        mbsts::ComponentCovariances cov;
        cov.level = random_spd(count(&mbsts::SeriesComponents::trend), gen, 0.5);
        cov.slope = random_spd(count(&mbsts::SeriesComponents::trend), gen, 0.1);
        cov.seasonal = random_spd(count(&mbsts::SeriesComponents::seasonal), gen, 0.3);
        cov.cycle = random_spd(count(&mbsts::SeriesComponents::cycle), gen, 0.4);
        cov.observation = random_spd(series, gen, 1.0);
        mbsts::InitialStatePrior init;
        init.diffuse_variance = 0.5 + 4.5 * u(gen);
        mbsts::StateSpaceModel m = mbsts::build_state_space(spec, series, cov, init);
        m.initial_mean = VectorXd::NullaryExpr(m.state_dim, [&] { return 6.0 * u(gen) - 3.0; });
        const Index max_steps = max_state_steps / m.state_dim;
        if (max_steps < 2) continue;
        steps = 2 + static_cast<Index>(u(gen) * static_cast<double>(max_steps - 1));
        steps = std::min(steps, max_steps);
        return m;
    }
}

} // namespace oracle
