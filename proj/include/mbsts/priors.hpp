#pragma once

#include "mbsts/error.hpp"
#include "mbsts/linalg.hpp"
#include "mbsts/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace mbsts {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::MatrixXi;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Inverse-Wishart
// ---------------------------------------------------------------------------

struct InverseWishartPrior {
    double dof = 3.0;
    MatrixXd scale = MatrixXd::Identity(1, 1);

    Index dim() const { return scale.rows(); }

    void validate() const {
        if (scale.rows() != scale.cols()) {
            fail(ErrorKind::dimension, "inverse-Wishart prior: scale must be square");
        }
        if (!(dof > static_cast<double>(dim()) - 1.0)) {
            fail(ErrorKind::config, "inverse-Wishart prior: dof must exceed dim - 1");
        }
        if (dim() > 0 && !linalg::is_spd(scale)) {
            fail(ErrorKind::numerical, "inverse-Wishart prior: scale is not symmetric positive definite");
        }
    }

    /// dof = dim + 2 and scale = 0.01 * diag(variances). The prior mean is
    /// then exactly the scale matrix.
    static InverseWishartPrior weakly_informative(const VectorXd& variances, double fraction = 0.01) {
        InverseWishartPrior p;
        p.dof = static_cast<double>(variances.size()) + 2.0;
        p.scale = (fraction * variances).asDiagonal();
        return p;
    }
};

/// Draw from IW(dof + count, scale + scatter) via a Bartlett factor of the
/// matching Wishart precision.
inline MatrixXd draw_inverse_wishart(const InverseWishartPrior& prior, Index count, const MatrixXd& scatter,
                                     Rng& rng) {
    prior.validate();
    const Index p = prior.dim();
    linalg::require_square(scatter, p, "inverse-Wishart scatter");
    if (count < 0) {
        fail(ErrorKind::config, "inverse-Wishart: negative count");
    }
    if (p == 0) {
        return MatrixXd(0, 0);
    }
    if (!linalg::is_psd(scatter, 1e-9)) {
        fail(ErrorKind::numerical, "inverse-Wishart: scatter matrix is not symmetric positive semi-definite");
    }
    MatrixXd post_scale = prior.scale + scatter;
    linalg::symmetrize(post_scale);
    const double dof = prior.dof + static_cast<double>(count);

    Eigen::LLT<MatrixXd> llt(post_scale);
    if (llt.info() != Eigen::Success) {
        fail(ErrorKind::numerical, "inverse-Wishart: posterior scale is not positive definite");
    }
    const MatrixXd u = llt.matrixL(); // post_scale = U Uᵀ

    MatrixXd bartlett = MatrixXd::Zero(p, p);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index i = 0; i < p; ++i) {
        std::gamma_distribution<double> chi2(0.5 * (dof - static_cast<double>(i)), 2.0);
        bartlett(i, i) = std::sqrt(chi2(rng));
        for (Index j = 0; j < i; ++j) {
            bartlett(i, j) = normal(rng);
        }
    }
    // Precision W = U⁻ᵀ A Aᵀ U⁻¹ ~ Wishart(dof, post_scale⁻¹), so
    // Σ = W⁻¹ = Xᵀ X with X = A⁻¹ Uᵀ.
    const MatrixXd x = bartlett.triangularView<Eigen::Lower>().solve(u.transpose());
    MatrixXd sigma = x.transpose() * x;
    linalg::symmetrize(sigma);
    return sigma;
}

inline MatrixXd draw_inverse_wishart(const InverseWishartPrior& prior, Index count, const MatrixXd& scatter,
                                     std::uint64_t seed) {
    Rng rng(seed);
    return draw_inverse_wishart(prior, count, scatter, rng);
}

// ---------------------------------------------------------------------------
// Spike-and-slab regression
// ---------------------------------------------------------------------------

/// Per-coefficient spike-and-slab prior for M series x d predictors. The slab
/// for coefficient (m, j) is N(0, slab_scale(m, j) * n / x_jᵀx_j).
struct SpikeSlabPrior {
    MatrixXd inclusion_prob;
    MatrixXd slab_scale;

    static SpikeSlabPrior uniform(Index series, Index predictors, double prob = 0.5, double scale = 1.0) {
        return {MatrixXd::Constant(series, predictors, prob), MatrixXd::Constant(series, predictors, scale)};
    }

    /// Expected model size k out of d predictors: prob = k / d.
    static SpikeSlabPrior expected_size(Index series, Index predictors, double expected, double scale = 1.0) {
        return uniform(series, predictors, expected / static_cast<double>(predictors), scale);
    }

    void validate() const {
        if (inclusion_prob.rows() != slab_scale.rows() || inclusion_prob.cols() != slab_scale.cols()) {
            fail(ErrorKind::dimension, "spike-and-slab prior: probability and scale shapes differ");
        }
        if (inclusion_prob.size() > 0 &&
            !((inclusion_prob.array() > 0.0).all() && (inclusion_prob.array() < 1.0).all())) {
            fail(ErrorKind::config, "spike-and-slab prior: inclusion probabilities must lie in (0, 1)");
        }
        if (slab_scale.size() > 0 && !((slab_scale.array() > 0.0).all() && slab_scale.allFinite())) {
            fail(ErrorKind::config, "spike-and-slab prior: slab scales must be finite and positive");
        }
    }
};

struct RegressionDraw {
    MatrixXd beta;  // M x d
    MatrixXi gamma; // M x d, 0/1
    bool jittered = false;
};

/// Sufficient statistics of the stacked regression
///   residual(t) = [x_1(t)ᵀβ_1, ..., x_M(t)ᵀβ_M] + e(t),  e(t) ~ N(0, Σ).
/// Coefficients are flattened series-major over the active series.
class RegressionSystem {
public:
    RegressionSystem(const SpikeSlabPrior& prior, const MatrixXd& residuals, const std::vector<MatrixXd>& predictors,
                     const MatrixXd& residual_cov, const std::vector<bool>& active = {})
        : series_(residuals.cols()) {
        prior.validate();
        const Index steps = residuals.rows();
        if (static_cast<Index>(predictors.size()) != series_) {
            fail(ErrorKind::dimension, "regression: need one predictor matrix per series");
        }
        linalg::require_square(residual_cov, series_, "residual covariance");
        predictors_ = prior.inclusion_prob.cols();
        if (prior.inclusion_prob.rows() != series_) {
            fail(ErrorKind::dimension, "regression: prior rows must match series count");
        }
        for (const auto& x : predictors) {
            if (x.rows() != steps || x.cols() != predictors_) {
                fail(ErrorKind::dimension, "regression: predictor matrix must be T x d");
            }
        }
        Eigen::LLT<MatrixXd> llt(residual_cov);
        if (llt.info() != Eigen::Success) {
            fail(ErrorKind::numerical, "regression: residual covariance is not positive definite");
        }
        const MatrixXd prec = llt.solve(MatrixXd::Identity(series_, series_));
        const MatrixXd weighted = residuals * prec;

        for (Index m = 0; m < series_; ++m) {
            if (active.empty() || active[static_cast<std::size_t>(m)]) {
                for (Index j = 0; j < predictors_; ++j) {
                    coeff_series_.push_back(m);
                    coeff_predictor_.push_back(j);
                }
            }
        }
        const auto p = static_cast<Index>(coeff_series_.size());
        gram_.resize(p, p);
        score_.resize(p);
        slab_var_.resize(p);
        log_prior_odds_.resize(p);
        for (Index a = 0; a < p; ++a) {
            const Index m = coeff_series_[static_cast<std::size_t>(a)];
            const Index j = coeff_predictor_[static_cast<std::size_t>(a)];
            const auto& xm = predictors[static_cast<std::size_t>(m)];
            score_[a] = xm.col(j).dot(weighted.col(m));
            for (Index b = 0; b <= a; ++b) {
                const Index m2 = coeff_series_[static_cast<std::size_t>(b)];
                const Index j2 = coeff_predictor_[static_cast<std::size_t>(b)];
                const double v = prec(m, m2) * xm.col(j).dot(predictors[static_cast<std::size_t>(m2)].col(j2));
                gram_(a, b) = v;
                gram_(b, a) = v;
            }
            const double xx = xm.col(j).squaredNorm();
            const double scale = prior.slab_scale(m, j);
            slab_var_[a] = xx > 0.0 ? scale * static_cast<double>(steps) / xx : scale;
            const double pi = prior.inclusion_prob(m, j);
            log_prior_odds_[a] = std::log(pi) - std::log1p(-pi);
        }
    }

    Index coefficient_count() const { return static_cast<Index>(coeff_series_.size()); }
    Index series() const { return series_; }
    Index predictors() const { return predictors_; }
    Index series_of(Index k) const { return coeff_series_[static_cast<std::size_t>(k)]; }
    Index predictor_of(Index k) const { return coeff_predictor_[static_cast<std::size_t>(k)]; }
    const MatrixXd& gram() const { return gram_; }
    const VectorXd& score() const { return score_; }
    const VectorXd& slab_variance() const { return slab_var_; }
    double log_prior_odds(Index k) const { return log_prior_odds_[k]; }

    /// log p(residuals | included set) up to a constant independent of the set,
    /// with the included coefficients integrated over their slab.
    double log_marginal(const std::vector<Index>& included) const {
        if (included.empty()) {
            return 0.0;
        }
        const auto k = static_cast<Index>(included.size());
        MatrixXd prec(k, k);
        VectorXd b(k);
        double log_v = 0.0;
        for (Index i = 0; i < k; ++i) {
            const Index a = included[static_cast<std::size_t>(i)];
            b[i] = score_[a];
            log_v += std::log(slab_var_[a]);
            for (Index j = 0; j < k; ++j) {
                prec(i, j) = gram_(a, included[static_cast<std::size_t>(j)]);
            }
            prec(i, i) += 1.0 / slab_var_[a];
        }
        Eigen::LLT<MatrixXd> llt(prec);
        if (llt.info() != Eigen::Success) {
            prec.diagonal().array() += 1e-8;
            llt.compute(prec);
        }
        const MatrixXd l = llt.matrixL();
        const VectorXd w = l.triangularView<Eigen::Lower>().solve(b);
        return -0.5 * log_v - l.diagonal().array().log().sum() + 0.5 * w.squaredNorm();
    }

    struct Conditional {
        VectorXd mean;
        MatrixXd chol; // lower factor of the conditional precision
        bool jittered = false;
    };

    /// Gaussian full conditional of the included coefficients.
    Conditional conditional(const std::vector<Index>& included) const {
        const auto k = static_cast<Index>(included.size());
        MatrixXd prec(k, k);
        VectorXd b(k);
        for (Index i = 0; i < k; ++i) {
            const Index a = included[static_cast<std::size_t>(i)];
            b[i] = score_[a];
            for (Index j = 0; j < k; ++j) {
                prec(i, j) = gram_(a, included[static_cast<std::size_t>(j)]);
            }
            prec(i, i) += 1.0 / slab_var_[a];
        }
        Conditional out;
        Eigen::LLT<MatrixXd> llt(prec);
        if (llt.info() != Eigen::Success) {
            prec.diagonal().array() += 1e-8;
            llt.compute(prec);
            out.jittered = true;
            if (llt.info() != Eigen::Success) {
                fail(ErrorKind::numerical, "regression: conditional precision is singular even after jitter");
            }
        }
        out.chol = llt.matrixL();
        out.mean = llt.solve(b);
        return out;
    }

private:
    Index series_ = 0;
    Index predictors_ = 0;
    std::vector<Index> coeff_series_;
    std::vector<Index> coeff_predictor_;
    MatrixXd gram_;
    VectorXd score_;
    VectorXd slab_var_;
    VectorXd log_prior_odds_;
};

namespace detail {

inline std::vector<Index> included_set(const RegressionSystem& sys, const MatrixXi& gamma) {
    std::vector<Index> out;
    for (Index k = 0; k < sys.coefficient_count(); ++k) {
        if (gamma(sys.series_of(k), sys.predictor_of(k)) != 0) {
            out.push_back(k);
        }
    }
    return out;
}

inline RegressionDraw draw_coefficients(const RegressionSystem& sys, MatrixXi gamma, Rng& rng) {
    RegressionDraw out;
    out.beta = MatrixXd::Zero(sys.series(), sys.predictors());
    const auto included = included_set(sys, gamma);
    if (!included.empty()) {
        const auto cond = sys.conditional(included);
        const VectorXd z = std_normal_vector(static_cast<Index>(included.size()), rng);
        const VectorXd draw = cond.mean + cond.chol.transpose().triangularView<Eigen::Upper>().solve(z);
        for (std::size_t i = 0; i < included.size(); ++i) {
            out.beta(sys.series_of(included[i]), sys.predictor_of(included[i])) = draw[static_cast<Index>(i)];
        }
        out.jittered = cond.jittered;
    }
    out.gamma = std::move(gamma);
    return out;
}

} // namespace detail

/// Coefficient draw with the inclusion pattern held fixed.
inline RegressionDraw draw_beta_given_indicators(const RegressionSystem& sys, const MatrixXi& gamma, Rng& rng) {
    return detail::draw_coefficients(sys, gamma, rng);
}

/// One Gibbs sweep: every indicator is resampled from its full conditional
/// with its coefficient integrated out, then the coefficients are drawn
/// given the indicators. Excluded coefficients are exactly zero.
inline RegressionDraw draw_beta_and_indicators(const RegressionSystem& sys, const MatrixXi& current_gamma,
                                               Rng& rng) {
    if (current_gamma.rows() != sys.series() || current_gamma.cols() != sys.predictors()) {
        fail(ErrorKind::dimension, "regression: indicator matrix has wrong shape");
    }
    MatrixXi gamma = current_gamma;
    // TODO: rank-one Cholesky updates per flip would make this O(p^3) per
    // sweep instead of O(p^4); matters only for M*d in the hundreds.
    for (Index k = 0; k < sys.coefficient_count(); ++k) {
        const Index m = sys.series_of(k);
        const Index j = sys.predictor_of(k);
        gamma(m, j) = 1;
        const double with = sys.log_marginal(detail::included_set(sys, gamma));
        gamma(m, j) = 0;
        const double without = sys.log_marginal(detail::included_set(sys, gamma));
        const double logit = sys.log_prior_odds(k) + with - without;
        const double p_in = 1.0 / (1.0 + std::exp(-logit));
        gamma(m, j) = uniform01(rng) < p_in ? 1 : 0;
    }
    return detail::draw_coefficients(sys, std::move(gamma), rng);
}

inline RegressionDraw draw_beta_and_indicators(const SpikeSlabPrior& prior, const MatrixXd& residuals,
                                               const std::vector<MatrixXd>& predictors, const MatrixXd& residual_cov,
                                               const MatrixXi& current_gamma, Rng& rng,
                                               const std::vector<bool>& active = {}) {
    const RegressionSystem sys(prior, residuals, predictors, residual_cov, active);
    return draw_beta_and_indicators(sys, current_gamma, rng);
}

inline RegressionDraw draw_beta_and_indicators(const SpikeSlabPrior& prior, const MatrixXd& residuals,
                                               const std::vector<MatrixXd>& predictors, const MatrixXd& residual_cov,
                                               const MatrixXi& current_gamma, std::uint64_t seed,
                                               const std::vector<bool>& active = {}) {
    Rng rng(seed);
    return draw_beta_and_indicators(prior, residuals, predictors, residual_cov, current_gamma, rng, active);
}

} // namespace mbsts
