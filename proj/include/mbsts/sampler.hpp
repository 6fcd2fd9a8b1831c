#pragma once

#include "mbsts/error.hpp"
#include "mbsts/priors.hpp"
#include "mbsts/rng.hpp"
#include "mbsts/statespace.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace mbsts {

struct McmcConfig {
    Index iterations = 2000;
    Index burn_in = 500;
    Index thinning = 1;
    std::uint64_t seed = 1;
    bool keep_states = true;

    void validate() const {
        if (iterations < 1 || burn_in < 0 || burn_in >= iterations) {
            fail(ErrorKind::config, "mcmc config: need 0 <= burn_in < iterations");
        }
        if (thinning < 1) {
            fail(ErrorKind::config, "mcmc config: thinning must be >= 1");
        }
    }

    Index kept() const { return (iterations - burn_in) / thinning; }
};

/// Priors for every block of the model. Component priors are indexed over
/// the series carrying that component, like ComponentCovariances.
struct PriorSet {
    InverseWishartPrior level;
    InverseWishartPrior slope;
    InverseWishartPrior seasonal;
    InverseWishartPrior cycle;
    InverseWishartPrior observation;
    SpikeSlabPrior regression;

    /// Weakly informative defaults scaled by the sample variance of each
    /// target series: IW(dim + 2, 0.01 diag(var)), inclusion 0.5, slab
    /// scale var(y_m).
    static PriorSet defaults(const ComponentSpec& spec, const MatrixXd& y, Index predictors,
                             double inclusion_prob = 0.5) {
        const Index series = y.cols();
        VectorXd var(series);
        for (Index m = 0; m < series; ++m) {
            const double mean = y.col(m).mean();
            const double ss = (y.col(m).array() - mean).square().sum();
            const double v = y.rows() > 1 ? ss / static_cast<double>(y.rows() - 1) : 0.0;
            var[m] = std::max(v, 1e-6 * std::max(1.0, mean * mean));
        }
        auto subset = [&](bool SeriesComponents::*flag) {
            const auto idx = spec.series_with(flag);
            VectorXd out(static_cast<Index>(idx.size()));
            for (std::size_t i = 0; i < idx.size(); ++i) {
                out[static_cast<Index>(i)] = var[idx[i]];
            }
            return out;
        };
        PriorSet p;
        p.level = InverseWishartPrior::weakly_informative(subset(&SeriesComponents::trend));
        p.slope = InverseWishartPrior::weakly_informative(subset(&SeriesComponents::trend));
        p.seasonal = InverseWishartPrior::weakly_informative(subset(&SeriesComponents::seasonal));
        p.cycle = InverseWishartPrior::weakly_informative(subset(&SeriesComponents::cycle));
        p.observation = InverseWishartPrior::weakly_informative(var);
        p.regression = SpikeSlabPrior::uniform(series, predictors, inclusion_prob);
        for (Index m = 0; m < series; ++m) {
            p.regression.slab_scale.row(m).setConstant(var[m]);
        }
        return p;
    }
};

/// One kept iteration of the chain.
struct Draw {
    MatrixXd beta;
    MatrixXi gamma;
    MatrixXd sigma_obs;
    MatrixXd sigma_level;
    MatrixXd sigma_slope;
    MatrixXd sigma_season;
    MatrixXd sigma_cycle;
    MatrixXd states;     // T x state_dim, empty unless keep_states
    VectorXd last_state; // state at the final training row

    ComponentCovariances covariances() const {
        return {sigma_level, sigma_slope, sigma_season, sigma_cycle, sigma_obs};
    }
};

struct PosteriorDraws {
    ComponentSpec spec;
    Index series = 0;
    Index predictors = 0;
    Index steps = 0;
    std::vector<Draw> draws;
    Index jitter_events = 0;

    bool empty() const { return draws.empty(); }
    Index size() const { return static_cast<Index>(draws.size()); }
};

namespace detail {

inline MatrixXd regression_effect(const std::vector<MatrixXd>& x, const MatrixXd& beta, Index steps) {
    const auto series = static_cast<Index>(x.size());
    MatrixXd out = MatrixXd::Zero(steps, series);
    if (beta.cols() == 0) {
        return out;
    }
    for (Index m = 0; m < series; ++m) {
        out.col(m) = x[static_cast<std::size_t>(m)] * beta.row(m).transpose();
    }
    return out;
}

inline MatrixXd shock_scatter(const MatrixXd& shocks, Index offset, Index width) {
    const auto block = shocks.middleCols(offset, width);
    return block.transpose() * block;
}

inline bool all_finite(const Draw& d) {
    return d.beta.allFinite() && d.sigma_obs.allFinite() && d.sigma_level.allFinite() &&
           d.sigma_slope.allFinite() && d.sigma_season.allFinite() && d.sigma_cycle.allFinite() &&
           d.last_state.allFinite();
}

} // namespace detail

/// Gibbs sampler for the multivariate structural model. Each iteration runs
/// states -> component covariances -> (beta, gamma) -> observation covariance.
/// `x` holds one T x d predictor matrix per series (d may be zero).
inline PosteriorDraws run_mcmc(const MatrixXd& y, const std::vector<MatrixXd>& x, const ComponentSpec& spec,
                               const PriorSet& priors, const McmcConfig& config) {
    config.validate();
    spec.validate();
    const Index steps = y.rows();
    const Index series = y.cols();
    if (spec.size() != series) {
        fail(ErrorKind::dimension, "run_mcmc: spec and data disagree on the number of series");
    }
    if (static_cast<Index>(x.size()) != series) {
        fail(ErrorKind::dimension, "run_mcmc: need one predictor matrix per series");
    }
    if (steps < 1 || !y.allFinite()) {
        fail(ErrorKind::data, "run_mcmc: observations must be non-empty and finite");
    }
    const Index d = x.front().cols();
    for (const auto& xm : x) {
        if (xm.rows() != steps || xm.cols() != d || !xm.allFinite()) {
            fail(ErrorKind::data, "run_mcmc: predictor matrices must be finite T x d");
        }
    }

    std::vector<bool> active(static_cast<std::size_t>(series));
    bool any_regression = false;
    for (Index m = 0; m < series; ++m) {
        active[static_cast<std::size_t>(m)] = spec.series[static_cast<std::size_t>(m)].regression && d > 0;
        any_regression = any_regression || active[static_cast<std::size_t>(m)];
    }

    Rng rng(config.seed);
    ComponentCovariances cov{priors.level.scale, priors.slope.scale, priors.seasonal.scale, priors.cycle.scale,
                             priors.observation.scale};
    MatrixXd beta = MatrixXd::Zero(series, d);
    MatrixXi gamma = MatrixXi::Zero(series, d);
    MatrixXd xi = MatrixXd::Zero(steps, series);

    PosteriorDraws out;
    out.spec = spec;
    out.series = series;
    out.predictors = d;
    out.steps = steps;
    out.draws.reserve(static_cast<std::size_t>(config.kept()));

    for (Index iter = 0; iter < config.iterations; ++iter) {
        const StateSpaceModel model = build_state_space(spec, series, cov);
        const StateLayout& lay = model.layout;
        MatrixXd states(steps, model.state_dim);
        MatrixXd signal = MatrixXd::Zero(steps, series);

        if (model.state_dim > 0) {
            states = simulate_states(model, y - xi, rng);
            signal = states * model.observation.transpose();
            const MatrixXd shocks = extract_shocks(model, states);
            const Index n_trend = static_cast<Index>(lay.trend_series.size());
            const Index n_season = static_cast<Index>(lay.seasonal_series.size());
            const Index n_cycle = static_cast<Index>(lay.cycle_series.size());
            const Index count = steps - 1;
            Index off = 0;
            if (n_trend > 0) {
                cov.level = draw_inverse_wishart(priors.level, count, detail::shock_scatter(shocks, off, n_trend), rng);
                off += n_trend;
                cov.slope = draw_inverse_wishart(priors.slope, count, detail::shock_scatter(shocks, off, n_trend), rng);
                off += n_trend;
            }
            if (n_season > 0) {
                cov.seasonal =
                    draw_inverse_wishart(priors.seasonal, count, detail::shock_scatter(shocks, off, n_season), rng);
                off += n_season;
            }
            if (n_cycle > 0) {
                const MatrixXd scatter =
                    detail::shock_scatter(shocks, off, n_cycle) + detail::shock_scatter(shocks, off + n_cycle, n_cycle);
                cov.cycle = draw_inverse_wishart(priors.cycle, 2 * count, scatter, rng);
            }
        }

        if (any_regression) {
            const RegressionSystem sys(priors.regression, y - signal, x, cov.observation, active);
            RegressionDraw rd = draw_beta_and_indicators(sys, gamma, rng);
            if (rd.jittered) {
                ++out.jitter_events;
            }
            beta = std::move(rd.beta);
            gamma = std::move(rd.gamma);
            xi = detail::regression_effect(x, beta, steps);
        }

        const MatrixXd resid = y - signal - xi;
        cov.observation = draw_inverse_wishart(priors.observation, steps, resid.transpose() * resid, rng);

        Draw draw{beta,
                  gamma,
                  cov.observation,
                  cov.level,
                  cov.slope,
                  cov.seasonal,
                  cov.cycle,
                  MatrixXd(),
                  model.state_dim > 0 ? VectorXd(states.row(steps - 1).transpose()) : VectorXd()};
        if (!detail::all_finite(draw) || !states.allFinite()) {
            fail(ErrorKind::numerical, "run_mcmc: chain produced non-finite values at iteration " + std::to_string(iter));
        }
        if (iter >= config.burn_in && (iter - config.burn_in) % config.thinning == 0 &&
            static_cast<Index>(out.draws.size()) < config.kept()) {
            if (config.keep_states) {
                draw.states = std::move(states);
            }
            out.draws.push_back(std::move(draw));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Posterior summaries
// ---------------------------------------------------------------------------

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" definition).
inline double quantile(std::vector<double> values, double prob) {
    if (values.empty()) {
        fail(ErrorKind::data, "quantile: empty sample");
    }
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct CoefficientSummary {
    Index series = 0;
    Index predictor = 0;
    double mean = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double inclusion_prob = 0.0;
};

/// Posterior mean, central credible interval at `level`, and inclusion
/// probability for every coefficient. Draws where the coefficient was
/// excluded contribute their exact zero.
inline std::vector<CoefficientSummary> coefficient_summary(const PosteriorDraws& draws, double level) {
    if (draws.empty()) {
        fail(ErrorKind::data, "coefficient_summary: no draws");
    }
    if (!(level > 0.0 && level < 1.0)) {
        fail(ErrorKind::config, "coefficient_summary: level must lie in (0, 1)");
    }
    std::vector<CoefficientSummary> out;
    const double lo = 0.5 * (1.0 - level);
    const double hi = 0.5 * (1.0 + level);
    std::vector<double> values(draws.draws.size());
    for (Index m = 0; m < draws.series; ++m) {
        for (Index j = 0; j < draws.predictors; ++j) {
            double incl = 0.0;
            for (std::size_t i = 0; i < draws.draws.size(); ++i) {
                values[i] = draws.draws[i].beta(m, j);
                incl += draws.draws[i].gamma(m, j);
            }
            CoefficientSummary s;
            s.series = m;
            s.predictor = j;
            double sum = 0.0;
            for (double v : values) {
                sum += v;
            }
            s.mean = sum / static_cast<double>(values.size());
            s.lower = quantile(values, lo);
            s.upper = quantile(values, hi);
            s.inclusion_prob = incl / static_cast<double>(values.size());
            out.push_back(s);
        }
    }
    return out;
}

/// Per-draw one-step-ahead predictive mean: Z (T a_last + c) + beta x_next.
/// `x_next` holds one predictor row per series (M x d). Returns kept x M.
inline MatrixXd one_step_forecast(const PosteriorDraws& draws, const MatrixXd& x_next) {
    if (draws.empty()) {
        fail(ErrorKind::data, "one_step_forecast: no draws");
    }
    if (x_next.rows() != draws.series || x_next.cols() != draws.predictors) {
        fail(ErrorKind::dimension, "one_step_forecast: predictor row block must be M x d");
    }
    const StateSpaceModel model = build_state_space(draws.spec, draws.series, draws.draws.front().covariances());
    MatrixXd out(draws.size(), draws.series);
    for (Index i = 0; i < draws.size(); ++i) {
        const Draw& d = draws.draws[static_cast<std::size_t>(i)];
        VectorXd yhat = VectorXd::Zero(draws.series);
        if (model.state_dim > 0) {
            yhat = model.observation * (model.transition * d.last_state + model.state_intercept);
        }
        if (draws.predictors > 0) {
            yhat += (d.beta.cwiseProduct(x_next)).rowwise().sum();
        }
        out.row(i) = yhat.transpose();
    }
    return out;
}

/// Columnar dump of the kept draws, one row per draw. Columns: draw,
/// beta_<m>_<j>, gamma_<m>_<j>, then the upper triangle of each covariance
/// as sigma_<block>_<i>_<j> for block in obs, level, slope, season, cycle.
inline void write_draws_csv(std::ostream& os, const PosteriorDraws& draws) {
    if (draws.empty()) {
        fail(ErrorKind::data, "write_draws_csv: no draws");
    }
    const Draw& first = draws.draws.front();
    auto tri_header = [&](const char* name, const MatrixXd& m) {
        for (Index i = 0; i < m.rows(); ++i) {
            for (Index j = i; j < m.cols(); ++j) {
                os << ",sigma_" << name << '_' << i << '_' << j;
            }
        }
    };
    os << "draw";
    for (Index m = 0; m < draws.series; ++m) {
        for (Index j = 0; j < draws.predictors; ++j) {
            os << ",beta_" << m << '_' << j;
        }
    }
    for (Index m = 0; m < draws.series; ++m) {
        for (Index j = 0; j < draws.predictors; ++j) {
            os << ",gamma_" << m << '_' << j;
        }
    }
    tri_header("obs", first.sigma_obs);
    tri_header("level", first.sigma_level);
    tri_header("slope", first.sigma_slope);
    tri_header("season", first.sigma_season);
    tri_header("cycle", first.sigma_cycle);
    os << '\n';

    const auto old_precision = os.precision(std::numeric_limits<double>::max_digits10);
    auto tri = [&](const MatrixXd& m) {
        for (Index i = 0; i < m.rows(); ++i) {
            for (Index j = i; j < m.cols(); ++j) {
                os << ',' << m(i, j);
            }
        }
    };
    for (std::size_t k = 0; k < draws.draws.size(); ++k) {
        const Draw& d = draws.draws[k];
        os << k;
        for (Index m = 0; m < draws.series; ++m) {
            for (Index j = 0; j < draws.predictors; ++j) {
                os << ',' << d.beta(m, j);
            }
        }
        for (Index m = 0; m < draws.series; ++m) {
            for (Index j = 0; j < draws.predictors; ++j) {
                os << ',' << d.gamma(m, j);
            }
        }
        tri(d.sigma_obs);
        tri(d.sigma_level);
        tri(d.sigma_slope);
        tri(d.sigma_season);
        tri(d.sigma_cycle);
        os << '\n';
    }
    os.precision(old_precision);
}

} // namespace mbsts
