#pragma once

#include "mbsts/error.hpp"
#include "mbsts/panel.hpp"
#include "mbsts/rng.hpp"
#include "mbsts/statespace.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace mbsts {

/// Generator settings for a synthetic panel. The structural part follows
/// `spec` and `covariances`; the regression part adds beta_mᵀ x_m(t - true_lag).
struct SyntheticConfig {
    Index series = 2;
    Index predictors = 8;
    Index steps = 150;
    MatrixXd beta; // M x d; empty means all zero
    int true_lag = 0;
    ComponentSpec spec;
    ComponentCovariances covariances;
    VectorXd initial_state; // empty means the zero state
    double x_autocorrelation = 0.5;
    int first_week = 1;
    std::uint64_t seed = 1;

    /// Local-level-plus-regression panel: level near `level`, the first
    /// `true_predictors` coefficients of each unit set to +/- `magnitude`,
    /// observation noise with unit variance and cross-series correlation
    /// `obs_correlation`.
    static SyntheticConfig standard(Index series, Index predictors, Index steps, int true_lag, std::uint64_t seed,
                                    Index true_predictors = 2, double magnitude = 3.0, double level = 50.0,
                                    double obs_correlation = 0.5) {
        SyntheticConfig c;
        c.series = series;
        c.predictors = predictors;
        c.steps = steps;
        c.true_lag = true_lag;
        c.seed = seed;
        SeriesComponents comp;
        comp.trend = true;
        comp.seasonal = false;
        comp.cycle = false;
        comp.regression = true;
        c.spec = ComponentSpec::uniform(series, comp);
        c.spec.rho = 0.6;
        c.covariances = ComponentCovariances::diagonal(c.spec, 0.05, 1.0);
        c.covariances.slope *= 0.01;
        MatrixXd corr = MatrixXd::Constant(series, series, obs_correlation);
        corr.diagonal().setOnes();
        c.covariances.observation = corr;
        c.beta = MatrixXd::Zero(series, predictors);
        for (Index m = 0; m < series; ++m) {
            for (Index j = 0; j < std::min(true_predictors, predictors); ++j) {
                c.beta(m, j) = (j % 2 == 0 ? 1.0 : -1.0) * magnitude;
            }
        }
        const auto lay = build_state_space(c.spec, series, c.covariances).layout;
        c.initial_state = VectorXd::Zero(lay.state_dim);
        c.initial_state.segment(lay.level_offset, static_cast<Index>(lay.trend_series.size())).setConstant(level);
        return c;
    }

    void validate() const {
        if (series < 1 || steps < 1 || predictors < 0) {
            fail(ErrorKind::config, "synthetic config: need series >= 1, steps >= 1, predictors >= 0");
        }
        if (true_lag < 0) {
            fail(ErrorKind::config, "synthetic config: true lag must be non-negative");
        }
        if (beta.size() != 0 && (beta.rows() != series || beta.cols() != predictors)) {
            fail(ErrorKind::dimension, "synthetic config: beta must be M x d");
        }
        if (spec.size() != series) {
            fail(ErrorKind::dimension, "synthetic config: spec series count differs from M");
        }
        if (!(std::abs(x_autocorrelation) < 1.0)) {
            fail(ErrorKind::config, "synthetic config: predictor autocorrelation must lie in (-1, 1)");
        }
    }
};

struct SyntheticTruth {
    MatrixXd beta;
    MatrixXi gamma;
    int lag = 0;
    ComponentCovariances covariances;
    MatrixXd states;     // T x state_dim
    MatrixXd regression; // T x M, the lagged regression contribution
    std::uint64_t seed = 0;
};

struct SyntheticPanel {
    PanelDataset panel;
    SyntheticTruth truth;
};

/// Builds a panel from the generative model. Predictors are independent
/// stationary AR(1) series with unit marginal variance.
inline SyntheticPanel generate_synthetic(const SyntheticConfig& config) {
    config.validate();
    const Index m_count = config.series;
    const Index d = config.predictors;
    const Index steps = config.steps;
    const Index lag = config.true_lag;
    const MatrixXd beta = config.beta.size() == 0 ? MatrixXd::Zero(m_count, d) : config.beta;

    Rng rng(derive_seed(config.seed, {0x5e71}));
    const double phi = config.x_autocorrelation;
    const double innov_sd = std::sqrt(1.0 - phi * phi);
    std::vector<MatrixXd> x_full(static_cast<std::size_t>(m_count), MatrixXd(steps + lag, d));
    for (auto& x : x_full) {
        for (Index j = 0; j < d; ++j) {
            double v = std_normal(rng);
            for (Index t = 0; t < steps + lag; ++t) {
                if (t > 0) {
                    v = phi * v + innov_sd * std_normal(rng);
                }
                x(t, j) = v;
            }
        }
    }

    const StateSpaceModel model = build_state_space(config.spec, m_count, config.covariances);
    std::optional<VectorXd> init;
    if (config.initial_state.size() != 0) {
        init = config.initial_state;
    } else {
        init = VectorXd::Zero(model.state_dim);
    }
    Rng path_rng(derive_seed(config.seed, {0x9a7b}));
    const SimulatedPath path = simulate_forward(model, steps, path_rng, init);

    SyntheticPanel out;
    PanelDataset& p = out.panel;
    p.first_week = config.first_week;
    p.outcome_name = "case_rate";
    for (Index j = 0; j < d; ++j) {
        p.predictor_names.push_back("x" + std::to_string(j + 1));
    }
    const int digits = static_cast<int>(std::to_string(m_count).size());
    MatrixXd regression(steps, m_count);
    for (Index m = 0; m < m_count; ++m) {
        std::string name = std::to_string(m + 1);
        p.units.push_back("U" + std::string(static_cast<std::size_t>(digits) - name.size(), '0') + name);
        const MatrixXd& x = x_full[static_cast<std::size_t>(m)];
        // Panel row t carries x(t) = full row t + lag; y(t) sees full row t = x(t - lag).
        p.predictors.push_back(x.middleRows(lag, steps));
        regression.col(m) = d > 0 ? VectorXd(x.topRows(steps) * beta.row(m).transpose()) : VectorXd::Zero(steps);
    }
    p.outcome = path.observations + regression;

    out.truth.beta = beta;
    out.truth.gamma = (beta.array() != 0.0).cast<int>();
    out.truth.lag = config.true_lag;
    out.truth.covariances = config.covariances;
    out.truth.states = path.states;
    out.truth.regression = std::move(regression);
    out.truth.seed = config.seed;
    p.validate();
    return out;
}

} // namespace mbsts
