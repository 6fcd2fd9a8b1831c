#pragma once

#include "mbsts/error.hpp"
#include "mbsts/linalg.hpp"
#include "mbsts/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace mbsts {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Component specification
// ---------------------------------------------------------------------------

/// Which structural components one target series carries.
struct SeriesComponents {
    bool trend = true;
    bool seasonal = true;
    bool cycle = true;
    bool regression = true;
    int seasons = 4;
};

/// Per-series component flags plus the shared hyper-parameters: slope
/// autoregression `rho`, long-term slope, cycle `damping` and `frequency`.
struct ComponentSpec {
    std::vector<SeriesComponents> series;
    double rho = 0.6;
    VectorXd long_term_slope; // empty means zero for every series
    double damping = 0.5;
    double frequency = 0.0;

    static ComponentSpec uniform(Index series_count, SeriesComponents components = {}) {
        ComponentSpec spec;
        spec.series.assign(static_cast<std::size_t>(series_count), components);
        return spec;
    }

    Index size() const { return static_cast<Index>(series.size()); }

    double slope_target(Index m) const {
        return long_term_slope.size() == 0 ? 0.0 : long_term_slope[m];
    }

    std::vector<Index> series_with(bool SeriesComponents::*flag) const {
        std::vector<Index> out;
        for (Index m = 0; m < size(); ++m) {
            if (series[static_cast<std::size_t>(m)].*flag) {
                out.push_back(m);
            }
        }
        return out;
    }

    bool any(bool SeriesComponents::*flag) const { return !series_with(flag).empty(); }

    void set_seasons(int s) {
        for (auto& c : series) {
            c.seasons = s;
        }
    }

    void validate() const {
        if (series.empty()) {
            fail(ErrorKind::config, "component spec: no series");
        }
        if (!(rho > 0.0 && rho <= 1.0)) {
            fail(ErrorKind::config, "component spec: rho must lie in (0, 1], got " + std::to_string(rho));
        }
        if (!(damping > 0.0 && damping < 1.0)) {
            fail(ErrorKind::config, "component spec: damping must lie in (0, 1), got " + std::to_string(damping));
        }
        if (!(frequency >= 0.0 && frequency <= std::numbers::pi)) {
            fail(ErrorKind::config, "component spec: frequency must lie in [0, pi], got " + std::to_string(frequency));
        }
        if (long_term_slope.size() != 0 && long_term_slope.size() != size()) {
            fail(ErrorKind::dimension, "component spec: long_term_slope must have one entry per series");
        }
        for (std::size_t m = 0; m < series.size(); ++m) {
            const auto& c = series[m];
            if (!(c.trend || c.seasonal || c.cycle || c.regression)) {
                fail(ErrorKind::config, "component spec: series " + std::to_string(m) + " has no component");
            }
            if (c.seasonal && c.seasons < 2) {
                fail(ErrorKind::config, "component spec: seasons must be >= 2 for series " + std::to_string(m));
            }
        }
    }
};

/// Shock covariances. Each block is indexed over the series that carry the
/// component, in series order; `observation` is the full M x M matrix.
struct ComponentCovariances {
    MatrixXd level;
    MatrixXd slope;
    MatrixXd seasonal;
    MatrixXd cycle;
    MatrixXd observation;

    static ComponentCovariances diagonal(const ComponentSpec& spec, double state_var, double obs_var) {
        auto sq = [&](bool SeriesComponents::*flag) {
            const auto n = static_cast<Index>(spec.series_with(flag).size());
            return MatrixXd(state_var * MatrixXd::Identity(n, n));
        };
        ComponentCovariances c;
        c.level = sq(&SeriesComponents::trend);
        c.slope = sq(&SeriesComponents::trend);
        c.seasonal = sq(&SeriesComponents::seasonal);
        c.cycle = sq(&SeriesComponents::cycle);
        c.observation = obs_var * MatrixXd::Identity(spec.size(), spec.size());
        return c;
    }
};

// ---------------------------------------------------------------------------
// State-space system
// ---------------------------------------------------------------------------

/// Slot bookkeeping for the stacked state. States are ordered component by
/// component: levels, slopes, seasonal blocks, cycle, cycle*.
struct StateLayout {
    std::vector<Index> trend_series;
    std::vector<Index> seasonal_series;
    std::vector<Index> cycle_series;

    Index level_offset = 0;
    Index slope_offset = 0;
    Index season_offset = 0;
    Index cycle_offset = 0;
    Index cycle_star_offset = 0;
    std::vector<Index> season_start; // parallel to seasonal_series
    std::vector<Index> season_length;

    Index state_dim = 0;
    Index shock_dim = 0;
    /// State slot receiving shock k.
    std::vector<Index> shock_slot;
};

struct StateSpaceModel {
    StateLayout layout;
    Index state_dim = 0;
    Index obs_dim = 0;

    MatrixXd transition;
    VectorXd state_intercept;
    MatrixXd observation;
    MatrixXd selector;
    MatrixXd shock_cov;
    MatrixXd obs_cov;
    MatrixXd state_noise_cov; // selector * shock_cov * selectorᵀ

    VectorXd initial_mean;
    MatrixXd initial_cov;

    /// Z α for one state vector.
    VectorXd signal(const VectorXd& state) const { return observation * state; }
};

struct InitialStatePrior {
    double diffuse_variance = 1e6;
    /// Start the cycle block from its stationary distribution instead of the
    /// diffuse one (the cycle is a damped stationary process).
    bool stationary_cycle = true;
};

namespace detail {

inline void check_block(const MatrixXd& m, Index n, const std::string& name) {
    linalg::require_square(m, n, name);
    if (n > 0 && !linalg::is_psd(m)) {
        fail(ErrorKind::numerical, name + ": covariance is not symmetric positive semi-definite");
    }
}

} // namespace detail

inline StateSpaceModel build_state_space(const ComponentSpec& spec, Index series_count,
                                         const ComponentCovariances& cov,
                                         const InitialStatePrior& init = {}) {
    spec.validate();
    if (series_count != spec.size()) {
        fail(ErrorKind::dimension, "build_state_space: spec describes " + std::to_string(spec.size()) +
                                       " series, caller passed " + std::to_string(series_count));
    }

    StateLayout lay;
    lay.trend_series = spec.series_with(&SeriesComponents::trend);
    lay.seasonal_series = spec.series_with(&SeriesComponents::seasonal);
    lay.cycle_series = spec.series_with(&SeriesComponents::cycle);
    const auto n_trend = static_cast<Index>(lay.trend_series.size());
    const auto n_season = static_cast<Index>(lay.seasonal_series.size());
    const auto n_cycle = static_cast<Index>(lay.cycle_series.size());

    detail::check_block(cov.level, n_trend, "level covariance");
    detail::check_block(cov.slope, n_trend, "slope covariance");
    detail::check_block(cov.seasonal, n_season, "seasonal covariance");
    detail::check_block(cov.cycle, n_cycle, "cycle covariance");
    detail::check_block(cov.observation, series_count, "observation covariance");

    Index pos = 0;
    lay.level_offset = pos;
    pos += n_trend;
    lay.slope_offset = pos;
    pos += n_trend;
    lay.season_offset = pos;
    for (Index m : lay.seasonal_series) {
        const Index len = spec.series[static_cast<std::size_t>(m)].seasons - 1;
        lay.season_start.push_back(pos);
        lay.season_length.push_back(len);
        pos += len;
    }
    lay.cycle_offset = pos;
    pos += n_cycle;
    lay.cycle_star_offset = pos;
    pos += n_cycle;
    lay.state_dim = pos;

    for (Index i = 0; i < n_trend; ++i) lay.shock_slot.push_back(lay.level_offset + i);
    for (Index i = 0; i < n_trend; ++i) lay.shock_slot.push_back(lay.slope_offset + i);
    for (Index start : lay.season_start) lay.shock_slot.push_back(start);
    for (Index i = 0; i < n_cycle; ++i) lay.shock_slot.push_back(lay.cycle_offset + i);
    for (Index i = 0; i < n_cycle; ++i) lay.shock_slot.push_back(lay.cycle_star_offset + i);
    lay.shock_dim = static_cast<Index>(lay.shock_slot.size());

    const Index n = lay.state_dim;
    StateSpaceModel model;
    model.state_dim = n;
    model.obs_dim = series_count;
    model.transition = MatrixXd::Zero(n, n);
    model.state_intercept = VectorXd::Zero(n);
    model.observation = MatrixXd::Zero(series_count, n);
    model.selector = MatrixXd::Zero(n, lay.shock_dim);
    model.shock_cov = MatrixXd::Zero(lay.shock_dim, lay.shock_dim);
    model.initial_mean = VectorXd::Zero(n);
    model.initial_cov = init.diffuse_variance * MatrixXd::Identity(n, n);

    MatrixXd& tr = model.transition;
    for (Index i = 0; i < n_trend; ++i) {
        const Index lv = lay.level_offset + i;
        const Index sl = lay.slope_offset + i;
        tr(lv, lv) = 1.0;
        tr(lv, sl) = 1.0;
        tr(sl, sl) = spec.rho;
        model.state_intercept[sl] = spec.slope_target(lay.trend_series[static_cast<std::size_t>(i)]) * (1.0 - spec.rho);
        model.observation(lay.trend_series[static_cast<std::size_t>(i)], lv) = 1.0;
    }
    for (std::size_t i = 0; i < lay.seasonal_series.size(); ++i) {
        const Index start = lay.season_start[i];
        const Index len = lay.season_length[i];
        for (Index k = 0; k < len; ++k) {
            tr(start, start + k) = -1.0;
        }
        for (Index k = 1; k < len; ++k) {
            tr(start + k, start + k - 1) = 1.0;
        }
        model.observation(lay.seasonal_series[i], start) = 1.0;
    }
    const double c = spec.damping * std::cos(spec.frequency);
    const double s = spec.damping * std::sin(spec.frequency);
    for (Index i = 0; i < n_cycle; ++i) {
        const Index w = lay.cycle_offset + i;
        const Index ws = lay.cycle_star_offset + i;
        tr(w, w) = c;
        tr(w, ws) = s;
        tr(ws, w) = -s;
        tr(ws, ws) = c;
        model.observation(lay.cycle_series[static_cast<std::size_t>(i)], w) = 1.0;
    }

    for (Index k = 0; k < lay.shock_dim; ++k) {
        model.selector(lay.shock_slot[static_cast<std::size_t>(k)], k) = 1.0;
    }
    Index off = 0;
    auto place = [&](const MatrixXd& block) {
        model.shock_cov.block(off, off, block.rows(), block.cols()) = block;
        off += block.rows();
    };
    place(cov.level);
    place(cov.slope);
    place(cov.seasonal);
    place(cov.cycle);
    place(cov.cycle);
    linalg::symmetrize(model.shock_cov);

    model.obs_cov = cov.observation;
    linalg::symmetrize(model.obs_cov);
    model.state_noise_cov = model.selector * model.shock_cov * model.selector.transpose();

    if (init.stationary_cycle && n_cycle > 0) {
        const MatrixXd stat = cov.cycle / (1.0 - spec.damping * spec.damping);
        model.initial_cov.block(lay.cycle_offset, lay.cycle_offset, n_cycle, n_cycle) = stat;
        model.initial_cov.block(lay.cycle_star_offset, lay.cycle_star_offset, n_cycle, n_cycle) = stat;
    }
    linalg::symmetrize(model.initial_cov);
    model.layout = std::move(lay);
    return model;
}

// ---------------------------------------------------------------------------
// Filtering and smoothing
// ---------------------------------------------------------------------------

/// Kalman filter output. Index t refers to observation row t; "predicted"
/// quantities condition on rows < t, "filtered" on rows <= t.
struct FilterResult {
    std::vector<VectorXd> predicted_mean;
    std::vector<MatrixXd> predicted_cov;
    std::vector<VectorXd> filtered_mean;
    std::vector<MatrixXd> filtered_cov;
    std::vector<VectorXd> innovation;
    std::vector<MatrixXd> innovation_cov;
    std::vector<MatrixXd> innovation_cov_inv;
    std::vector<MatrixXd> gain; // P Zᵀ F⁻¹
    double log_likelihood = 0.0;

    Index size() const { return static_cast<Index>(filtered_mean.size()); }
};

struct SmootherResult {
    std::vector<VectorXd> mean;
    std::vector<MatrixXd> cov;
};

namespace detail {

inline void check_observations(const StateSpaceModel& model, const MatrixXd& y) {
    if (y.rows() < 1) {
        fail(ErrorKind::dimension, "observations: need at least one row");
    }
    if (y.cols() != model.obs_dim) {
        fail(ErrorKind::dimension, "observations: expected " + std::to_string(model.obs_dim) + " columns, got " +
                                       std::to_string(y.cols()));
    }
    if (!y.allFinite()) {
        fail(ErrorKind::data, "observations: missing or non-finite values are not supported");
    }
}

inline const Eigen::LLT<MatrixXd>& factor_innovation(Eigen::LLT<MatrixXd>& llt, const MatrixXd& f, Index t) {
    llt.compute(f);
    if (llt.info() != Eigen::Success) {
        fail(ErrorKind::numerical, "kalman_filter: singular innovation covariance at t=" + std::to_string(t));
    }
    return llt;
}

} // namespace detail

inline FilterResult kalman_filter(const StateSpaceModel& model, const MatrixXd& observations) {
    detail::check_observations(model, observations);
    const Index steps = observations.rows();
    const Index p = model.obs_dim;
    const MatrixXd& z = model.observation;
    const MatrixXd& tr = model.transition;
    const double log2pi = std::log(2.0 * std::numbers::pi);

    FilterResult out;
    out.predicted_mean.reserve(static_cast<std::size_t>(steps));
    VectorXd a = model.initial_mean;
    MatrixXd pcov = model.initial_cov;
    Eigen::LLT<MatrixXd> llt;
    const MatrixXd ident = MatrixXd::Identity(p, p);

    for (Index t = 0; t < steps; ++t) {
        VectorXd v = observations.row(t).transpose() - z * a;
        MatrixXd pzt = pcov * z.transpose();
        MatrixXd f = z * pzt + model.obs_cov;
        linalg::symmetrize(f);
        detail::factor_innovation(llt, f, t);
        MatrixXd finv = llt.solve(ident);
        MatrixXd k = pzt * finv;

        VectorXd af = a + k * v;
        MatrixXd pf = pcov - k * pzt.transpose();
        linalg::symmetrize(pf);

        const MatrixXd l = llt.matrixL();
        const double log_det = 2.0 * l.diagonal().array().log().sum();
        out.log_likelihood += -0.5 * (static_cast<double>(p) * log2pi + log_det + v.dot(finv * v));

        out.predicted_mean.push_back(a);
        out.predicted_cov.push_back(pcov);
        out.filtered_mean.push_back(af);
        out.filtered_cov.push_back(pf);
        out.innovation.push_back(std::move(v));
        out.innovation_cov.push_back(std::move(f));
        out.innovation_cov_inv.push_back(std::move(finv));
        out.gain.push_back(std::move(k));

        a = tr * af + model.state_intercept;
        pcov = tr * pf * tr.transpose() + model.state_noise_cov;
        linalg::symmetrize(pcov);
    }
    return out;
}

/// Fixed-interval smoother written in terms of the filtered moments:
/// mean_t = a_{t|t} + P_{t|t} Tᵀ r_t, cov_t = P_{t|t} - P_{t|t} Tᵀ N_t T P_{t|t},
/// with the backward cumulants r, N starting at zero after the last row.
inline SmootherResult kalman_smoother(const StateSpaceModel& model, const FilterResult& filter) {
    const Index steps = filter.size();
    const Index n = model.state_dim;
    const MatrixXd& z = model.observation;
    const MatrixXd& tr = model.transition;

    SmootherResult out;
    out.mean.resize(static_cast<std::size_t>(steps));
    out.cov.resize(static_cast<std::size_t>(steps));
    VectorXd r = VectorXd::Zero(n);
    MatrixXd nn = MatrixXd::Zero(n, n);
    for (Index t = steps - 1; t >= 0; --t) {
        const auto ut = static_cast<std::size_t>(t);
        const MatrixXd& pf = filter.filtered_cov[ut];
        if (t == steps - 1) {
            out.mean[ut] = filter.filtered_mean[ut];
            out.cov[ut] = pf;
        } else {
            const MatrixXd ptt = pf * tr.transpose();
            out.mean[ut] = filter.filtered_mean[ut] + ptt * r;
            MatrixXd c = pf - ptt * nn * ptt.transpose();
            linalg::symmetrize(c);
            out.cov[ut] = std::move(c);
        }
        // r_{t-1} = Zᵀ F⁻¹ v + (I - K Z)ᵀ Tᵀ r_t, and likewise for N.
        const MatrixXd& finv = filter.innovation_cov_inv[ut];
        const MatrixXd& k = filter.gain[ut];
        const MatrixXd lt = (MatrixXd::Identity(n, n) - k * z).transpose() * tr.transpose();
        r = z.transpose() * (finv * filter.innovation[ut]) + lt * r;
        nn = z.transpose() * finv * z + lt * nn * lt.transpose();
        linalg::symmetrize(nn);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct SimulatedPath {
    MatrixXd states;       // T x state_dim
    MatrixXd observations; // T x obs_dim
};

namespace detail {

struct NoiseFactors {
    MatrixXd initial;
    MatrixXd state; // selector * chol(shock_cov)
    MatrixXd obs;
};

inline NoiseFactors noise_factors(const StateSpaceModel& model) {
    return {linalg::psd_factor(model.initial_cov), model.selector * linalg::psd_factor(model.shock_cov),
            linalg::psd_factor(model.obs_cov)};
}

inline SimulatedPath simulate_path(const StateSpaceModel& model, const NoiseFactors& nf, Index steps, Rng& rng,
                                   const VectorXd* initial_state, bool zero_mean) {
    const Index n = model.state_dim;
    const Index p = model.obs_dim;
    SimulatedPath out{MatrixXd(steps, n), MatrixXd(steps, p)};
    VectorXd alpha;
    if (initial_state != nullptr) {
        alpha = *initial_state;
    } else {
        alpha = nf.initial * std_normal_vector(n, rng);
        if (!zero_mean) {
            alpha += model.initial_mean;
        }
    }
    for (Index t = 0; t < steps; ++t) {
        out.states.row(t) = alpha.transpose();
        out.observations.row(t) = (model.observation * alpha + nf.obs * std_normal_vector(p, rng)).transpose();
        if (t + 1 < steps) {
            VectorXd next = model.transition * alpha + nf.state * std_normal_vector(nf.state.cols(), rng);
            if (!zero_mean) {
                next += model.state_intercept;
            }
            alpha = std::move(next);
        }
    }
    return out;
}

/// Means-only smoother used by the simulation smoother. Only gains and
/// innovations are kept; smoothed states are rebuilt forward from the
/// backward cumulants, so no covariance history is stored.
inline MatrixXd fast_smoothed_means(const StateSpaceModel& model, const MatrixXd& y, bool zero_mean) {
    const Index steps = y.rows();
    const Index n = model.state_dim;
    const Index p = model.obs_dim;
    const MatrixXd& z = model.observation;
    const MatrixXd& tr = model.transition;
    const MatrixXd zt = z.transpose();

    std::vector<VectorXd> innov(static_cast<std::size_t>(steps));
    std::vector<MatrixXd> finv(static_cast<std::size_t>(steps));
    std::vector<MatrixXd> gain(static_cast<std::size_t>(steps));

    VectorXd a = zero_mean ? VectorXd::Zero(n) : model.initial_mean;
    MatrixXd pcov = model.initial_cov;
    MatrixXd pzt(n, p), f(p, p), pf(n, n);
    Eigen::LLT<MatrixXd> llt;
    const MatrixXd ident = MatrixXd::Identity(p, p);
    for (Index t = 0; t < steps; ++t) {
        const auto ut = static_cast<std::size_t>(t);
        innov[ut] = y.row(t).transpose() - z * a;
        pzt.noalias() = pcov * zt;
        f.noalias() = z * pzt;
        f += model.obs_cov;
        detail::factor_innovation(llt, f, t);
        finv[ut] = llt.solve(ident);
        gain[ut].noalias() = pzt * finv[ut];
        a += gain[ut] * innov[ut];
        pf = pcov;
        pf.noalias() -= gain[ut] * pzt.transpose();
        VectorXd next = tr * a;
        if (!zero_mean) {
            next += model.state_intercept;
        }
        a = std::move(next);
        pcov.noalias() = tr * pf * tr.transpose();
        pcov += model.state_noise_cov;
        linalg::symmetrize(pcov);
    }

    std::vector<VectorXd> r_after(static_cast<std::size_t>(steps));
    VectorXd r = VectorXd::Zero(n);
    VectorXd u(n);
    VectorXd r_first;
    for (Index t = steps - 1; t >= 0; --t) {
        const auto ut = static_cast<std::size_t>(t);
        r_after[ut] = r;
        u.noalias() = tr.transpose() * r;
        VectorXd kt_u = gain[ut].transpose() * u;
        r = zt * (finv[ut] * innov[ut] - kt_u) + u;
    }
    r_first = r;

    MatrixXd out(steps, n);
    VectorXd alpha = (zero_mean ? VectorXd::Zero(n) : model.initial_mean) + model.initial_cov * r_first;
    for (Index t = 0; t < steps; ++t) {
        out.row(t) = alpha.transpose();
        if (t + 1 < steps) {
            VectorXd next = tr * alpha + model.state_noise_cov * r_after[static_cast<std::size_t>(t)];
            if (!zero_mean) {
                next += model.state_intercept;
            }
            alpha = std::move(next);
        }
    }
    return out;
}

} // namespace detail

/// Draws a trajectory from the generative model. When `initial_state` is
/// given the chain starts there instead of sampling N(initial_mean, initial_cov).
inline SimulatedPath simulate_forward(const StateSpaceModel& model, Index steps, Rng& rng,
                                      const std::optional<VectorXd>& initial_state = std::nullopt) {
    if (steps < 1) {
        fail(ErrorKind::dimension, "simulate_forward: need at least one step");
    }
    if (initial_state && initial_state->size() != model.state_dim) {
        fail(ErrorKind::dimension, "simulate_forward: initial state has wrong dimension");
    }
    const auto nf = detail::noise_factors(model);
    return detail::simulate_path(model, nf, steps, rng, initial_state ? &*initial_state : nullptr, false);
}

inline SimulatedPath simulate_forward(const StateSpaceModel& model, Index steps, std::uint64_t seed,
                                      const std::optional<VectorXd>& initial_state = std::nullopt) {
    Rng rng(seed);
    return simulate_forward(model, steps, rng, initial_state);
}

/// One draw from p(states | observations) by mean correction: simulate an
/// unconditional (states⁺, y⁺) pair, then add the smoothed mean of the
/// zero-mean model applied to y - y⁺.
inline MatrixXd simulate_states(const StateSpaceModel& model, const MatrixXd& observations, Rng& rng) {
    detail::check_observations(model, observations);
    if (model.state_dim == 0) {
        return MatrixXd(observations.rows(), 0);
    }
    const auto nf = detail::noise_factors(model);
    SimulatedPath plus = detail::simulate_path(model, nf, observations.rows(), rng, nullptr, false);
    const MatrixXd diff = observations - plus.observations;
    return plus.states + detail::fast_smoothed_means(model, diff, true);
}

inline MatrixXd simulate_states(const StateSpaceModel& model, const MatrixXd& observations, std::uint64_t seed) {
    Rng rng(seed);
    return simulate_states(model, observations, rng);
}

/// Shock realisations implied by a state path: row t holds the shocks that
/// moved the state from row t to row t+1 (one column per shock slot).
inline MatrixXd extract_shocks(const StateSpaceModel& model, const MatrixXd& states) {
    const Index steps = states.rows();
    const auto& slots = model.layout.shock_slot;
    MatrixXd out(std::max<Index>(steps - 1, 0), model.layout.shock_dim);
    for (Index t = 0; t + 1 < steps; ++t) {
        VectorXd resid = states.row(t + 1).transpose() - model.transition * states.row(t).transpose() -
                         model.state_intercept;
        for (std::size_t k = 0; k < slots.size(); ++k) {
            out(t, static_cast<Index>(k)) = resid[slots[k]];
        }
    }
    return out;
}

} // namespace mbsts
