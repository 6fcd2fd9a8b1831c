#pragma once

#include "mbsts/csv.hpp"
#include "mbsts/error.hpp"
#include "mbsts/panel.hpp"
#include "mbsts/rng.hpp"
#include "mbsts/sampler.hpp"
#include "mbsts/statespace.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace mbsts {

// ---------------------------------------------------------------------------
// Partitions and lag alignment
// ---------------------------------------------------------------------------

/// Inclusive week interval [start, end].
struct Segment {
    int start = 0;
    int end = 0;

    int length() const { return end - start + 1; }
    bool operator==(const Segment&) const = default;
};

struct PartitionPlan {
    std::vector<Segment> segments;

    Index size() const { return static_cast<Index>(segments.size()); }

    /// Weeks 9-22, 23-37 and 38-53 of a 53-week year.
    static PartitionPlan three_periods() { return {{{9, 22}, {23, 37}, {38, 53}}}; }

    /// Parses "9:22,23:37,38:53".
    static PartitionPlan parse(const std::string& text) {
        PartitionPlan plan;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto comma = std::min(text.find(',', pos), text.size());
            const std::string item = text.substr(pos, comma - pos);
            const auto colon = item.find(':');
            long long a = 0, b = 0;
            if (colon == std::string::npos || !csv::parse_int(item.substr(0, colon), a) ||
                !csv::parse_int(item.substr(colon + 1), b)) {
                fail(ErrorKind::config, "segments: expected start:end, got '" + item + "'");
            }
            plan.segments.push_back({static_cast<int>(a), static_cast<int>(b)});
            pos = comma + 1;
        }
        return plan;
    }

    /// Segments must be non-overlapping, increasing, inside the panel, and
    /// long enough for `max_lag` (length > lag + 2).
    void validate(const PanelDataset& panel, int max_lag) const {
        if (segments.empty()) {
            fail(ErrorKind::config, "partition: no segments");
        }
        for (std::size_t k = 0; k < segments.size(); ++k) {
            const Segment& s = segments[k];
            const std::string name = "segment [" + std::to_string(s.start) + "," + std::to_string(s.end) + "]";
            if (s.end < s.start) {
                fail(ErrorKind::config, name + " is empty");
            }
            if (k > 0 && s.start <= segments[k - 1].end) {
                fail(ErrorKind::config, name + " overlaps or precedes the previous segment");
            }
            if (s.start < panel.first_week || s.end > panel.last_week()) {
                fail(ErrorKind::config, name + " lies outside the panel weeks [" + std::to_string(panel.first_week) +
                                            "," + std::to_string(panel.last_week()) + "]");
            }
            if (s.length() <= max_lag + 2) {
                fail(ErrorKind::config, name + " is too short for lag " + std::to_string(max_lag));
            }
        }
    }
};

/// Training pairs and the held-out endpoint of one segment under lag l:
/// x rows start..end-1-l pair with y rows start+l..end-1, and the endpoint
/// y(end) is predicted from x(end-l).
struct AlignedSegment {
    std::vector<MatrixXd> x_train; // per unit, n x d
    MatrixXd y_train;              // n x M
    MatrixXd x_predict;            // M x d
    VectorXd y_truth;              // M
    int x_first_week = 0;
    int y_first_week = 0;

    Index pairs() const { return y_train.rows(); }
};

inline AlignedSegment lag_align(const Segment& segment, int lag, const PanelDataset& panel) {
    if (lag < 0) {
        fail(ErrorKind::config, "lag must be non-negative");
    }
    if (segment.start < panel.first_week || segment.end > panel.last_week() || segment.end < segment.start) {
        fail(ErrorKind::config, "segment outside the panel");
    }
    if (segment.length() <= lag + 2) {
        fail(ErrorKind::config, "segment [" + std::to_string(segment.start) + "," + std::to_string(segment.end) +
                                    "] is too short for lag " + std::to_string(lag));
    }
    const Index n = segment.end - segment.start - lag;
    AlignedSegment out;
    out.x_first_week = segment.start;
    out.y_first_week = segment.start + lag;
    out.y_train = panel.outcome.middleRows(panel.row_of(out.y_first_week), n);
    for (const auto& x : panel.predictors) {
        out.x_train.push_back(x.middleRows(panel.row_of(out.x_first_week), n));
    }
    out.x_predict = panel.predictor_block(segment.end - lag);
    out.y_truth = panel.outcome.row(panel.row_of(segment.end)).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Error metric
// ---------------------------------------------------------------------------

/// sum_m |yhat_m - y_m| / (M * max_m y_m) for one segment endpoint.
inline double normalized_ae(const VectorXd& prediction, const VectorXd& truth) {
    if (prediction.size() != truth.size() || truth.size() == 0) {
        fail(ErrorKind::dimension, "normalized_ae: prediction and truth must be non-empty and equal length");
    }
    const double top = truth.maxCoeff();
    if (!(top > 0.0)) {
        fail(ErrorKind::data, "normalized_ae: largest true value must be positive, got " + csv::format_short(top));
    }
    return (prediction - truth).cwiseAbs().sum() / (static_cast<double>(truth.size()) * top);
}

/// Row k of each matrix is one segment endpoint; returns the K-vector of errors.
inline VectorXd normalized_ae(const MatrixXd& predictions, const MatrixXd& truths) {
    if (predictions.rows() != truths.rows() || predictions.cols() != truths.cols()) {
        fail(ErrorKind::dimension, "normalized_ae: shape mismatch");
    }
    VectorXd out(truths.rows());
    for (Index k = 0; k < truths.rows(); ++k) {
        out[k] = normalized_ae(VectorXd(predictions.row(k).transpose()), VectorXd(truths.row(k).transpose()));
    }
    return out;
}

inline double mean_ae(const VectorXd& per_segment) {
    if (per_segment.size() == 0) {
        fail(ErrorKind::data, "mean_ae: no segments");
    }
    return per_segment.mean();
}

// ---------------------------------------------------------------------------
// Hyper-parameter grid
// ---------------------------------------------------------------------------

struct GridPoint {
    double rho = 0.6;
    int seasons = 4;
    double damping = 0.5;
    double frequency = 0.0;

    auto operator<=>(const GridPoint&) const = default;
};

struct HyperGrid {
    std::vector<double> rho;
    std::vector<int> seasons;
    std::vector<double> damping;
    std::vector<double> frequency;

    /// rho (0.2, 0.4, 0.6, 0.8); S (3, 4, 5, 6, 8, 10, 12);
    /// damping (0.1, 0.2, 0.4, 0.6, 0.8, 0.9); lambda (0, pi/2, pi).
    static HyperGrid standard() {
        return {{0.2, 0.4, 0.6, 0.8},
                {3, 4, 5, 6, 8, 10, 12},
                {0.1, 0.2, 0.4, 0.6, 0.8, 0.9},
                {0.0, std::numbers::pi / 2.0, std::numbers::pi}};
    }

    static HyperGrid single(const GridPoint& p) { return {{p.rho}, {p.seasons}, {p.damping}, {p.frequency}}; }

    void validate() const {
        if (rho.empty() || seasons.empty() || damping.empty() || frequency.empty()) {
            fail(ErrorKind::config, "grid: every hyper-parameter list must be non-empty");
        }
        for (double r : rho) {
            if (!(r > 0.0 && r <= 1.0)) fail(ErrorKind::config, "grid: rho outside (0, 1]");
        }
        for (int s : seasons) {
            if (s < 2) fail(ErrorKind::config, "grid: seasons must be >= 2");
        }
        for (double v : damping) {
            if (!(v > 0.0 && v < 1.0)) fail(ErrorKind::config, "grid: damping outside (0, 1)");
        }
        for (double l : frequency) {
            if (!(l >= 0.0 && l <= std::numbers::pi + 1e-12)) fail(ErrorKind::config, "grid: lambda outside [0, pi]");
        }
    }

    /// Cartesian product in the order the lists are given (rho outermost).
    std::vector<GridPoint> points() const {
        std::vector<GridPoint> out;
        for (double r : rho)
            for (int s : seasons)
                for (double v : damping)
                    for (double l : frequency)
                        out.push_back({r, s, v, std::min(l, std::numbers::pi)});
        return out;
    }
};

// ---------------------------------------------------------------------------
// Segment fits
// ---------------------------------------------------------------------------

struct FitOptions {
    SeriesComponents components;       // applied to every unit
    McmcConfig mcmc;                   // seed is replaced per job
    double credible_level = 0.95;
    double inclusion_prob = 0.5;
    std::uint64_t seed = 1;
    int jobs = 1;
};

struct SegmentFit {
    Index segment_index = 0;
    Segment segment;
    int lag = 0;
    GridPoint point;
    double ae = 0.0;
    VectorXd prediction;
    VectorXd lower;
    VectorXd upper;
    VectorXd truth;
    std::vector<CoefficientSummary> coefficients; // standardized predictor scale
    MatrixXd predictor_mean;                      // M x d scaling used for standardization
    MatrixXd predictor_sd;
    Index jitter_events = 0;
};

namespace detail {

struct Standardized {
    std::vector<MatrixXd> x_train;
    MatrixXd x_predict;
    MatrixXd mean;
    MatrixXd sd;
};

/// z-scores each predictor with its training-row mean and sd; constant
/// columns become zero.
inline Standardized standardize(const AlignedSegment& a) {
    const auto m_count = static_cast<Index>(a.x_train.size());
    const Index d = a.x_predict.cols();
    Standardized s{a.x_train, a.x_predict, MatrixXd::Zero(m_count, d), MatrixXd::Ones(m_count, d)};
    for (Index m = 0; m < m_count; ++m) {
        auto& x = s.x_train[static_cast<std::size_t>(m)];
        for (Index j = 0; j < d; ++j) {
            const double mu = x.col(j).mean();
            const double ss = (x.col(j).array() - mu).square().sum();
            const double sd = x.rows() > 1 ? std::sqrt(ss / static_cast<double>(x.rows() - 1)) : 0.0;
            const double scale = sd > 1e-12 * std::max(1.0, std::abs(mu)) ? sd : 0.0;
            s.mean(m, j) = mu;
            s.sd(m, j) = scale;
            if (scale > 0.0) {
                x.col(j) = (x.col(j).array() - mu) / scale;
                s.x_predict(m, j) = (s.x_predict(m, j) - mu) / scale;
            } else {
                x.col(j).setZero();
                s.x_predict(m, j) = 0.0;
            }
        }
    }
    return s;
}

inline std::uint64_t job_seed(std::uint64_t base, std::uint64_t tag, const Segment& seg, int lag, const GridPoint& p,
                              std::uint64_t extra = 0) {
    return derive_seed(base, {tag, static_cast<std::uint64_t>(seg.start), static_cast<std::uint64_t>(seg.end),
                              static_cast<std::uint64_t>(lag), bits_of(p.rho), static_cast<std::uint64_t>(p.seasons),
                              bits_of(p.damping), bits_of(p.frequency), extra});
}

constexpr std::uint64_t multivariate_tag = 0x6d76;
constexpr std::uint64_t baseline_tag = 0x7576;

struct SeriesFit {
    MatrixXd forecasts; // kept x M
    std::vector<CoefficientSummary> coefficients;
    Index jitter_events = 0;
};

inline SeriesFit fit_block(const MatrixXd& y, const std::vector<MatrixXd>& x, const MatrixXd& x_predict,
                           const GridPoint& point, const FitOptions& options, std::uint64_t seed) {
    ComponentSpec spec = ComponentSpec::uniform(y.cols(), options.components);
    spec.rho = point.rho;
    spec.set_seasons(point.seasons);
    spec.damping = point.damping;
    spec.frequency = point.frequency;
    const PriorSet priors = PriorSet::defaults(spec, y, x.front().cols(), options.inclusion_prob);
    McmcConfig cfg = options.mcmc;
    cfg.seed = seed;
    cfg.keep_states = false;
    const PosteriorDraws draws = run_mcmc(y, x, spec, priors, cfg);
    SeriesFit out;
    out.forecasts = one_step_forecast(draws, x_predict);
    if (draws.predictors > 0) {
        out.coefficients = coefficient_summary(draws, options.credible_level);
    }
    out.jitter_events = draws.jitter_events;
    return out;
}

} // namespace detail

/// Trains on the lag-aligned pairs of one segment, forecasts the endpoint
/// one step ahead (posterior mean over kept draws) and scores it. With
/// `univariate` each unit is fitted as its own single-series model.
inline SegmentFit fit_segment(const PanelDataset& panel, const Segment& segment, Index segment_index, int lag,
                              const GridPoint& point, const FitOptions& options, bool univariate = false) {
    const AlignedSegment aligned = lag_align(segment, lag, panel);
    const detail::Standardized z = detail::standardize(aligned);
    const Index m_count = panel.series();

    SegmentFit out;
    out.segment_index = segment_index;
    out.segment = segment;
    out.lag = lag;
    out.point = point;
    out.truth = aligned.y_truth;
    out.predictor_mean = z.mean;
    out.predictor_sd = z.sd;
    out.prediction.resize(m_count);
    out.lower.resize(m_count);
    out.upper.resize(m_count);

    const double lo = 0.5 * (1.0 - options.credible_level);
    const double hi = 0.5 * (1.0 + options.credible_level);
    auto summarize = [&](const MatrixXd& forecasts, Index col, Index m) {
        std::vector<double> v(forecasts.rows());
        for (Index i = 0; i < forecasts.rows(); ++i) {
            v[static_cast<std::size_t>(i)] = forecasts(i, col);
        }
        out.prediction[m] = forecasts.col(col).mean();
        out.lower[m] = quantile(v, lo);
        out.upper[m] = quantile(v, hi);
    };

    if (!univariate) {
        const auto seed = detail::job_seed(options.seed, detail::multivariate_tag, segment, lag, point);
        const auto fit = detail::fit_block(aligned.y_train, z.x_train, z.x_predict, point, options, seed);
        for (Index m = 0; m < m_count; ++m) {
            summarize(fit.forecasts, m, m);
        }
        out.coefficients = fit.coefficients;
        out.jitter_events = fit.jitter_events;
    } else {
        for (Index m = 0; m < m_count; ++m) {
            const auto seed = detail::job_seed(options.seed, detail::baseline_tag, segment, lag, point,
                                               static_cast<std::uint64_t>(m));
            const MatrixXd y = aligned.y_train.col(m);
            const std::vector<MatrixXd> x{z.x_train[static_cast<std::size_t>(m)]};
            const MatrixXd xp = z.x_predict.row(m);
            auto fit = detail::fit_block(y, x, xp, point, options, seed);
            summarize(fit.forecasts, 0, m);
            for (auto c : fit.coefficients) {
                c.series = m;
                out.coefficients.push_back(c);
            }
            out.jitter_events += fit.jitter_events;
        }
    }
    out.ae = normalized_ae(out.prediction, out.truth);
    return out;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct AeRow {
    GridPoint point;
    int lag = 0;
    Index segment = 0; // 0-based segment index
    double ae = 0.0;
};

struct LagSelection {
    int lag = 0;
    GridPoint best;
    VectorXd ae; // per segment at the selected point
    double mean_ae = 0.0;
    std::vector<SegmentFit> fits; // per segment at the selected point
};

struct TuneReport {
    PartitionPlan plan;
    std::vector<AeRow> rows;
    std::vector<LagSelection> selections;
    bool univariate = false;

    const LagSelection& selection_for(int lag) const {
        for (const auto& s : selections) {
            if (s.lag == lag) return s;
        }
        fail(ErrorKind::config, "tune report: no lag " + std::to_string(lag));
    }

    /// Lag with the smallest selected mean AE (first in lag order on ties).
    int best_lag() const {
        const LagSelection* best = &selections.front();
        for (const auto& s : selections) {
            if (s.mean_ae < best->mean_ae) best = &s;
        }
        return best->lag;
    }
};

namespace detail {

/// Runs `count` independent jobs on up to `jobs` threads. Results are stored
/// by job index, so the outcome does not depend on completion order.
template <typename Fn>
void parallel_for(Index count, int jobs, Fn&& fn) {
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
    if (workers == 1) {
        for (Index i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<Index> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (Index i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline TuneReport run_grid(const PanelDataset& panel, const PartitionPlan& plan, const HyperGrid& grid,
                           const std::vector<int>& lags, const FitOptions& options, bool univariate) {
    grid.validate();
    if (lags.empty()) {
        fail(ErrorKind::config, "grid search: no lags");
    }
    plan.validate(panel, *std::max_element(lags.begin(), lags.end()));
    for (int l : lags) {
        if (l < 0) fail(ErrorKind::config, "grid search: negative lag");
    }
    std::vector<GridPoint> points = grid.points();
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());

    const auto n_points = static_cast<Index>(points.size());
    const Index n_seg = plan.size();
    const auto n_lags = static_cast<Index>(lags.size());
    const Index total = n_lags * n_points * n_seg;
    std::vector<SegmentFit> fits(static_cast<std::size_t>(total));
    parallel_for(total, options.jobs, [&](Index job) {
        const Index k = job % n_seg;
        const Index p = (job / n_seg) % n_points;
        const Index l = job / (n_seg * n_points);
        fits[static_cast<std::size_t>(job)] =
            fit_segment(panel, plan.segments[static_cast<std::size_t>(k)], k, lags[static_cast<std::size_t>(l)],
                        points[static_cast<std::size_t>(p)], options, univariate);
    });

    TuneReport report;
    report.plan = plan;
    report.univariate = univariate;
    for (Index l = 0; l < n_lags; ++l) {
        LagSelection sel;
        sel.lag = lags[static_cast<std::size_t>(l)];
        Index best = -1;
        double best_mean = 0.0;
        for (Index p = 0; p < n_points; ++p) {
            VectorXd ae(n_seg);
            for (Index k = 0; k < n_seg; ++k) {
                const auto& f = fits[static_cast<std::size_t>((l * n_points + p) * n_seg + k)];
                ae[k] = f.ae;
                report.rows.push_back({f.point, f.lag, k, f.ae});
            }
            const double mean = ae.mean();
            // points are sorted, so strict < keeps the lexicographically first on ties
            if (best < 0 || mean < best_mean) {
                best = p;
                best_mean = mean;
            }
        }
        sel.best = points[static_cast<std::size_t>(best)];
        sel.ae.resize(n_seg);
        for (Index k = 0; k < n_seg; ++k) {
            const auto& f = fits[static_cast<std::size_t>((l * n_points + best) * n_seg + k)];
            sel.ae[k] = f.ae;
            sel.fits.push_back(f);
        }
        sel.mean_ae = best_mean;
        report.selections.push_back(std::move(sel));
    }
    return report;
}

} // namespace detail

/// Evaluates every grid point for every lag over the segments and selects,
/// per lag, the point minimising the mean AE across segments. Ties go to the
/// lexicographically smallest (rho, S, damping, lambda).
inline TuneReport grid_search(const PanelDataset& panel, const PartitionPlan& plan, const HyperGrid& grid,
                              const std::vector<int>& lags, const FitOptions& options) {
    return detail::run_grid(panel, plan, grid, lags, options, false);
}

/// The same protocol with M independent single-series models (no
/// cross-series covariance anywhere).
inline TuneReport bsts_tl_baseline(const PanelDataset& panel, const PartitionPlan& plan, const HyperGrid& grid,
                                   const std::vector<int>& lags, const FitOptions& options) {
    return detail::run_grid(panel, plan, grid, lags, options, true);
}

// ---------------------------------------------------------------------------
// Report serialisation
// ---------------------------------------------------------------------------

inline void write_ae_csv(std::ostream& os, const TuneReport& report) {
    os << "rho,S,varrho,lambda,lag,segment,ae\n";
    for (const auto& r : report.rows) {
        os << csv::format_short(r.point.rho) << ',' << r.point.seasons << ',' << csv::format_short(r.point.damping)
           << ',' << csv::format_short(r.point.frequency) << ',' << r.lag << ',' << (r.segment + 1) << ','
           << csv::format_short(r.ae, 12) << '\n';
    }
}

inline void write_coefficients_header(std::ostream& os) {
    os << "segment,series,predictor,mean,lower,upper,inclusion_prob,lag\n";
}

inline void write_coefficient_rows(std::ostream& os, const PanelDataset& panel, const SegmentFit& fit) {
    for (const auto& c : fit.coefficients) {
        os << (fit.segment_index + 1) << ',' << panel.units[static_cast<std::size_t>(c.series)] << ','
           << panel.predictor_names[static_cast<std::size_t>(c.predictor)] << ',' << csv::format_short(c.mean) << ','
           << csv::format_short(c.lower) << ',' << csv::format_short(c.upper) << ','
           << csv::format_short(c.inclusion_prob) << ',' << fit.lag << '\n';
    }
}

/// Coefficient summaries at the selected point of every lag.
inline void write_coefficients_csv(std::ostream& os, const PanelDataset& panel, const TuneReport& report) {
    write_coefficients_header(os);
    for (const auto& sel : report.selections) {
        for (const auto& f : sel.fits) {
            write_coefficient_rows(os, panel, f);
        }
    }
}

} // namespace mbsts
