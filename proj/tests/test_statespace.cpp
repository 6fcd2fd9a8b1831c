#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace mbsts;

namespace {

SeriesComponents only(bool trend, bool seasonal, bool cycle, int seasons = 4) {
    return SeriesComponents{trend, seasonal, cycle, false, seasons};
}

StateSpaceModel noise_free(const ComponentSpec& spec) {
    return build_state_space(spec, spec.size(), ComponentCovariances::diagonal(spec, 0.0, 0.0));
}

StateSpaceModel scalar_level(double p0, double obs_var, double state_var) {
    auto spec = ComponentSpec::uniform(1, only(true, false, false));
    spec.rho = 1.0;
    ComponentCovariances c = ComponentCovariances::diagonal(spec, state_var, obs_var);
    c.slope.setZero();
    auto m = build_state_space(spec, 1, c);
    m.initial_cov = MatrixXd::Zero(2, 2);
    m.initial_cov(0, 0) = p0;
    return m;
}

} // namespace

TEST(Transition, TrendRecursion) {
    auto spec = ComponentSpec::uniform(1, only(true, false, false));
    spec.rho = 1.0;
    const auto m = noise_free(spec);
    VectorXd a(2);
    a << 2.0, 0.5;
    const VectorXd next = m.transition * a + m.state_intercept;
    EXPECT_DOUBLE_EQ(next[0], 2.5);
    EXPECT_DOUBLE_EQ(next[1], 0.5);
}

TEST(Transition, SlopeRevertsToLongTermValue) {
    auto spec = ComponentSpec::uniform(1, only(true, false, false));
    spec.rho = 0.6;
    spec.long_term_slope = VectorXd::Constant(1, 2.0);
    const auto m = noise_free(spec);
    VectorXd a(2);
    a << 0.0, 1.0;
    const VectorXd next = m.transition * a + m.state_intercept;
    EXPECT_NEAR(next[1], 2.0 + 0.6 * (1.0 - 2.0), 1e-15);
}

TEST(Transition, SeasonalRecursion) {
    const auto m = noise_free(ComponentSpec::uniform(1, only(false, true, false, 4)));
    ASSERT_EQ(m.state_dim, 3);
    VectorXd a(3);
    a << 1.0, -2.0, 0.5;
    const VectorXd next = m.transition * a;
    EXPECT_DOUBLE_EQ(next[0], 0.5);
    EXPECT_DOUBLE_EQ(next[1], 1.0);
    EXPECT_DOUBLE_EQ(next[2], -2.0);
}

TEST(Transition, CycleRecursion) {
    auto spec = ComponentSpec::uniform(1, only(false, false, true));
    spec.damping = 0.5;
    spec.frequency = std::numbers::pi / 2.0;
    const auto m = noise_free(spec);
    VectorXd a(2);
    a << 1.0, 0.0;
    const VectorXd next = m.transition * a;
    EXPECT_NEAR(next[0], 0.0, 1e-15);
    EXPECT_NEAR(next[1], -0.5, 1e-15);
}

TEST(Transition, CycleWithZeroFrequencyIsTwoAr1) {
    auto spec = ComponentSpec::uniform(2, only(false, false, true));
    spec.damping = 0.7;
    spec.frequency = 0.0;
    const auto m = noise_free(spec);
    EXPECT_EQ(m.transition, 0.7 * MatrixXd::Identity(4, 4));
}

TEST(Transition, SeasonalWindowSumsToZero) {
    for (int s : {2, 3, 4, 7}) {
        const auto m = noise_free(ComponentSpec::uniform(1, only(false, true, false, s)));
        VectorXd a = VectorXd::LinSpaced(s - 1, 1.0, 3.0);
        std::vector<double> tau;
        for (int t = 0; t < 4 * s; ++t) {
            tau.push_back(a[0]);
            a = m.transition * a;
        }
        for (std::size_t t = static_cast<std::size_t>(s); t + static_cast<std::size_t>(s) <= tau.size(); ++t) {
            double sum = 0.0;
            for (int k = 0; k < s; ++k) sum += tau[t + static_cast<std::size_t>(k)];
            EXPECT_NEAR(sum, 0.0, 1e-12) << "S=" << s << " t=" << t;
        }
    }
}

TEST(BuildStateSpace, LayoutAndObservationMatrix) {
    ComponentSpec spec;
    spec.series = {only(true, true, false, 3), only(false, false, true)};
    const auto m = build_state_space(spec, 2, ComponentCovariances::diagonal(spec, 1.0, 1.0));
    EXPECT_EQ(m.state_dim, 1 + 1 + 2 + 1 + 1);
    EXPECT_EQ(m.layout.shock_dim, 1 + 1 + 1 + 1 + 1);
    MatrixXd z = MatrixXd::Zero(2, 6);
    z(0, 0) = 1;
    z(0, 2) = 1;
    z(1, 4) = 1;
    EXPECT_EQ(m.observation, z);
}

TEST(BuildStateSpace, RejectsBadInputs) {
    const auto spec = ComponentSpec::uniform(2, only(true, false, false));
    auto cov = ComponentCovariances::diagonal(spec, 1.0, 1.0);
    EXPECT_THROW(build_state_space(spec, 3, cov), Error);
    cov.observation = MatrixXd::Identity(3, 3);
    EXPECT_THROW(build_state_space(spec, 2, cov), Error);
    cov = ComponentCovariances::diagonal(spec, 1.0, 1.0);
    cov.level(0, 0) = -1.0;
    try {
        build_state_space(spec, 2, cov);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numerical);
    }
    auto bad = spec;
    bad.rho = 1.5;
    EXPECT_THROW(build_state_space(bad, 2, ComponentCovariances::diagonal(bad, 1.0, 1.0)), Error);
}

TEST(KalmanFilter, ScalarClosedForm) {
    const auto m = scalar_level(1.0, 1.0, 0.0);
    MatrixXd y(1, 1);
    y << 1.0;
    const auto f = kalman_filter(m, y);
    EXPECT_NEAR(f.filtered_mean[0][0], 0.5, 1e-14);
}

TEST(KalmanFilter, TinyObservationNoisePinsState) {
    const auto m = scalar_level(1.0, 1e-12, 0.0);
    MatrixXd y(1, 1);
    y << 3.7;
    const auto f = kalman_filter(m, y);
    EXPECT_NEAR(f.filtered_mean[0][0], 3.7, 1e-6);
}

TEST(KalmanFilter, SingularInnovationIsNumericalError) {
    auto m = scalar_level(0.0, 0.0, 0.0);
    MatrixXd y(2, 1);
    y << 1.0, 1.0;
    try {
        kalman_filter(m, y);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numerical);
    }
}

TEST(KalmanFilter, RejectsMissingAndMisshapenData) {
    const auto m = scalar_level(1.0, 1.0, 1.0);
    MatrixXd y(2, 1);
    y << 1.0, std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(kalman_filter(m, y), Error);
    EXPECT_THROW(kalman_filter(m, MatrixXd::Zero(2, 2)), Error);
}

TEST(KalmanFilter, MatchesDenseJointGaussian) {
    std::mt19937_64 gen(11);
    for (int rep = 0; rep < 30; ++rep) {
        Index steps = 0;
        const auto m = oracle::random_model(gen, 48, steps);
        const auto path = simulate_forward(m, steps, 100 + rep);
        const double ll = kalman_filter(m, path.observations).log_likelihood;
        EXPECT_NEAR(ll, oracle::log_likelihood(m, path.observations), 1e-8) << "rep " << rep;
    }
}

TEST(KalmanSmoother, MatchesGaussianConditioning) {
    std::mt19937_64 gen(12);
    for (int rep = 0; rep < 30; ++rep) {
        Index steps = 0;
        const auto m = oracle::random_model(gen, 36, steps);
        const auto path = simulate_forward(m, steps, 200 + rep);
        const auto s = kalman_smoother(m, kalman_filter(m, path.observations));
        const auto ref = oracle::smoothed(m, path.observations);
        for (Index t = 0; t < steps; ++t) {
            EXPECT_LT((s.mean[t] - ref.mean[t]).cwiseAbs().maxCoeff(), 1e-8) << "rep " << rep << " t " << t;
            EXPECT_LT((s.cov[t] - ref.cov[t]).cwiseAbs().maxCoeff(), 1e-8) << "rep " << rep << " t " << t;
        }
    }
}

TEST(KalmanSmoother, LastStepEqualsFiltered) {
    const auto spec = ComponentSpec::uniform(2, only(true, true, true));
    const auto m = build_state_space(spec, 2, ComponentCovariances::diagonal(spec, 0.3, 1.0));
    const auto path = simulate_forward(m, 12, 5);
    const auto f = kalman_filter(m, path.observations);
    const auto s = kalman_smoother(m, f);
    EXPECT_EQ(s.mean.back(), f.filtered_mean.back());
    EXPECT_EQ(s.cov.back(), f.filtered_cov.back());
}

TEST(KalmanSmoother, StaticStateGivesConstantMean) {
    const auto m = scalar_level(10.0, 1.0, 0.0);
    MatrixXd y(6, 1);
    y << 1.0, 3.0, 2.0, 5.0, 4.0, 0.5;
    const auto s = kalman_smoother(m, kalman_filter(m, y));
    for (const auto& v : s.mean) EXPECT_NEAR(v[0], s.mean.front()[0], 1e-10);
}

TEST(KalmanSmoother, SmoothedCovarianceBelowFiltered) {
    const auto spec = ComponentSpec::uniform(2, only(true, true, true));
    auto cov = ComponentCovariances::diagonal(spec, 0.2, 1.0);
    cov.observation(0, 1) = cov.observation(1, 0) = 0.4;
    const auto m = build_state_space(spec, 2, cov);
    const auto path = simulate_forward(m, 30, 9);
    const auto f = kalman_filter(m, path.observations);
    const auto s = kalman_smoother(m, f);
    for (std::size_t t = 0; t < s.cov.size(); ++t) {
        EXPECT_GE(linalg::min_eigenvalue(f.filtered_cov[t] - s.cov[t]), -1e-10) << t;
    }
}

TEST(Simulation, ZeroCovariancesGiveZeroObservations) {
    const auto spec = ComponentSpec::uniform(2, only(true, true, true));
    const auto m = noise_free(spec);
    const auto path = simulate_forward(m, 20, 3, VectorXd::Zero(m.state_dim));
    EXPECT_EQ(path.observations, MatrixXd::Zero(20, 2));
}

TEST(Simulation, FixedSeedRepeats) {
    const auto spec = ComponentSpec::uniform(2, only(true, true, true));
    const auto m = build_state_space(spec, 2, ComponentCovariances::diagonal(spec, 0.5, 1.0));
    const auto a = simulate_forward(m, 15, 42);
    const auto b = simulate_forward(m, 15, 42);
    EXPECT_EQ(a.states, b.states);
    EXPECT_EQ(a.observations, b.observations);
    const auto path = simulate_forward(m, 15, 1);
    EXPECT_EQ(simulate_states(m, path.observations, 7), simulate_states(m, path.observations, 7));
}

TEST(Simulation, DeterministicRamp) {
    auto spec = ComponentSpec::uniform(1, only(true, false, false));
    spec.rho = 1.0;
    const auto m = noise_free(spec);
    VectorXd a0(2);
    a0 << 0.0, 1.0;
    const auto path = simulate_forward(m, 10, 1, a0);
    for (Index t = 0; t < 10; ++t) EXPECT_DOUBLE_EQ(path.observations(t, 0), static_cast<double>(t));
}

TEST(Simulation, NearZeroDampingCycleIsWhite) {
    auto spec = ComponentSpec::uniform(1, only(false, false, true));
    spec.damping = 1e-6;
    spec.frequency = 1.0;
    const auto m = build_state_space(spec, 1, ComponentCovariances::diagonal(spec, 1.0, 1.0));
    const auto path = simulate_forward(m, 10000, 17);
    const VectorXd w = path.states.col(m.layout.cycle_offset);
    const VectorXd c = w.array() - w.mean();
    const double r1 = c.head(c.size() - 1).dot(c.tail(c.size() - 1)) / c.squaredNorm();
    EXPECT_LT(std::abs(r1), 0.05);
}

TEST(Simulation, InnovationsAreWhiteUnderTrueModel) {
    const auto spec = ComponentSpec::uniform(2, only(true, true, true));
    auto cov = ComponentCovariances::diagonal(spec, 0.1, 1.0);
    cov.observation(0, 1) = cov.observation(1, 0) = 0.5;
    const auto m = build_state_space(spec, 2, cov);
    const Index steps = 2000;
    const auto path = simulate_forward(m, steps, 23);
    const auto f = kalman_filter(m, path.observations);
    for (Index s = 0; s < 2; ++s) {
        // standardised innovations, skipping the diffuse start
        std::vector<double> e;
        for (Index t = 50; t < steps; ++t) {
            const auto ut = static_cast<std::size_t>(t);
            e.push_back(f.innovation[ut][s] / std::sqrt(f.innovation_cov[ut](s, s)));
        }
        double mean = 0.0;
        for (double v : e) mean += v;
        mean /= static_cast<double>(e.size());
        double num = 0.0, den = 0.0;
        for (std::size_t t = 0; t < e.size(); ++t) {
            den += (e[t] - mean) * (e[t] - mean);
            if (t + 1 < e.size()) num += (e[t] - mean) * (e[t + 1] - mean);
        }
        EXPECT_LT(std::abs(num / den), 3.0 / std::sqrt(static_cast<double>(steps)));
    }
}

TEST(SimulationSmoother, MomentsMatchSmoother) {
    const auto m = scalar_level(2.0, 1.0, 0.5);
    MatrixXd y(4, 1);
    y << 1.0, -0.5, 2.0, 0.7;
    const auto s = kalman_smoother(m, kalman_filter(m, y));
    const int draws = 10000;
    Rng rng(99);
    VectorXd sum = VectorXd::Zero(4), sq = VectorXd::Zero(4);
    for (int i = 0; i < draws; ++i) {
        const VectorXd lv = simulate_states(m, y, rng).col(0);
        sum += lv;
        sq += lv.cwiseProduct(lv);
    }
    for (Index t = 0; t < 4; ++t) {
        const double mean = sum[t] / draws;
        const double var = sq[t] / draws - mean * mean;
        const double sv = s.cov[static_cast<std::size_t>(t)](0, 0);
        EXPECT_LT(std::abs(mean - s.mean[static_cast<std::size_t>(t)][0]), 3.0 * std::sqrt(sv / draws));
        EXPECT_LT(std::abs(var / sv - 1.0), 0.05);
    }
}

TEST(Shocks, ExtractInvertsSimulation) {
    const auto spec = ComponentSpec::uniform(2, only(true, true, true));
    const auto m = build_state_space(spec, 2, ComponentCovariances::diagonal(spec, 0.5, 1.0));
    const auto path = simulate_forward(m, 8, 4);
    const MatrixXd shocks = extract_shocks(m, path.states);
    ASSERT_EQ(shocks.rows(), 7);
    for (Index t = 0; t + 1 < 8; ++t) {
        const VectorXd rebuilt = m.transition * path.states.row(t).transpose() + m.state_intercept +
                                 m.selector * shocks.row(t).transpose();
        EXPECT_LT((rebuilt - path.states.row(t + 1).transpose()).cwiseAbs().maxCoeff(), 1e-12);
    }
}
