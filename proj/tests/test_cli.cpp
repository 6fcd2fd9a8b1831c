#include "mbsts/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

using namespace mbsts;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

CliRun invoke(const std::vector<std::string>& args, const Fetcher& fetcher = {}) {
    std::ostringstream out, err;
    CliRun r;
    r.code = cli::run_cli(args, out, err,
                          fetcher ? fetcher : Fetcher([](const std::string&) -> std::string {
                              fail(ErrorKind::network, "no network in tests");
                          }));
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) { return read_file_bytes(p); }

class CliTest : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override {
        static int counter = 0;
        dir = fs::temp_directory_path() / ("mbsts_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string p(const std::string& name) const { return (dir / name).string(); }

    std::string synthetic(const std::string& name, const std::string& m, const std::string& d, const std::string& t,
                          const std::string& lag, const std::string& seed) {
        const CliRun r = invoke({"prepare", "--synthetic", "--out", p(name), "--M", m, "--d", d, "--T", t, "--true-lag",
                           lag, "--seed", seed});
        EXPECT_EQ(r.code, 0) << r.err;
        return p(name);
    }
};

} // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
    EXPECT_EQ(invoke({"--help"}).code, 0);
    EXPECT_EQ(invoke({}).code, 1);
    EXPECT_EQ(invoke({"frobnicate"}).code, 1);
    EXPECT_EQ(invoke({"fit"}).code, 1); // --panel is required
    const CliRun r = invoke({"tune", "--panel", p("x.csv"), "--iterations", "ten"});
    EXPECT_EQ(r.code, 1);
    const auto j = nlohmann::json::parse(r.err);
    EXPECT_EQ(j["error"], "usage");
}

TEST_F(CliTest, PrepareSynthetic) {
    const std::string panel = synthetic("syn.csv", "3", "4", "40", "1", "5");
    const PanelDataset loaded = load_panel_csv(panel);
    EXPECT_EQ(loaded.series(), 3);
    EXPECT_EQ(loaded.steps(), 40);
    EXPECT_EQ(loaded.predictor_count(), 4);
    const auto truth = nlohmann::json::parse(slurp(p("syn.truth.json")));
    EXPECT_EQ(truth["true_lag"], 1);
    EXPECT_EQ(truth["beta"].size(), 3u);
    const auto config = nlohmann::json::parse(slurp(p("syn.config.json")));
    EXPECT_EQ(config["command"], "prepare");

    // the same seed writes the same bytes
    const std::string again = synthetic("again.csv", "3", "4", "40", "1", "5");
    EXPECT_EQ(slurp(panel), slurp(again));
}

TEST_F(CliTest, PrepareRealNeedsPopulation) {
    const CliRun r = invoke({"prepare", "--out", p("real.csv"), "--offline"});
    EXPECT_EQ(r.code, 1);
    EXPECT_FALSE(fs::exists(p("real.csv")));
}

TEST_F(CliTest, PrepareOfflineWithoutCacheIsRuntimeError) {
    std::ofstream(p("pop.csv")) << "unit,name,population\nAL,Alpha,700000\n";
    const CliRun r = invoke({"prepare", "--out", p("real.csv"), "--population", p("pop.csv"), "--sources", "jhu",
                       "--cache", p("cache"), "--offline"});
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(nlohmann::json::parse(r.err)["error"], "network");
}

TEST_F(CliTest, PrepareRealWithFetcher) {
    std::ofstream(p("pop.csv")) << "unit,name,population\nAL,Alpha,700000\nBE,Beta,100000\n";
    const std::string jhu = "UID,Province_State,1/11/20,1/18/20,1/25/20\n1,Alpha,0,70,210\n2,Beta,0,10,5\n";
    int calls = 0;
    const Fetcher fake = [&](const std::string& url) {
        ++calls;
        EXPECT_NE(url.find("confirmed_US"), std::string::npos);
        return jhu;
    };
    const std::vector<std::string> args{"prepare", "--out", p("real.csv"), "--population", p("pop.csv"),
                                        "--sources", "jhu", "--cache", p("cache")};
    const CliRun r = invoke(args, fake);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(calls, 1);
    EXPECT_NE(r.err.find("clamped"), std::string::npos);
    const PanelDataset panel = load_panel_csv(p("real.csv"));
    EXPECT_NEAR(panel.outcome(2, 0), 20.0, 1e-9);
    EXPECT_TRUE(fs::exists(p("real.manifest.jsonl")));

    // warm cache: no fetches and the same panel bytes
    const std::string first = slurp(p("real.csv"));
    auto offline = args;
    offline.push_back("--offline");
    EXPECT_EQ(invoke(offline).code, 0);
    EXPECT_EQ(calls, 1);
    EXPECT_EQ(slurp(p("real.csv")), first);
}

TEST_F(CliTest, TuneRanksTrueLag) {
    const std::string panel = synthetic("lag1.csv", "3", "3", "60", "1", "11");
    const CliRun r = invoke({"tune", "--panel", panel, "--segments", "1:20,21:40,41:60", "--lags", "0,1,2",
                       "--components", "trend,regression", "--iterations", "300", "--burn-in", "100", "--grid-rho",
                       "0.6", "--grid-S", "4", "--grid-varrho", "0.5", "--grid-lambda", "0", "--out-dir", p("tune")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("best lag: 1"), std::string::npos) << r.out;

    const std::string selection = slurp(p("tune/selection.csv"));
    EXPECT_EQ(selection.substr(0, selection.find('\n')), "model,lag,rho,S,varrho,lambda,mean_ae");
    EXPECT_NE(selection.find("mbsts,1,0.6,4,0.5,0,"), std::string::npos);
    // one AE row per lag and segment
    const std::string ae = slurp(p("tune/ae.csv"));
    EXPECT_EQ(std::count(ae.begin(), ae.end(), '\n'), 1 + 3 * 3);
    EXPECT_TRUE(fs::exists(p("tune/coefficients.csv")));
    EXPECT_FALSE(fs::exists(p("tune/baseline_ae.csv")));
}

TEST_F(CliTest, TuneWithBaselineAndGridErrors) {
    const std::string panel = synthetic("s.csv", "2", "2", "40", "0", "3");
    const std::vector<std::string> common{"tune", "--panel", panel, "--segments", "1:20,21:40", "--lags", "0",
                                          "--iterations", "60", "--burn-in", "20", "--components", "trend,regression",
                                          "--grid-rho", "0.2,0.8", "--grid-S", "4", "--grid-varrho", "0.5",
                                          "--grid-lambda", "pi/2"};
    auto args = common;
    args.insert(args.end(), {"--baseline", "--out-dir", p("t")});
    const CliRun r = invoke(args);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(p("t/baseline_ae.csv")));
    const std::string selection = slurp(p("t/selection.csv"));
    EXPECT_NE(selection.find("\nbsts,0,"), std::string::npos);

    auto bad = common;
    bad.insert(bad.end(), {"--grid-S", "1", "--out-dir", p("t2")});
    EXPECT_EQ(invoke(bad).code, 1);
    auto bad_segments = common;
    bad_segments.insert(bad_segments.end(), {"--segments", "1:90", "--out-dir", p("t3")});
    EXPECT_NE(invoke(bad_segments).code, 0);
}

TEST_F(CliTest, FitIsByteIdenticalAcrossRuns) {
    const std::string panel = synthetic("f.csv", "2", "3", "45", "1", "8");
    auto args = [&](const std::string& out) {
        return std::vector<std::string>{"fit", "--panel", panel, "--segments", "1:15,16:30,31:45", "--lag", "1",
                                        "--iterations", "200", "--burn-in", "50", "--seed", "21", "--out-dir", out};
    };
    ASSERT_EQ(invoke(args(p("a"))).code, 0);
    ASSERT_EQ(invoke(args(p("b"))).code, 0);
    for (const char* f : {"coefficients.csv", "predictions.csv"}) {
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    }
    const std::string pred = slurp(p("a/predictions.csv"));
    EXPECT_EQ(pred.substr(0, pred.find('\n')), "segment,unit,week,truth,prediction,lower,upper,ae");
    EXPECT_EQ(std::count(pred.begin(), pred.end(), '\n'), 1 + 3 * 2);
}

TEST_F(CliTest, FitDominantSinglePredictor) {
    const std::string panel = synthetic("one.csv", "2", "1", "40", "0", "2");
    const CliRun r = invoke({"fit", "--panel", panel, "--segments", "1:20,21:40", "--lag", "0", "--iterations", "100",
                       "--burn-in", "20", "--dominant", "--out-dir", p("dom")});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string dom = slurp(p("dom/dominant.csv"));
    std::istringstream in(dom);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "segment,unit,predictor,mean,lower,upper,inclusion_prob");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_NE(line.find(",x1,"), std::string::npos) << line;
    }
    EXPECT_EQ(rows, 4);
}

TEST_F(CliTest, NoiseFreeRegressionFit) {
    // y(t) = b^T x(t-1) with the inputs centred over the training rows
    std::mt19937_64 gen(17);
    std::normal_distribution<double> nd;
    PanelDataset panel;
    panel.units = {"A", "B"};
    panel.predictor_names = {"p", "q"};
    const Index steps = 30;
    panel.outcome = MatrixXd::Zero(steps, 2);
    const MatrixXd beta = (MatrixXd(2, 2) << 1.5, -0.5, 2.0, 1.0).finished();
    for (Index m = 0; m < 2; ++m) {
        MatrixXd x(steps, 2);
        for (Index i = 0; i < x.size(); ++i) x(i) = nd(gen);
        const Eigen::RowVectorXd mu = x.topRows(steps - 2).colwise().mean();
        x.topRows(steps - 2).rowwise() -= mu;
        x.row(steps - 2) = beta.row(m).array().sign() * 2.0;
        for (Index t = 1; t < steps; ++t) panel.outcome(t, m) = x.row(t - 1).dot(beta.row(m));
        panel.predictors.push_back(x);
    }
    save_panel_csv(p("nf.csv"), panel);
    const CliRun r = invoke({"fit", "--panel", p("nf.csv"), "--segments", "1:30", "--lag", "1", "--components",
                       "regression", "--iterations", "400", "--burn-in", "100", "--out-dir", p("nf")});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream in(slurp(p("nf/predictions.csv")));
    std::string line;
    std::getline(in, line);
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_LT(std::stod(line.substr(line.rfind(',') + 1)), 0.02) << line;
    }
    EXPECT_EQ(rows, 2);
}

TEST_F(CliTest, ConfigSnapshotReplays) {
    const std::string panel = synthetic("c.csv", "2", "2", "40", "1", "4");
    const CliRun first = invoke({"fit", "--panel", panel, "--segments", "1:20,21:40", "--lag", "1", "--rho", "0.4",
                           "--iterations", "120", "--burn-in", "20", "--seed", "9", "--out-dir", p("c1")});
    ASSERT_EQ(first.code, 0) << first.err;
    const auto snap = nlohmann::json::parse(slurp(p("c1/config.json")));
    EXPECT_EQ(snap["command"], "fit");
    EXPECT_EQ(snap["options"]["seed"], 9);

    const CliRun replay = invoke({"fit", "--config", p("c1/config.json"), "--out-dir", p("c2")});
    ASSERT_EQ(replay.code, 0) << replay.err;
    EXPECT_EQ(slurp(p("c1/predictions.csv")), slurp(p("c2/predictions.csv")));
    EXPECT_EQ(slurp(p("c1/coefficients.csv")), slurp(p("c2/coefficients.csv")));

    // a snapshot from another subcommand is refused
    EXPECT_EQ(invoke({"tune", "--config", p("c1/config.json")}).code, 1);

    std::ofstream(p("plain.cfg")) << "panel=" << panel << "\nsegments=1:20,21:40\nlag=1\nrho=0.4\n"
                                  << "iterations=120\nburn-in=20\nseed=9\nout-dir=" << p("c3") << "\n";
    const CliRun plain = invoke({"fit", "--config", p("plain.cfg")});
    ASSERT_EQ(plain.code, 0) << plain.err;
    EXPECT_EQ(slurp(p("c1/predictions.csv")), slurp(p("c3/predictions.csv")));
}

TEST_F(CliTest, FitFromTuneSelection) {
    const std::string panel = synthetic("ft.csv", "2", "2", "40", "0", "6");
    ASSERT_EQ(invoke({"tune", "--panel", panel, "--segments", "1:20,21:40", "--lags", "0,1", "--iterations", "80",
                   "--burn-in", "20", "--components", "trend,regression", "--grid-rho", "0.4,0.8", "--grid-S", "4",
                   "--grid-varrho", "0.5", "--grid-lambda", "0", "--out-dir", p("tn")})
                  .code,
              0);
    const CliRun r = invoke({"fit", "--panel", panel, "--from-tune", p("tn"), "--lag", "1", "--iterations", "80",
                       "--burn-in", "20", "--components", "trend,regression", "--out-dir", p("fromtune")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("fit at lag 1"), std::string::npos) << r.out;
    const auto snap = nlohmann::json::parse(slurp(p("fromtune/config.json")));
    EXPECT_EQ(snap["options"]["segments"], "1:20,21:40");
    EXPECT_EQ(invoke({"fit", "--panel", panel, "--from-tune", p("missing"), "--out-dir", p("x")}).code, 2);
}
