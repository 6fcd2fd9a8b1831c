#pragma once

#include "mbsts/mbsts.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace mbsts::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Bad flag combinations; reported with exit code 1 like parse errors.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int exit_ok = 0;
inline constexpr int exit_usage = 1;
inline constexpr int exit_runtime = 2;

// Reads key=value (TOML/INI) files, and also the JSON snapshots this tool
// writes, so a snapshot can be fed straight back through --config.
// Keys without a section belong to the subcommand being run.
class ConfigReader : public CLI::ConfigTOML {
  public:
    explicit ConfigReader(std::string command) : command_(std::move(command)) {}

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        std::string text((std::istreambuf_iterator<char>(input)), std::istreambuf_iterator<char>());
        const auto first = text.find_first_not_of(" \t\r\n");
        std::vector<CLI::ConfigItem> items;
        if (first != std::string::npos && text[first] == '{') {
            json j;
            try {
                j = json::parse(text);
            } catch (const json::exception& e) {
                throw CLI::ConfigError(std::string("bad JSON config: ") + e.what());
            }
            if (j.contains("command") && j["command"] != command_) {
                throw CLI::ConfigError("snapshot is for '" + j["command"].get<std::string>() +
                                                         "', not '" + command_ + "'");
            }
            const json& opts = j.contains("options") ? j.at("options") : j;
            for (const auto& [key, value] : opts.items()) {
                if (key == "command") continue;
                CLI::ConfigItem item;
                item.parents = {command_};
                item.name = key;
                item.inputs.push_back(value.is_string() ? value.get<std::string>() : value.dump());
                items.push_back(std::move(item));
            }
            return items;
        }
        std::istringstream in(text);
        items = CLI::ConfigTOML::from_config(in);
        for (auto& item : items) {
            if (item.parents.empty() && !command_.empty()) {
                item.parents = {command_};
            }
            // list flags take a single comma-separated value
            if (item.inputs.size() > 1) {
                std::string joined;
                for (const auto& s : item.inputs) {
                    joined += (joined.empty() ? "" : ",") + s;
                }
                item.inputs = {joined};
            }
        }
        return items;
    }

  private:
    std::string command_;
};

// ---------------------------------------------------------------------------
// Flag value parsing
// ---------------------------------------------------------------------------

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text + ",") {
        if (c == ',') {
            const auto t = csv::trim(cur);
            if (!t.empty()) {
                out.emplace_back(t);
            }
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    return out;
}

inline double parse_number(const std::string& token, const std::string& flag) {
    if (token == "pi") return std::numbers::pi;
    if (token == "pi/2") return std::numbers::pi / 2.0;
    double v = 0.0;
    if (!csv::parse_double(token, v)) {
        throw UsageError(flag + ": '" + token + "' is not a number");
    }
    return v;
}

inline std::vector<double> parse_doubles(const std::string& text, const std::string& flag) {
    std::vector<double> out;
    for (const auto& t : split_list(text)) {
        out.push_back(parse_number(t, flag));
    }
    if (out.empty()) {
        throw UsageError(flag + ": empty list");
    }
    return out;
}

inline std::vector<int> parse_ints(const std::string& text, const std::string& flag) {
    std::vector<int> out;
    for (const auto& t : split_list(text)) {
        long long v = 0;
        if (!csv::parse_int(t, v)) {
            throw UsageError(flag + ": '" + t + "' is not an integer");
        }
        out.push_back(static_cast<int>(v));
    }
    if (out.empty()) {
        throw UsageError(flag + ": empty list");
    }
    return out;
}

inline SeriesComponents parse_components(const std::string& text) {
    SeriesComponents c{false, false, false, false, 4};
    for (const auto& t : split_list(text)) {
        if (t == "trend") c.trend = true;
        else if (t == "seasonal") c.seasonal = true;
        else if (t == "cycle") c.cycle = true;
        else if (t == "regression") c.regression = true;
        else throw UsageError("--components: unknown component '" + t + "' (trend, seasonal, cycle, regression)");
    }
    return c;
}

inline PartitionPlan parse_segments(const std::string& text) {
    try {
        return PartitionPlan::parse(text);
    } catch (const Error& e) {
        throw UsageError(std::string("--segments: ") + e.what());
    }
}

inline std::string fixed(double v, int decimals = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) {
        fail(ErrorKind::data, "cannot write " + path.string());
    }
}

inline json matrix_json(const MatrixXd& m) {
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

inline json matrix_json(const MatrixXi& m) { return matrix_json(MatrixXd(m.cast<double>())); }

// ---------------------------------------------------------------------------
// Shared chain / model flags
// ---------------------------------------------------------------------------

struct ModelFlags {
    std::string panel;
    std::string segments = "9:22,23:37,38:53";
    std::uint64_t seed = 1;
    long iterations = 2000;
    long burn_in = 500;
    long thin = 1;
    int jobs = 1;
    std::string components = "trend,seasonal,cycle,regression";
    double credible = 0.95;
    double inclusion = 0.5;
    bool baseline = false;
    std::string out_dir = ".";

    void add_to(CLI::App* sub) {
        sub->add_option("--panel", panel, "Panel CSV (unit,week,outcome,predictors...)")->required();
        sub->add_option("--segments", segments, "Week segments, start:end comma list");
        sub->add_option("--seed", seed, "Base seed");
        sub->add_option("--iterations", iterations, "MCMC iterations per fit");
        sub->add_option("--burn-in", burn_in, "Discarded leading iterations");
        sub->add_option("--thin", thin, "Keep every n-th iteration");
        sub->add_option("--jobs", jobs, "Concurrent fits")->check(CLI::PositiveNumber);
        sub->add_option("--components", components, "Comma list of trend,seasonal,cycle,regression");
        sub->add_option("--credible", credible, "Credible interval level");
        sub->add_option("--inclusion", inclusion, "Prior inclusion probability");
        sub->add_option("--out-dir", out_dir, "Output directory");
    }

    FitOptions options() const {
        FitOptions o;
        o.components = parse_components(components);
        o.mcmc.iterations = iterations;
        o.mcmc.burn_in = burn_in;
        o.mcmc.thinning = thin;
        o.seed = seed;
        o.jobs = jobs;
        o.credible_level = credible;
        o.inclusion_prob = inclusion;
        o.mcmc.validate();
        if (!(credible > 0.0 && credible < 1.0)) {
            throw UsageError("--credible must lie in (0, 1)");
        }
        if (!(inclusion > 0.0 && inclusion < 1.0)) {
            throw UsageError("--inclusion must lie in (0, 1)");
        }
        return o;
    }

    void snapshot(json& j) const {
        j["panel"] = panel;
        j["segments"] = segments;
        j["seed"] = seed;
        j["iterations"] = iterations;
        j["burn-in"] = burn_in;
        j["thin"] = thin;
        j["jobs"] = jobs;
        j["components"] = components;
        j["credible"] = credible;
        j["inclusion"] = inclusion;
        j["baseline"] = baseline;
        j["out-dir"] = out_dir;
    }
};

inline void write_snapshot(const fs::path& path, const std::string& command, const json& options) {
    json j;
    j["command"] = command;
    j["options"] = options;
    write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

struct PrepareFlags {
    std::string out;
    bool synthetic = false;
    long m = 3;
    long d = 7;
    long t = 60;
    int true_lag = 0;
    std::uint64_t seed = 1;
    long true_predictors = 2;
    double magnitude = 3.0;
    double correlation = 0.5;
    std::string truth;
    std::string sources = "jhu,oxcgrt";
    std::string population;
    std::string indices;
    std::string cache = "cache";
    int year = 2020;
    bool refresh = false;
    bool offline = false;
};

inline fs::path sibling(const fs::path& out, const std::string& suffix) {
    fs::path p = out;
    p.replace_filename(out.stem().string() + suffix);
    return p;
}

inline void cmd_prepare(const PrepareFlags& f, const Fetcher& fetcher, std::ostream& out, std::ostream& err) {
    const fs::path out_path(f.out);
    json snap;
    snap["out"] = f.out;
    snap["synthetic"] = f.synthetic;
    snap["seed"] = f.seed;
    if (f.synthetic) {
        if (f.m < 1 || f.d < 0 || f.t < 2 || f.true_lag < 0) {
            throw UsageError("synthetic panel needs --M >= 1, --d >= 0, --T >= 2, --true-lag >= 0");
        }
        const fs::path truth_path = f.truth.empty() ? sibling(out_path, ".truth.json") : fs::path(f.truth);
        SyntheticConfig cfg = SyntheticConfig::standard(f.m, f.d, f.t, f.true_lag, f.seed, f.true_predictors,
                                                        f.magnitude, 50.0, f.correlation);
        const SyntheticPanel syn = generate_synthetic(cfg);
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        save_panel_csv(out_path, syn.panel);
        json truth;
        truth["seed"] = f.seed;
        truth["M"] = f.m;
        truth["d"] = f.d;
        truth["T"] = f.t;
        truth["true_lag"] = f.true_lag;
        truth["units"] = syn.panel.units;
        truth["predictors"] = syn.panel.predictor_names;
        truth["beta"] = matrix_json(syn.truth.beta);
        truth["gamma"] = matrix_json(syn.truth.gamma);
        truth["observation_cov"] = matrix_json(syn.truth.covariances.observation);
        truth["level_cov"] = matrix_json(syn.truth.covariances.level);
        truth["slope_cov"] = matrix_json(syn.truth.covariances.slope);
        write_text(truth_path, truth.dump(2) + "\n");
        snap["M"] = f.m;
        snap["d"] = f.d;
        snap["T"] = f.t;
        snap["true-lag"] = f.true_lag;
        snap["true-predictors"] = f.true_predictors;
        snap["magnitude"] = f.magnitude;
        snap["correlation"] = f.correlation;
        snap["truth"] = truth_path.string();
        write_snapshot(sibling(out_path, ".config.json"), "prepare", snap);
        out << "wrote " << out_path.string() << " (" << syn.panel.series() << " units, " << syn.panel.steps()
            << " weeks) and " << truth_path.string() << "\n";
        return;
    }

    if (f.population.empty()) {
        throw UsageError("prepare needs --population (or --synthetic)");
    }
    const auto names = split_list(f.sources);
    if (std::find(names.begin(), names.end(), "jhu") == names.end()) {
        throw UsageError("--sources must include jhu (case counts)");
    }
    Fetcher fetch = fetcher;
    if (f.offline) {
        fetch = [](const std::string& url) -> std::string { fail(ErrorKind::network, "offline: not fetching " + url); };
    }
    const FetchResult fetched = fetch_public_sources(f.cache, names, fetch, f.refresh);
    for (const auto& w : fetched.warnings) {
        err << "warning: " << w << "\n";
    }
    RawSources raw;
    for (std::size_t i = 0; i < fetched.records.size(); ++i) {
        const std::string bytes = read_file_bytes(fetched.files[i]);
        if (fetched.records[i].source == "jhu") raw.jhu_csv = bytes;
        if (fetched.records[i].source == "oxcgrt") raw.oxcgrt_csv = bytes;
    }
    std::ifstream pop_in(f.population);
    if (!pop_in) {
        fail(ErrorKind::data, "cannot open population file " + f.population);
    }
    const auto population = read_population_csv(pop_in);
    IndexTable indices;
    if (!f.indices.empty()) {
        std::ifstream idx_in(f.indices);
        if (!idx_in) {
            fail(ErrorKind::data, "cannot open indices file " + f.indices);
        }
        indices = read_indices_csv(idx_in, f.year);
    }
    const auto built = build_weekly_panel(raw, population, f.indices.empty() ? nullptr : &indices, f.year);
    for (const auto& w : built.warnings) {
        err << "warning: " << w << "\n";
    }
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    save_panel_csv(out_path, built.panel);
    std::string manifest;
    for (const auto& r : fetched.records) {
        manifest += r.to_json().dump() + "\n";
    }
    write_text(sibling(out_path, ".manifest.jsonl"), manifest);
    snap["sources"] = f.sources;
    snap["population"] = f.population;
    snap["indices"] = f.indices;
    snap["cache"] = f.cache;
    snap["year"] = f.year;
    snap["refresh"] = f.refresh;
    snap["offline"] = f.offline;
    write_snapshot(sibling(out_path, ".config.json"), "prepare", snap);
    out << "wrote " << out_path.string() << " (" << built.panel.series() << " units, weeks " << built.panel.first_week
        << "-" << built.panel.last_week() << ")\n";
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

struct TuneFlags {
    ModelFlags model;
    std::string lags = "0,1,2";
    std::string grid_rho = "0.2,0.4,0.6,0.8";
    std::string grid_s = "3,4,5,6,8,10,12";
    std::string grid_varrho = "0.1,0.2,0.4,0.6,0.8,0.9";
    std::string grid_lambda = "0,pi/2,pi";
};

inline HyperGrid parse_grid(const TuneFlags& f) {
    HyperGrid g{parse_doubles(f.grid_rho, "--grid-rho"), parse_ints(f.grid_s, "--grid-S"),
                parse_doubles(f.grid_varrho, "--grid-varrho"), parse_doubles(f.grid_lambda, "--grid-lambda")};
    try {
        g.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    return g;
}

inline void print_summary(std::ostream& out, const std::string& title, const TuneReport& r) {
    out << title << "\n";
    out << "lag";
    for (Index k = 0; k < r.plan.size(); ++k) {
        const auto& s = r.plan.segments[static_cast<std::size_t>(k)];
        out << "\t[" << s.start << "," << s.end << "]";
    }
    out << "\taverage\trho\tS\tvarrho\tlambda\n";
    for (const auto& sel : r.selections) {
        out << sel.lag;
        for (Index k = 0; k < sel.ae.size(); ++k) out << '\t' << fixed(sel.ae[k], 3);
        out << '\t' << fixed(sel.mean_ae, 3) << '\t' << csv::format_short(sel.best.rho) << '\t' << sel.best.seasons
            << '\t' << csv::format_short(sel.best.damping) << '\t' << csv::format_short(sel.best.frequency) << '\n';
    }
    out << "best lag: " << r.best_lag() << "\n";
}

inline void write_selection_rows(std::ostream& os, const std::string& model, const TuneReport& r) {
    for (const auto& sel : r.selections) {
        os << model << ',' << sel.lag << ',' << csv::format_exact(sel.best.rho) << ',' << sel.best.seasons << ','
           << csv::format_exact(sel.best.damping) << ',' << csv::format_exact(sel.best.frequency) << ','
           << csv::format_short(sel.mean_ae, 12) << '\n';
    }
}

inline void cmd_tune(const TuneFlags& f, std::ostream& out) {
    const FitOptions options = f.model.options();
    const PartitionPlan plan = parse_segments(f.model.segments);
    const HyperGrid grid = parse_grid(f);
    const std::vector<int> lags = parse_ints(f.lags, "--lags");
    for (int l : lags) {
        if (l < 0) throw UsageError("--lags: lags must be non-negative");
    }
    const PanelDataset panel = load_panel_csv(f.model.panel);
    plan.validate(panel, *std::max_element(lags.begin(), lags.end()));

    const fs::path dir(f.model.out_dir);
    fs::create_directories(dir);
    std::ostringstream selection;
    selection << "model,lag,rho,S,varrho,lambda,mean_ae\n";

    const TuneReport report = grid_search(panel, plan, grid, lags, options);
    {
        std::ostringstream ae, coef;
        write_ae_csv(ae, report);
        write_coefficients_csv(coef, panel, report);
        write_text(dir / "ae.csv", ae.str());
        write_text(dir / "coefficients.csv", coef.str());
    }
    write_selection_rows(selection, "mbsts", report);
    print_summary(out, "MBSTS-TL normalized AE", report);

    if (f.model.baseline) {
        const TuneReport base = bsts_tl_baseline(panel, plan, grid, lags, options);
        std::ostringstream ae, coef;
        write_ae_csv(ae, base);
        write_coefficients_csv(coef, panel, base);
        write_text(dir / "baseline_ae.csv", ae.str());
        write_text(dir / "baseline_coefficients.csv", coef.str());
        write_selection_rows(selection, "bsts", base);
        out << "\n";
        print_summary(out, "BSTS-TL normalized AE", base);
    }
    write_text(dir / "selection.csv", selection.str());

    json snap;
    f.model.snapshot(snap);
    snap["lags"] = f.lags;
    snap["grid-rho"] = f.grid_rho;
    snap["grid-S"] = f.grid_s;
    snap["grid-varrho"] = f.grid_varrho;
    snap["grid-lambda"] = f.grid_lambda;
    write_snapshot(dir / "config.json", "tune", snap);
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitFlags {
    ModelFlags model;
    int lag = 0;
    double rho = 0.6;
    int seasons = 4;
    double varrho = 0.5;
    std::string lambda = "0";
    std::string from_tune;
    bool dominant = false;
    bool lag_given = false;
    bool segments_given = false;
};

// Selected (lag, point) from a tune output directory; the requested lag when
// given, otherwise the lag with the smallest mean AE (smallest lag on ties).
inline std::pair<int, GridPoint> read_tune_selection(const fs::path& dir, const std::string& model,
                                                     std::optional<int> lag) {
    std::ifstream in(dir / "selection.csv");
    if (!in) {
        fail(ErrorKind::data, "cannot open " + (dir / "selection.csv").string());
    }
    const csv::Table t = csv::read_table(in, "selection.csv");
    const std::vector<std::string> want{"model", "lag", "rho", "S", "varrho", "lambda", "mean_ae"};
    for (const auto& name : want) {
        if (t.column(name) < 0) fail(ErrorKind::data, "selection.csv: missing column " + name);
    }
    bool found = false;
    int best_lag = 0;
    double best_ae = 0.0;
    GridPoint best;
    for (const auto& row : t.rows) {
        if (row.size() != t.header.size()) fail(ErrorKind::data, "selection.csv: ragged row");
        if (row[static_cast<std::size_t>(t.column("model"))] != model) continue;
        double v[6];
        for (int i = 0; i < 6; ++i) {
            if (!csv::parse_double(row[static_cast<std::size_t>(t.column(want[static_cast<std::size_t>(i + 1)]))],
                                   v[i])) {
                fail(ErrorKind::data, "selection.csv: bad number");
            }
        }
        const int l = static_cast<int>(v[0]);
        if (lag && l != *lag) continue;
        if (!found || v[5] < best_ae || (v[5] == best_ae && l < best_lag)) {
            found = true;
            best_lag = l;
            best_ae = v[5];
            best = GridPoint{v[1], static_cast<int>(v[2]), v[3], v[4]};
        }
    }
    if (!found) {
        fail(ErrorKind::data, "selection.csv has no " + model + " row" +
                                  (lag ? " for lag " + std::to_string(*lag) : std::string()));
    }
    return {best_lag, best};
}

inline void cmd_fit(FitFlags f, std::ostream& out) {
    int lag = f.lag;
    GridPoint point{f.rho, f.seasons, f.varrho, parse_number(f.lambda, "--lambda")};
    if (!f.from_tune.empty()) {
        const fs::path tdir(f.from_tune);
        std::tie(lag, point) = read_tune_selection(tdir, f.model.baseline ? "bsts" : "mbsts",
                                                   f.lag_given ? std::optional<int>(f.lag) : std::nullopt);
        if (!f.segments_given && fs::exists(tdir / "config.json")) {
            std::ifstream cin(tdir / "config.json");
            const json j = json::parse(cin, nullptr, false);
            if (!j.is_discarded() && j.contains("options") && j["options"].contains("segments")) {
                f.model.segments = j["options"]["segments"].get<std::string>();
            }
        }
    }
    if (lag < 0) throw UsageError("--lag must be non-negative");
    try {
        HyperGrid::single(point).validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const FitOptions options = f.model.options();
    const PartitionPlan plan = parse_segments(f.model.segments);
    const PanelDataset panel = load_panel_csv(f.model.panel);
    plan.validate(panel, lag);

    std::vector<SegmentFit> fits(static_cast<std::size_t>(plan.size()));
    detail::parallel_for(plan.size(), options.jobs, [&](Index k) {
        fits[static_cast<std::size_t>(k)] = fit_segment(panel, plan.segments[static_cast<std::size_t>(k)], k, lag,
                                                        point, options, f.model.baseline);
    });

    const fs::path dir(f.model.out_dir);
    fs::create_directories(dir);
    std::ostringstream coef, pred;
    write_coefficients_header(coef);
    pred << "segment,unit,week,truth,prediction,lower,upper,ae\n";
    VectorXd ae(plan.size());
    for (const auto& fit : fits) {
        write_coefficient_rows(coef, panel, fit);
        ae[fit.segment_index] = fit.ae;
        for (Index m = 0; m < panel.series(); ++m) {
            pred << (fit.segment_index + 1) << ',' << panel.units[static_cast<std::size_t>(m)] << ','
                 << fit.segment.end << ',' << csv::format_short(fit.truth[m], 12) << ','
                 << csv::format_short(fit.prediction[m], 12) << ',' << csv::format_short(fit.lower[m], 12) << ','
                 << csv::format_short(fit.upper[m], 12) << ',' << csv::format_short(fit.ae, 12) << '\n';
        }
    }
    write_text(dir / "coefficients.csv", coef.str());
    write_text(dir / "predictions.csv", pred.str());

    out << (f.model.baseline ? "BSTS-TL" : "MBSTS-TL") << " fit at lag " << lag << ", rho "
        << csv::format_short(point.rho) << ", S " << point.seasons << ", varrho " << csv::format_short(point.damping)
        << ", lambda " << csv::format_short(point.frequency) << "\n";
    for (const auto& fit : fits) {
        out << "segment " << (fit.segment_index + 1) << " [" << fit.segment.start << "," << fit.segment.end
            << "] ae " << fixed(fit.ae) << "\n";
    }
    out << "average ae " << fixed(mean_ae(ae)) << "\n";

    if (f.dominant) {
        std::ostringstream dom;
        dom << "segment,unit,predictor,mean,lower,upper,inclusion_prob\n";
        for (const auto& fit : fits) {
            for (Index m = 0; m < panel.series(); ++m) {
                const CoefficientSummary* top = nullptr;
                for (const auto& c : fit.coefficients) {
                    if (c.series == m && (top == nullptr || std::abs(c.mean) > std::abs(top->mean))) top = &c;
                }
                if (top == nullptr) continue;
                const auto& unit = panel.units[static_cast<std::size_t>(m)];
                const auto& name = panel.predictor_names[static_cast<std::size_t>(top->predictor)];
                dom << (fit.segment_index + 1) << ',' << unit << ',' << name << ',' << csv::format_short(top->mean)
                    << ',' << csv::format_short(top->lower) << ',' << csv::format_short(top->upper) << ','
                    << csv::format_short(top->inclusion_prob) << '\n';
                out << "segment " << (fit.segment_index + 1) << " " << unit << ": " << name << " ("
                    << fixed(top->mean, 3) << ")\n";
            }
        }
        write_text(dir / "dominant.csv", dom.str());
    }

    json snap;
    f.model.snapshot(snap);
    snap["lag"] = lag;
    snap["rho"] = point.rho;
    snap["S"] = point.seasons;
    snap["varrho"] = point.damping;
    snap["lambda"] = csv::format_exact(point.frequency);
    snap["dominant"] = f.dominant;
    write_snapshot(dir / "config.json", "fit", snap);
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline void print_error(std::ostream& err, const std::string& kind, const std::string& message) {
    std::string flat = message;
    std::replace(flat.begin(), flat.end(), '\n', ' ');
    err << json{{"error", kind}, {"message", flat}}.dump() << "\n";
}

/// Runs one invocation; `args` excludes the program name. Returns the exit
/// code (0 ok, 1 usage error, 2 runtime error).
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                   const Fetcher& fetcher) {
    CLI::App app{"Multivariate structural time series with time-lagged predictors", "mbsts"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string command;
    for (const auto& a : args) {
        if (a == "prepare" || a == "tune" || a == "fit") {
            command = a;
            break;
        }
    }
    app.config_formatter(std::make_shared<ConfigReader>(command));
    app.set_config("--config", "", "Key=value or JSON snapshot file with flag values");

    PrepareFlags pf;
    auto* prepare = app.add_subcommand("prepare", "Build a weekly panel from public sources or a synthetic model");
    prepare->add_option("--out", pf.out, "Output panel CSV")->required();
    prepare->add_flag("--synthetic", pf.synthetic, "Generate a synthetic panel instead");
    prepare->add_option("--M", pf.m, "Synthetic: number of units");
    prepare->add_option("--d", pf.d, "Synthetic: predictors per unit");
    prepare->add_option("--T", pf.t, "Synthetic: number of weeks");
    prepare->add_option("--true-lag", pf.true_lag, "Synthetic: lag of the predictor effect");
    prepare->add_option("--seed", pf.seed, "Synthetic: seed");
    prepare->add_option("--true-predictors", pf.true_predictors, "Synthetic: non-zero coefficients per unit");
    prepare->add_option("--magnitude", pf.magnitude, "Synthetic: size of the non-zero coefficients");
    prepare->add_option("--correlation", pf.correlation, "Synthetic: cross-unit error correlation");
    prepare->add_option("--truth", pf.truth, "Synthetic: ground-truth JSON path");
    prepare->add_option("--sources", pf.sources, "Public sources to fetch (jhu,oxcgrt)");
    prepare->add_option("--population", pf.population, "CSV unit[,name],population");
    prepare->add_option("--indices", pf.indices, "CSV of extra weekly or daily index columns");
    prepare->add_option("--cache", pf.cache, "Download cache directory");
    prepare->add_option("--year", pf.year, "Calendar year of the ISO weeks");
    prepare->add_flag("--refresh", pf.refresh, "Re-download and verify cached sources");
    prepare->add_flag("--offline", pf.offline, "Use the cache only");

    TuneFlags tf;
    auto* tune = app.add_subcommand("tune", "Grid search over hyper-parameters and lags");
    tf.model.add_to(tune);
    tune->add_flag("--baseline", tf.model.baseline, "Also run the univariate baseline");
    tune->add_option("--lags", tf.lags, "Comma list of lags");
    tune->add_option("--grid-rho", tf.grid_rho, "Slope AR coefficients");
    tune->add_option("--grid-S", tf.grid_s, "Season counts");
    tune->add_option("--grid-varrho", tf.grid_varrho, "Cycle damping factors");
    tune->add_option("--grid-lambda", tf.grid_lambda, "Cycle frequencies (pi and pi/2 accepted)");

    FitFlags ff;
    auto* fit = app.add_subcommand("fit", "Fit every segment at one hyper-parameter point");
    ff.model.add_to(fit);
    fit->add_flag("--baseline", ff.model.baseline, "Fit the univariate baseline instead");
    auto* lag_opt = fit->add_option("--lag", ff.lag, "Predictor lag");
    fit->add_option("--rho", ff.rho, "Slope AR coefficient");
    fit->add_option("--S", ff.seasons, "Season count");
    fit->add_option("--varrho", ff.varrho, "Cycle damping factor");
    fit->add_option("--lambda", ff.lambda, "Cycle frequency");
    fit->add_option("--from-tune", ff.from_tune, "Tune output directory to take the selected point from");
    fit->add_flag("--dominant", ff.dominant, "Report the largest |coefficient| per unit");
    auto* seg_opt = fit->get_option("--segments");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        print_error(err, "usage", e.what());
        return exit_usage;
    }

    try {
        if (prepare->parsed()) {
            cmd_prepare(pf, fetcher, out, err);
        } else if (tune->parsed()) {
            cmd_tune(tf, out);
        } else if (fit->parsed()) {
            ff.lag_given = lag_opt->count() > 0;
            ff.segments_given = seg_opt->count() > 0;
            cmd_fit(ff, out);
        }
    } catch (const UsageError& e) {
        print_error(err, "usage", e.what());
        return exit_usage;
    } catch (const Error& e) {
        print_error(err, std::string(to_string(e.kind())), e.what());
        return exit_runtime;
    } catch (const std::exception& e) {
        print_error(err, "internal", e.what());
        return exit_runtime;
    }
    return exit_ok;
}

} // namespace mbsts::cli
