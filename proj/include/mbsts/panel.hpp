#pragma once

#include "mbsts/csv.hpp"
#include "mbsts/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace mbsts {

using Eigen::Index;
using Eigen::MatrixXd;

/// Aligned weekly panel: one outcome column and d named predictors for each
/// of M units over a contiguous range of week indices.
struct PanelDataset {
    std::vector<std::string> units;
    int first_week = 1;
    std::string outcome_name = "case_rate";
    std::vector<std::string> predictor_names;
    MatrixXd outcome;                 // T x M
    std::vector<MatrixXd> predictors; // M entries, each T x d

    Index series() const { return static_cast<Index>(units.size()); }
    Index steps() const { return outcome.rows(); }
    Index predictor_count() const { return static_cast<Index>(predictor_names.size()); }
    int last_week() const { return first_week + static_cast<int>(steps()) - 1; }
    Index row_of(int week) const { return week - first_week; }

    /// Predictor rows for one week, stacked by unit (M x d).
    MatrixXd predictor_block(int week) const {
        MatrixXd out(series(), predictor_count());
        for (Index m = 0; m < series(); ++m) {
            out.row(m) = predictors[static_cast<std::size_t>(m)].row(row_of(week));
        }
        return out;
    }

    void validate() const {
        const Index m = series();
        if (m == 0 || steps() == 0) {
            fail(ErrorKind::data, "panel: no units or no weeks");
        }
        if (outcome.cols() != m || static_cast<Index>(predictors.size()) != m) {
            fail(ErrorKind::dimension, "panel: outcome/predictor shapes do not match unit count");
        }
        std::set<std::string> seen_units(units.begin(), units.end());
        if (static_cast<Index>(seen_units.size()) != m) {
            fail(ErrorKind::data, "panel: duplicate unit names");
        }
        std::set<std::string> seen_cols(predictor_names.begin(), predictor_names.end());
        if (seen_cols.size() != predictor_names.size()) {
            fail(ErrorKind::data, "panel: duplicate predictor column names");
        }
        if (!outcome.allFinite()) {
            fail(ErrorKind::data, "panel: outcome has missing or non-finite cells");
        }
        for (Index u = 0; u < m; ++u) {
            const auto& x = predictors[static_cast<std::size_t>(u)];
            if (x.rows() != steps() || x.cols() != predictor_count()) {
                fail(ErrorKind::dimension, "panel: predictor matrix shape mismatch for unit " + units[u]);
            }
            if (!x.allFinite()) {
                fail(ErrorKind::data, "panel: predictor cells missing or non-finite for unit " + units[u]);
            }
            for (Index j = 0; j < predictor_count(); ++j) {
                const auto [lo, hi] = range_for(predictor_names[static_cast<std::size_t>(j)]);
                for (Index t = 0; t < steps(); ++t) {
                    const double v = x(t, j);
                    if (v < lo || v > hi) {
                        fail(ErrorKind::data, "panel: " + predictor_names[static_cast<std::size_t>(j)] + " value " +
                                                  csv::format_short(v) + " out of range [" + csv::format_short(lo) +
                                                  ", " + csv::format_short(hi) + "] for unit " + units[u] +
                                                  " week " + std::to_string(first_week + t));
                    }
                }
            }
        }
    }

    /// Admissible range of a named index column; unbounded for unknown names.
    static std::pair<double, double> range_for(const std::string& column) {
        if (column == "si") {
            return {0.0, 100.0};
        }
        if (column == "nsad" || column == "psad") {
            return {0.0, 1.0};
        }
        return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    }

    bool operator==(const PanelDataset& o) const {
        if (units != o.units || first_week != o.first_week || outcome_name != o.outcome_name ||
            predictor_names != o.predictor_names || outcome != o.outcome || predictors.size() != o.predictors.size()) {
            return false;
        }
        for (std::size_t i = 0; i < predictors.size(); ++i) {
            if (predictors[i] != o.predictors[i]) {
                return false;
            }
        }
        return true;
    }
};

/// Long-format panel: header `unit,week,<outcome>,<predictors...>`, one row
/// per (unit, week). Weeks are sorted and units ordered lexicographically.
inline PanelDataset read_panel_csv(std::istream& in, const std::string& source = "panel") {
    const csv::Table table = csv::read_table(in, source);
    if (table.header.size() < 3 || table.header[0] != "unit" || table.header[1] != "week") {
        fail(ErrorKind::data, source + ": header must start with unit,week,<outcome>");
    }
    const std::size_t width = table.header.size();
    std::map<std::string, std::map<long long, std::vector<double>>> cells;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = source + " line " + std::to_string(r + 2);
        if (row.size() != width) {
            fail(ErrorKind::data, where + ": expected " + std::to_string(width) + " fields, got " +
                                      std::to_string(row.size()));
        }
        const std::string unit(csv::trim(row[0]));
        long long week = 0;
        if (unit.empty() || !csv::parse_int(row[1], week)) {
            fail(ErrorKind::data, where + ": bad unit or week");
        }
        std::vector<double> values(width - 2);
        for (std::size_t c = 2; c < width; ++c) {
            if (!csv::parse_double(row[c], values[c - 2])) {
                fail(ErrorKind::data, source + ": missing cell " + table.header[c] + " for unit " + unit + " week " +
                                          std::to_string(week));
            }
        }
        auto& per_unit = cells[unit];
        if (!per_unit.emplace(week, std::move(values)).second) {
            fail(ErrorKind::data, source + ": duplicate row for unit " + unit + " week " + std::to_string(week));
        }
    }
    if (cells.empty()) {
        fail(ErrorKind::data, source + ": no data rows");
    }

    std::set<long long> weeks;
    for (const auto& [unit, rows] : cells) {
        for (const auto& [w, v] : rows) {
            weeks.insert(w);
        }
    }
    long long prev = *weeks.begin();
    for (long long w : weeks) {
        if (w > prev + 1) {
            fail(ErrorKind::data, source + ": non-contiguous weeks, gap between week " + std::to_string(prev) +
                                      " and week " + std::to_string(w));
        }
        prev = w;
    }
    const long long first = *weeks.begin();
    const auto steps = static_cast<Index>(weeks.size());

    PanelDataset p;
    p.first_week = static_cast<int>(first);
    p.outcome_name = table.header[2];
    p.predictor_names.assign(table.header.begin() + 3, table.header.end());
    const auto d = static_cast<Index>(p.predictor_names.size());
    p.outcome.resize(steps, static_cast<Index>(cells.size()));
    Index m = 0;
    for (const auto& [unit, rows] : cells) {
        p.units.push_back(unit);
        MatrixXd x(steps, d);
        for (Index t = 0; t < steps; ++t) {
            const auto it = rows.find(first + t);
            if (it == rows.end()) {
                fail(ErrorKind::data, source + ": missing row for unit " + unit + " week " + std::to_string(first + t));
            }
            p.outcome(t, m) = it->second[0];
            for (Index j = 0; j < d; ++j) {
                x(t, j) = it->second[static_cast<std::size_t>(j + 1)];
            }
        }
        p.predictors.push_back(std::move(x));
        ++m;
    }
    p.validate();
    return p;
}

inline PanelDataset load_panel_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::data, "cannot open panel file " + path.string());
    }
    return read_panel_csv(in, path.filename().string());
}

inline void write_panel_csv(std::ostream& os, const PanelDataset& p) {
    os << "unit,week," << p.outcome_name;
    for (const auto& name : p.predictor_names) {
        os << ',' << name;
    }
    os << '\n';
    for (Index m = 0; m < p.series(); ++m) {
        for (Index t = 0; t < p.steps(); ++t) {
            os << p.units[static_cast<std::size_t>(m)] << ',' << (p.first_week + t) << ','
               << csv::format_exact(p.outcome(t, m));
            for (Index j = 0; j < p.predictor_count(); ++j) {
                os << ',' << csv::format_exact(p.predictors[static_cast<std::size_t>(m)](t, j));
            }
            os << '\n';
        }
    }
}

inline void save_panel_csv(const std::filesystem::path& path, const PanelDataset& p) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::data, "cannot write panel file " + path.string());
    }
    write_panel_csv(out, p);
}

} // namespace mbsts
