#pragma once

#include "mbsts/csv.hpp"
#include "mbsts/error.hpp"
#include "mbsts/panel.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace mbsts {

// ---------------------------------------------------------------------------
// Hashing and calendar helpers
// ---------------------------------------------------------------------------

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        fail(ErrorKind::integrity, "sha256: digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

struct IsoWeek {
    int year = 0;
    int week = 0;
    auto operator<=>(const IsoWeek&) const = default;
};

inline IsoWeek iso_week(std::chrono::year_month_day date) {
    using namespace std::chrono;
    const sys_days day{date};
    const unsigned wd = weekday{day}.iso_encoding(); // Monday = 1
    const sys_days thursday = day - days{static_cast<int>(wd) - 1} + days{3};
    const year_month_day thu{thursday};
    const sys_days jan1{thu.year() / January / 1};
    return {static_cast<int>(thu.year()), static_cast<int>((thursday - jan1).count() / 7) + 1};
}

/// Parses M/D/YY (JHU headers), YYYYMMDD (OxCGRT) or YYYY-MM-DD.
inline std::optional<std::chrono::year_month_day> parse_date(std::string_view text) {
    using namespace std::chrono;
    text = csv::trim(text);
    long long a = 0, b = 0, c = 0;
    auto parts = [&](char sep) {
        std::vector<std::string_view> out;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= text.size(); ++i) {
            if (i == text.size() || text[i] == sep) {
                out.push_back(text.substr(start, i - start));
                start = i + 1;
            }
        }
        return out;
    };
    year_month_day ymd;
    if (text.find('/') != std::string_view::npos) {
        const auto p = parts('/');
        if (p.size() != 3 || !csv::parse_int(p[0], a) || !csv::parse_int(p[1], b) || !csv::parse_int(p[2], c)) {
            return std::nullopt;
        }
        const long long yr = c < 100 ? 2000 + c : c;
        ymd = year{static_cast<int>(yr)} / month{static_cast<unsigned>(a)} / day{static_cast<unsigned>(b)};
    } else if (text.find('-') != std::string_view::npos) {
        const auto p = parts('-');
        if (p.size() != 3 || !csv::parse_int(p[0], a) || !csv::parse_int(p[1], b) || !csv::parse_int(p[2], c)) {
            return std::nullopt;
        }
        ymd = year{static_cast<int>(a)} / month{static_cast<unsigned>(b)} / day{static_cast<unsigned>(c)};
    } else if (text.size() == 8 && csv::parse_int(text, a)) {
        ymd = year{static_cast<int>(a / 10000)} / month{static_cast<unsigned>((a / 100) % 100)} /
              day{static_cast<unsigned>(a % 100)};
    } else {
        return std::nullopt;
    }
    if (!ymd.ok()) {
        return std::nullopt;
    }
    return ymd;
}

// ---------------------------------------------------------------------------
// Remote sources with a verified local cache
// ---------------------------------------------------------------------------

struct SourceInfo {
    std::string name;
    std::string url;
    std::string file;
};

inline const std::vector<SourceInfo>& known_sources() {
    static const std::vector<SourceInfo> sources{
        {"jhu",
         "https://raw.githubusercontent.com/CSSEGISandData/COVID-19/master/csse_covid_19_data/"
         "csse_covid_19_time_series/time_series_covid19_confirmed_US.csv",
         "jhu_confirmed_us.csv"},
        {"oxcgrt", "https://raw.githubusercontent.com/OxCGRT/USA-covid-policy/master/data/OxCGRT_US_latest.csv",
         "oxcgrt_us.csv"},
    };
    return sources;
}

struct ManifestRecord {
    std::string source;
    std::string url;
    std::string timestamp;
    std::string sha256;
    std::uint64_t bytes = 0;
    std::string file;

    nlohmann::json to_json() const {
        return {{"source", source}, {"url", url}, {"timestamp", timestamp},
                {"sha256", sha256}, {"bytes", bytes}, {"file", file}};
    }

    static ManifestRecord from_json(const nlohmann::json& j) {
        return {j.at("source").get<std::string>(), j.at("url").get<std::string>(),
                j.at("timestamp").get<std::string>(), j.at("sha256").get<std::string>(),
                j.at("bytes").get<std::uint64_t>(), j.at("file").get<std::string>()};
    }
};

/// Fetches a URL and returns the body; throws Error(network) on failure.
/// The HTTPS implementation lives in sources_https.hpp.
using Fetcher = std::function<std::string(const std::string& url)>;

struct FetchResult {
    std::vector<ManifestRecord> records;
    std::vector<std::filesystem::path> files;
    int network_requests = 0;
    std::vector<std::string> warnings;
};

inline std::filesystem::path manifest_path(const std::filesystem::path& cache_dir) {
    return cache_dir / "manifest.jsonl";
}

inline std::map<std::string, ManifestRecord> read_manifest(const std::filesystem::path& cache_dir) {
    std::map<std::string, ManifestRecord> out;
    std::ifstream in(manifest_path(cache_dir));
    std::string line;
    while (std::getline(in, line)) {
        if (csv::trim(line).empty()) {
            continue;
        }
        try {
            auto rec = ManifestRecord::from_json(nlohmann::json::parse(line));
            out[rec.source] = std::move(rec);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::integrity, "manifest: malformed record: " + std::string(e.what()));
        }
    }
    return out;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::data, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Downloads the named sources into `cache_dir` and records url, retrieval
/// time, sha256 and size per file in manifest.jsonl. A cached file whose
/// hash matches its manifest record is reused without touching the network;
/// a mismatch is an integrity error. With `refresh`, cached sources are
/// re-downloaded and a changed upstream hash is reported, not replaced.
inline FetchResult fetch_public_sources(const std::filesystem::path& cache_dir, const std::vector<std::string>& names,
                                        const Fetcher& fetch, bool refresh = false) {
    std::vector<const SourceInfo*> wanted;
    for (const auto& name : names) {
        const auto& all = known_sources();
        const auto it = std::find_if(all.begin(), all.end(), [&](const SourceInfo& s) { return s.name == name; });
        if (it == all.end()) {
            std::string valid;
            for (const auto& s : all) {
                valid += (valid.empty() ? "" : ",") + s.name;
            }
            fail(ErrorKind::config, "unknown source '" + name + "'; valid sources: " + valid);
        }
        wanted.push_back(&*it);
    }
    std::filesystem::create_directories(cache_dir);
    auto manifest = read_manifest(cache_dir);
    bool dirty = false;
    FetchResult out;

    for (const SourceInfo* src : wanted) {
        const auto path = cache_dir / src->file;
        const auto rec_it = manifest.find(src->name);
        bool cache_valid = false;
        if (rec_it != manifest.end() && std::filesystem::exists(path)) {
            const std::string bytes = read_file_bytes(path);
            if (sha256_hex(bytes) != rec_it->second.sha256) {
                fail(ErrorKind::integrity, "cached file " + path.string() + " does not match its manifest hash");
            }
            cache_valid = true;
        }
        if (cache_valid && !refresh) {
            out.records.push_back(rec_it->second);
            out.files.push_back(path);
            continue;
        }
        std::string body;
        try {
            ++out.network_requests;
            body = fetch(src->url);
        } catch (const Error& e) {
            if (cache_valid) {
                out.warnings.push_back("network failure for " + src->name + ", using cache: " + e.what());
                out.records.push_back(rec_it->second);
                out.files.push_back(path);
                continue;
            }
            throw;
        }
        const std::string hash = sha256_hex(body);
        if (cache_valid) {
            if (hash != rec_it->second.sha256) {
                fail(ErrorKind::integrity, "re-fetched " + src->name + " differs from the cached copy (sha256 " +
                                               hash + " vs " + rec_it->second.sha256 + ")");
            }
            out.records.push_back(rec_it->second);
            out.files.push_back(path);
            continue;
        }
        {
            std::ofstream f(path, std::ios::binary);
            f.write(body.data(), static_cast<std::streamsize>(body.size()));
            if (!f) {
                fail(ErrorKind::data, "cannot write " + path.string());
            }
        }
        ManifestRecord rec{src->name, src->url, utc_timestamp(), hash, body.size(), src->file};
        manifest[src->name] = rec;
        out.records.push_back(std::move(rec));
        out.files.push_back(path);
        dirty = true;
    }
    if (dirty) {
        std::ofstream f(manifest_path(cache_dir), std::ios::binary);
        for (const auto& [name, rec] : manifest) {
            f << rec.to_json().dump() << '\n';
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Weekly panel assembly
// ---------------------------------------------------------------------------

struct PopulationRow {
    std::string unit;
    std::string name; // name used by the upstream sources
    double population = 0.0;
};

/// Columns `unit,population` or `unit,name,population`.
inline std::vector<PopulationRow> read_population_csv(std::istream& in) {
    const auto t = csv::read_table(in, "population");
    const long cu = t.column("unit");
    const long cn = t.column("name");
    const long cp = t.column("population");
    if (cu < 0 || cp < 0) {
        fail(ErrorKind::data, "population: need columns unit and population");
    }
    std::vector<PopulationRow> out;
    for (const auto& row : t.rows) {
        PopulationRow r;
        r.unit = std::string(csv::trim(row.at(static_cast<std::size_t>(cu))));
        r.name = cn >= 0 ? std::string(csv::trim(row.at(static_cast<std::size_t>(cn)))) : r.unit;
        if (!csv::parse_double(row.at(static_cast<std::size_t>(cp)), r.population) || !(r.population > 0.0)) {
            fail(ErrorKind::data, "population: bad population for unit " + r.unit);
        }
        out.push_back(std::move(r));
    }
    return out;
}

/// User-supplied index columns (awareness, sentiment, mobility...). Either
/// weekly rows keyed `unit,week` or daily rows keyed `unit,date` that are
/// averaged into ISO weeks.
struct IndexTable {
    std::vector<std::string> columns;
    std::map<std::string, std::map<int, std::vector<double>>> weekly; // unit -> week -> values
};

inline IndexTable read_indices_csv(std::istream& in, int year = 2020) {
    const auto t = csv::read_table(in, "indices");
    if (t.header.size() < 3 || t.header[0] != "unit" || (t.header[1] != "week" && t.header[1] != "date")) {
        fail(ErrorKind::data, "indices: header must start with unit,week or unit,date");
    }
    const bool daily = t.header[1] == "date";
    IndexTable out;
    out.columns.assign(t.header.begin() + 2, t.header.end());
    const std::size_t d = out.columns.size();
    std::map<std::string, std::map<int, std::pair<std::vector<double>, int>>> acc;
    for (const auto& row : t.rows) {
        if (row.size() != d + 2) {
            fail(ErrorKind::data, "indices: wrong field count");
        }
        const std::string unit(csv::trim(row[0]));
        int week = 0;
        if (daily) {
            const auto date = parse_date(row[1]);
            if (!date) {
                fail(ErrorKind::data, "indices: bad date '" + row[1] + "'");
            }
            const IsoWeek w = iso_week(*date);
            if (w.year != year) {
                continue;
            }
            week = w.week;
        } else {
            long long w = 0;
            if (!csv::parse_int(row[1], w)) {
                fail(ErrorKind::data, "indices: bad week '" + row[1] + "'");
            }
            week = static_cast<int>(w);
        }
        auto& slot = acc[unit][week];
        if (slot.first.empty()) {
            slot.first.assign(d, 0.0);
        } else if (!daily) {
            fail(ErrorKind::data, "indices: duplicate row for unit " + unit + " week " + std::to_string(week));
        }
        for (std::size_t c = 0; c < d; ++c) {
            double v = 0.0;
            if (!csv::parse_double(row[c + 2], v)) {
                fail(ErrorKind::data, "indices: missing cell " + out.columns[c] + " for unit " + unit);
            }
            slot.first[c] += v;
        }
        ++slot.second;
    }
    for (auto& [unit, weeks] : acc) {
        for (auto& [week, slot] : weeks) {
            for (double& v : slot.first) {
                v /= slot.second;
            }
            out.weekly[unit][week] = std::move(slot.first);
        }
    }
    return out;
}

struct RawSources {
    std::string jhu_csv;    // cumulative confirmed cases, one column per date
    std::string oxcgrt_csv; // daily policy records; empty to omit the si column
};

struct WeeklyPanelResult {
    PanelDataset panel;
    std::vector<std::string> warnings;
};

namespace detail {

/// unit name -> ISO week -> last cumulative count seen in that week.
inline std::map<std::string, std::map<IsoWeek, double>> jhu_weekly_cumulative(const std::string& text) {
    std::istringstream in(text);
    const auto t = csv::read_table(in, "jhu");
    const long state_col = t.column("Province_State");
    if (state_col < 0) {
        fail(ErrorKind::data, "jhu: missing Province_State column");
    }
    std::vector<std::pair<std::size_t, std::chrono::year_month_day>> date_cols;
    for (std::size_t c = 0; c < t.header.size(); ++c) {
        if (t.header[c].find('/') != std::string::npos) {
            if (auto d = parse_date(t.header[c])) {
                date_cols.emplace_back(c, *d);
            }
        }
    }
    std::sort(date_cols.begin(), date_cols.end(), [](const auto& a, const auto& b) {
        return std::chrono::sys_days{a.second} < std::chrono::sys_days{b.second};
    });
    std::map<std::string, std::vector<double>> daily;
    for (const auto& row : t.rows) {
        const std::string state(csv::trim(row.at(static_cast<std::size_t>(state_col))));
        auto& acc = daily[state];
        acc.resize(date_cols.size(), 0.0);
        for (std::size_t i = 0; i < date_cols.size(); ++i) {
            double v = 0.0;
            if (date_cols[i].first < row.size() && csv::parse_double(row[date_cols[i].first], v)) {
                acc[i] += v;
            }
        }
    }
    std::map<std::string, std::map<IsoWeek, double>> out;
    for (const auto& [state, values] : daily) {
        auto& weeks = out[state];
        for (std::size_t i = 0; i < date_cols.size(); ++i) {
            weeks[iso_week(date_cols[i].second)] = values[i]; // dates ascending: last one wins
        }
    }
    return out;
}

/// unit name -> ISO week -> mean daily stringency.
inline std::map<std::string, std::map<IsoWeek, double>> oxcgrt_weekly_mean(const std::string& text) {
    std::istringstream in(text);
    const auto t = csv::read_table(in, "oxcgrt");
    const long region = t.column("RegionName");
    const long date = t.column("Date");
    const long juris = t.column("Jurisdiction");
    long value = -1;
    for (const char* name : {"StringencyIndex", "StringencyIndex_Average", "StringencyIndexForDisplay",
                             "StringencyIndex_Average_ForDisplay"}) {
        if ((value = t.column(name)) >= 0) {
            break;
        }
    }
    if (region < 0 || date < 0 || value < 0) {
        fail(ErrorKind::data, "oxcgrt: need RegionName, Date and a StringencyIndex column");
    }
    std::map<std::string, std::map<IsoWeek, std::pair<double, int>>> acc;
    for (const auto& row : t.rows) {
        if (juris >= 0 && row.at(static_cast<std::size_t>(juris)) != "STATE_TOTAL" &&
            row.at(static_cast<std::size_t>(juris)) != "STATE_WIDE") {
            continue;
        }
        const std::string name(csv::trim(row.at(static_cast<std::size_t>(region))));
        if (name.empty()) {
            continue;
        }
        const auto d = parse_date(row.at(static_cast<std::size_t>(date)));
        double v = 0.0;
        if (!d || !csv::parse_double(row.at(static_cast<std::size_t>(value)), v)) {
            continue;
        }
        auto& slot = acc[name][iso_week(*d)];
        slot.first += v;
        ++slot.second;
    }
    std::map<std::string, std::map<IsoWeek, double>> out;
    for (const auto& [name, weeks] : acc) {
        for (const auto& [w, slot] : weeks) {
            out[name][w] = slot.first / slot.second;
        }
    }
    return out;
}

} // namespace detail

/// Assembles the weekly panel for `year`: cumulative cases are differenced to
/// weekly counts and scaled to a rate per 100,000; daily stringency is
/// averaged per ISO week; index columns are joined from `indices`. The week
/// range is the span every source covers. Negative weekly differences
/// (upstream corrections) are clamped to zero and reported in `warnings`.
inline WeeklyPanelResult build_weekly_panel(const RawSources& raw, const std::vector<PopulationRow>& population,
                                            const IndexTable* indices = nullptr, int year = 2020) {
    if (population.empty()) {
        fail(ErrorKind::data, "population table is empty");
    }
    const auto cases = detail::jhu_weekly_cumulative(raw.jhu_csv);
    const bool with_si = !raw.oxcgrt_csv.empty();
    const auto si = with_si ? detail::oxcgrt_weekly_mean(raw.oxcgrt_csv)
                            : std::map<std::string, std::map<IsoWeek, double>>{};

    std::set<std::string> pop_units;
    for (const auto& p : population) {
        if (!pop_units.insert(p.unit).second) {
            fail(ErrorKind::data, "population: duplicate unit " + p.unit);
        }
    }
    if (indices != nullptr) {
        for (const auto& [unit, weeks] : indices->weekly) {
            if (!pop_units.count(unit)) {
                fail(ErrorKind::data, "join failure: unit " + unit + " is in the index file but not the population table");
            }
        }
    }

    int lo = 1;
    int hi = 53;
    auto narrow = [&](const std::set<int>& weeks) {
        if (weeks.empty()) {
            hi = lo - 1;
            return;
        }
        lo = std::max(lo, *weeks.begin());
        hi = std::min(hi, *weeks.rbegin());
    };

    std::vector<PopulationRow> units = population;
    std::sort(units.begin(), units.end(), [](const auto& a, const auto& b) { return a.unit < b.unit; });
    for (const auto& u : units) {
        const auto c = cases.find(u.name);
        if (c == cases.end()) {
            fail(ErrorKind::data, "join failure: unit " + u.unit + " (" + u.name + ") missing from the case source");
        }
        std::set<int> weeks;
        for (const auto& [w, v] : c->second) {
            if (w.year == year) weeks.insert(w.week);
        }
        narrow(weeks);
        if (with_si) {
            const auto s = si.find(u.name);
            if (s == si.end()) {
                fail(ErrorKind::data, "join failure: unit " + u.unit + " (" + u.name + ") missing from the policy source");
            }
            std::set<int> sw;
            for (const auto& [w, v] : s->second) {
                if (w.year == year) sw.insert(w.week);
            }
            narrow(sw);
        }
        if (indices != nullptr) {
            const auto ix = indices->weekly.find(u.unit);
            if (ix == indices->weekly.end()) {
                fail(ErrorKind::data, "join failure: unit " + u.unit + " missing from the index file");
            }
            std::set<int> iw;
            for (const auto& [w, v] : ix->second) iw.insert(w);
            narrow(iw);
        }
    }
    if (hi < lo) {
        fail(ErrorKind::data, "sources share no common week in " + std::to_string(year));
    }

    WeeklyPanelResult out;
    PanelDataset& p = out.panel;
    p.first_week = lo;
    p.outcome_name = "case_rate";
    if (with_si) {
        p.predictor_names.push_back("si");
    }
    if (indices != nullptr) {
        p.predictor_names.insert(p.predictor_names.end(), indices->columns.begin(), indices->columns.end());
    }
    const Index steps = hi - lo + 1;
    const auto d = static_cast<Index>(p.predictor_names.size());
    p.outcome.resize(steps, static_cast<Index>(units.size()));

    for (std::size_t m = 0; m < units.size(); ++m) {
        const auto& u = units[m];
        p.units.push_back(u.unit);
        const auto& cum = cases.at(u.name);
        auto cumulative_through = [&](IsoWeek w) {
            // last cumulative value at or before week w; zero before the data starts
            auto it = cum.upper_bound(w);
            return it == cum.begin() ? 0.0 : std::prev(it)->second;
        };
        MatrixXd x(steps, d);
        for (Index t = 0; t < steps; ++t) {
            const int week = lo + static_cast<int>(t);
            double diff = cumulative_through({year, week}) - cumulative_through({year, week - 1});
            if (diff < 0.0) {
                out.warnings.push_back("negative weekly difference clamped to 0 for unit " + u.unit + " week " +
                                       std::to_string(week) + " (" + csv::format_short(diff) + ")");
                diff = 0.0;
            }
            p.outcome(t, static_cast<Index>(m)) = diff / u.population * 1e5;
            Index col = 0;
            if (with_si) {
                const auto& sw = si.at(u.name);
                const auto it = sw.find({year, week});
                if (it == sw.end()) {
                    fail(ErrorKind::data, "missing stringency for unit " + u.unit + " week " + std::to_string(week));
                }
                x(t, col++) = it->second;
            }
            if (indices != nullptr) {
                const auto& iw = indices->weekly.at(u.unit);
                const auto it = iw.find(week);
                if (it == iw.end()) {
                    fail(ErrorKind::data, "missing index values for unit " + u.unit + " week " + std::to_string(week));
                }
                for (double v : it->second) {
                    x(t, col++) = v;
                }
            }
        }
        p.predictors.push_back(std::move(x));
    }
    p.validate();
    return out;
}

} // namespace mbsts
