#pragma once

// Structural-material screening over an ingested property table. Records are
// filtered by required flags, a tensile-strength / elongation window and a
// water-absorption cutoff, then ranked.

#include "fluidlogic/format.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace fluidlogic::materials {

struct Plasticizer {
    std::string name;
    double weight_pct = 0.0;
    friend bool operator==(const Plasticizer&, const Plasticizer&) = default;
};

struct MaterialRecord {
    std::string name;
    double tensile_strength = 0.0;     // MPa
    double elongation_at_break = 0.0;  // %
    double water_absorption = 0.0;     // %, 24 h immersion as reported
    bool hydrophobic = false;
    bool moldable = false;
    bool edible = false;
    std::optional<Plasticizer> plasticizer;
    std::string source;
    std::size_t row = 0;   // 1-based data row in the ingested file
    bool variant = false;  // another row shares name and plasticizer

    std::string display_name() const {
        if (!plasticizer) return name;
        return name + " + " + plasticizer->name + " " + format_number(plasticizer->weight_pct, 6) + "%";
    }
};

inline constexpr std::array<std::string_view, 10> kCsvColumns = {
    "name",  "tensile_strength_MPa", "elongation_at_break_pct", "water_absorption_pct", "hydrophobic",
    "moldable", "edible", "plasticizer_name", "plasticizer_wt_pct", "source"};

class SchemaMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RowDiagnostic {
    std::size_t row = 0;
    std::string message;
    std::string str() const { return "row " + std::to_string(row) + ": " + message; }
};

struct IngestResult {
    std::vector<MaterialRecord> records;
    std::vector<RowDiagnostic> diagnostics;
};

namespace detail {

/// Splits one CSV line. Double quotes wrap fields containing commas; "" is a
/// literal quote. Returns nullopt on an unterminated quote.
inline std::optional<std::vector<std::string>> split_csv(std::string_view line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                out.back() += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.emplace_back();
        } else {
            out.back() += ch;
        }
    }
    if (quoted) return std::nullopt;
    return out;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string lower(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

inline std::optional<double> number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::size_t used = 0;
    try {
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

inline std::optional<bool> boolean(const std::string& s) {
    const auto l = lower(s);
    if (l == "true" || l == "yes" || l == "1") return true;
    if (l == "false" || l == "no" || l == "0") return false;
    return std::nullopt;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
    }
    return q + "\"";
}

}  // namespace detail

/// Reads a property table. A header that does not match the schema throws
/// SchemaMismatch; bad rows are skipped with a row-numbered diagnostic.
inline IngestResult ingest(std::istream& in) {
    IngestResult result;
    std::string line;
    if (!std::getline(in, line)) throw SchemaMismatch("empty materials table: missing header");
    const auto header = detail::split_csv(line);
    bool header_ok = header && header->size() == kCsvColumns.size();
    for (std::size_t i = 0; header_ok && i < kCsvColumns.size(); ++i) {
        header_ok = detail::trim((*header)[i]) == kCsvColumns[i];
    }
    if (!header_ok) {
        std::string expected;
        for (auto c : kCsvColumns) expected += (expected.empty() ? "" : ",") + std::string(c);
        throw SchemaMismatch("materials header must be: " + expected);
    }

    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        auto bad = [&](std::string msg) { result.diagnostics.push_back({row, std::move(msg)}); };
        const auto fields = detail::split_csv(line);
        if (!fields) {
            bad("unterminated quote");
            continue;
        }
        if (fields->size() != kCsvColumns.size()) {
            bad("expected " + std::to_string(kCsvColumns.size()) + " fields, found " + std::to_string(fields->size()));
            continue;
        }
        std::vector<std::string> f;
        for (const auto& s : *fields) f.push_back(detail::trim(s));

        MaterialRecord r;
        r.row = row;
        r.name = f[0];
        r.source = f[9];
        std::string problem;
        auto num = [&](std::size_t col, double& dst) {
            if (!problem.empty()) return;
            if (auto v = detail::number(f[col])) {
                dst = *v;
            } else {
                problem = std::string(kCsvColumns[col]) + ": '" + f[col] + "' is not a number";
            }
        };
        auto flag = [&](std::size_t col, bool& dst) {
            if (!problem.empty()) return;
            if (auto v = detail::boolean(f[col])) {
                dst = *v;
            } else {
                problem = std::string(kCsvColumns[col]) + ": '" + f[col] + "' is not true/false";
            }
        };
        if (r.name.empty()) problem = "name is required";
        num(1, r.tensile_strength);
        num(2, r.elongation_at_break);
        num(3, r.water_absorption);
        flag(4, r.hydrophobic);
        flag(5, r.moldable);
        flag(6, r.edible);
        if (problem.empty() && !f[7].empty()) {
            Plasticizer p{f[7], 0.0};
            num(8, p.weight_pct);
            if (problem.empty() && p.weight_pct < 0.0) problem = "plasticizer_wt_pct must be >= 0";
            r.plasticizer = p;
        } else if (problem.empty() && !f[8].empty()) {
            problem = "plasticizer_wt_pct given without plasticizer_name";
        }
        if (problem.empty() && !(r.tensile_strength > 0.0)) problem = "tensile_strength_MPa must be > 0";
        if (problem.empty() && !(r.elongation_at_break > 0.0)) problem = "elongation_at_break_pct must be > 0";
        if (problem.empty() && !(r.water_absorption >= 0.0)) problem = "water_absorption_pct must be >= 0";
        if (!problem.empty()) {
            bad(problem);
            continue;
        }
        result.records.push_back(std::move(r));
    }

    std::map<std::tuple<std::string, std::string, double>, int> seen;
    auto key = [](const MaterialRecord& r) {
        return r.plasticizer ? std::make_tuple(detail::lower(r.name), detail::lower(r.plasticizer->name),
                                               r.plasticizer->weight_pct)
                             : std::make_tuple(detail::lower(r.name), std::string(), 0.0);
    };
    for (const auto& r : result.records) ++seen[key(r)];
    for (auto& r : result.records) r.variant = seen[key(r)] > 1;
    return result;
}

inline IngestResult ingest(std::string_view text) {
    std::istringstream in{std::string(text)};
    return ingest(in);
}

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double x) const { return x >= lo && x <= hi; }
    double center() const { return 0.5 * (lo + hi); }
    double half_width() const { return 0.5 * (hi - lo); }
};

struct ScreenCriteria {
    Range tensile_strength;     // MPa
    Range elongation_at_break;  // %
    double max_water_absorption = 50.0;
    bool require_edible = true;
    bool require_hydrophobic = true;
    bool require_moldable = true;
};

class InvalidCriteria : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void check(const ScreenCriteria& c) {
    auto ok = [](const Range& r) { return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo < r.hi; };
    if (!ok(c.tensile_strength)) throw InvalidCriteria("tensile-strength window must be a non-empty range");
    if (!ok(c.elongation_at_break)) throw InvalidCriteria("elongation window must be a non-empty range");
    if (!(c.max_water_absorption > 0.0)) throw InvalidCriteria("max water absorption must be > 0");
}

/// Window centred on the PDMS row, +/- `spread` of each value.
inline std::optional<std::pair<Range, Range>> pdms_window(const std::vector<MaterialRecord>& records,
                                                          double spread = 0.5) {
    for (const auto& r : records) {
        if (detail::lower(r.name) == "pdms") {
            return std::make_pair(Range{r.tensile_strength * (1 - spread), r.tensile_strength * (1 + spread)},
                                  Range{r.elongation_at_break * (1 - spread), r.elongation_at_break * (1 + spread)});
        }
    }
    return std::nullopt;
}

inline ScreenCriteria default_criteria(const std::vector<MaterialRecord>& records) {
    const auto w = pdms_window(records);
    if (!w) throw InvalidCriteria("no PDMS row to derive the default window from");
    ScreenCriteria c;
    c.tensile_strength = w->first;
    c.elongation_at_break = w->second;
    return c;
}

/// Criteria document:
///   {"reference_window": {"tensile_strength_MPa": [lo, hi], "elongation_at_break_pct": [lo, hi]},
///    "max_water_absorption_pct": 50, "require": ["edible", "hydrophobic", "moldable"]}
/// A missing reference_window falls back to the PDMS-derived default.
inline ScreenCriteria criteria_from_json(const nlohmann::json& j, const std::vector<MaterialRecord>& records) {
    ScreenCriteria c;
    try {
        if (j.contains("reference_window")) {
            const auto& w = j.at("reference_window");
            const auto ts = w.at("tensile_strength_MPa").get<std::array<double, 2>>();
            const auto eb = w.at("elongation_at_break_pct").get<std::array<double, 2>>();
            c.tensile_strength = {ts[0], ts[1]};
            c.elongation_at_break = {eb[0], eb[1]};
        } else {
            c = default_criteria(records);
        }
        if (j.contains("max_water_absorption_pct")) c.max_water_absorption = j.at("max_water_absorption_pct").get<double>();
        if (j.contains("require")) {
            c.require_edible = c.require_hydrophobic = c.require_moldable = false;
            for (const auto& flag : j.at("require")) {
                const auto f = flag.get<std::string>();
                if (f == "edible") c.require_edible = true;
                else if (f == "hydrophobic") c.require_hydrophobic = true;
                else if (f == "moldable") c.require_moldable = true;
                else throw InvalidCriteria("unknown required flag '" + f + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidCriteria(std::string("criteria document: ") + e.what());
    }
    check(c);
    return c;
}

enum class Criterion { edible, hydrophobic, moldable, property_window, water_absorption };

inline constexpr std::array<Criterion, 5> kCriteriaOrder = {Criterion::edible, Criterion::hydrophobic,
                                                            Criterion::moldable, Criterion::property_window,
                                                            Criterion::water_absorption};

inline const char* to_string(Criterion c) {
    switch (c) {
        case Criterion::edible: return "edible";
        case Criterion::hydrophobic: return "water resistance (hydrophobic)";
        case Criterion::moldable: return "moldable";
        case Criterion::property_window: return "TS/EB window";
        case Criterion::water_absorption: return "water absorption";
    }
    return "?";
}

struct Decision {
    std::size_t record = 0;                // index into the screened list
    std::array<bool, 5> passed{};          // indexed like kCriteriaOrder
    std::optional<Criterion> first_failed;
    double window_distance = 0.0;          // normalized (TS, EB) distance to the window centre
    std::optional<std::size_t> rank;       // 1-based, survivors only
};

struct ScreenResult {
    std::vector<MaterialRecord> records;
    std::vector<Decision> decisions;        // one per record, input order
    std::vector<std::size_t> shortlist;     // record indices, best first

    bool passes(std::size_t record) const { return !decisions.at(record).first_failed; }
};

inline ScreenResult screen(std::vector<MaterialRecord> records, const ScreenCriteria& criteria) {
    check(criteria);
    ScreenResult out;
    out.records = std::move(records);
    const auto& recs = out.records;
    const auto& ts = criteria.tensile_strength;
    const auto& eb = criteria.elongation_at_break;

    // A family qualifies for the window if any of its rows lies inside it.
    std::map<std::string, bool> family_in_window;
    for (const auto& r : recs) {
        auto& f = family_in_window[detail::lower(r.name)];
        f = f || (ts.contains(r.tensile_strength) && eb.contains(r.elongation_at_break));
    }

    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& r = recs[i];
        Decision d;
        d.record = i;
        d.passed = {!criteria.require_edible || r.edible, !criteria.require_hydrophobic || r.hydrophobic,
                    !criteria.require_moldable || r.moldable, family_in_window[detail::lower(r.name)],
                    r.water_absorption <= criteria.max_water_absorption};
        for (std::size_t k = 0; k < kCriteriaOrder.size(); ++k) {
            if (!d.passed[k]) {
                d.first_failed = kCriteriaOrder[k];
                break;
            }
        }
        d.window_distance = std::hypot((r.tensile_strength - ts.center()) / ts.half_width(),
                                       (r.elongation_at_break - eb.center()) / eb.half_width());
        out.decisions.push_back(d);
        if (!d.first_failed) out.shortlist.push_back(i);
    }

    std::sort(out.shortlist.begin(), out.shortlist.end(), [&](std::size_t a, std::size_t b) {
        const auto& ra = recs[a];
        const auto& rb = recs[b];
        if (ra.water_absorption != rb.water_absorption) return ra.water_absorption < rb.water_absorption;
        const double da = out.decisions[a].window_distance;
        const double db = out.decisions[b].window_distance;
        if (da != db) return da < db;
        if (ra.name != rb.name) return ra.name < rb.name;
        return ra.row < rb.row;
    });
    for (std::size_t k = 0; k < out.shortlist.size(); ++k) out.decisions[out.shortlist[k]].rank = k + 1;
    return out;
}

inline void write_ranked_csv(std::ostream& os, const ScreenResult& res) {
    os << "rank,name,plasticizer_name,plasticizer_wt_pct,tensile_strength_MPa,elongation_at_break_pct,"
          "water_absorption_pct,window_distance,variant,row\n";
    for (std::size_t k = 0; k < res.shortlist.size(); ++k) {
        const auto& r = res.records[res.shortlist[k]];
        const auto& d = res.decisions[res.shortlist[k]];
        os << k + 1 << ',' << detail::csv_field(r.name) << ','
           << (r.plasticizer ? detail::csv_field(r.plasticizer->name) : "") << ','
           << (r.plasticizer ? format_number(r.plasticizer->weight_pct, 9) : "") << ','
           << format_number(r.tensile_strength, 9) << ',' << format_number(r.elongation_at_break, 9) << ','
           << format_number(r.water_absorption, 9) << ',' << format_number(d.window_distance, 9) << ','
           << (r.variant ? "true" : "false") << ',' << r.row << '\n';
    }
}

inline void write_decision_trail(std::ostream& os, const ScreenResult& res, const ScreenCriteria& c) {
    os << "window: TS " << format_number(c.tensile_strength.lo, 6) << ".." << format_number(c.tensile_strength.hi, 6)
       << " MPa, EB " << format_number(c.elongation_at_break.lo, 6) << ".."
       << format_number(c.elongation_at_break.hi, 6) << " %; max water absorption "
       << format_number(c.max_water_absorption, 6) << " %\n";
    for (const auto& d : res.decisions) {
        const auto& r = res.records[d.record];
        os << "row " << r.row << " " << r.display_name() << (r.variant ? " [variant]" : "") << ": ";
        if (d.first_failed) {
            os << "rejected at " << to_string(*d.first_failed) << "\n";
        } else {
            os << "pass, rank " << *d.rank << "\n";
        }
    }
}

}  // namespace fluidlogic::materials
