#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pscox/errors.hpp"

namespace pscox {

// One observed sample: covariates X_i, treatment A_i, follow-up time T_i,
// event indicator delta_i (1 = event, 0 = censored).
struct Subject {
    std::vector<double> covariates;
    int treated = 0;
    double time = 0.0;
    int event = 0;
};

// Immutable-after-construction sample collection, stored column-wise so the
// fitters can stream over contiguous arrays. Row order is preserved from the
// source (file or generator).
class Cohort {
  public:
    explicit Cohort(std::vector<std::string> covariate_names)
        : names_(std::move(covariate_names)) {}

    static Cohort from_arrays(std::vector<std::string> covariate_names,
                              std::vector<double> times, std::vector<std::uint8_t> events,
                              std::vector<std::uint8_t> treated, std::vector<double> covs_rowmajor) {
        Cohort c(std::move(covariate_names));
        const std::size_t n = times.size();
        const std::size_t p = c.names_.size();
        if (events.size() != n || treated.size() != n || covs_rowmajor.size() != n * p)
            throw DimensionMismatch("cohort arrays disagree on length");
        for (std::size_t i = 0; i < n; ++i) {
            if (!(times[i] > 0.0) || !std::isfinite(times[i])) throw NonPositiveTime(i + 1);
            if (events[i] > 1) throw NonBinaryIndicator(i + 1, "event");
            if (treated[i] > 1) throw NonBinaryIndicator(i + 1, "treatment");
        }
        c.times_ = std::move(times);
        c.events_ = std::move(events);
        c.treated_ = std::move(treated);
        c.covs_ = std::move(covs_rowmajor);
        return c;
    }

    void add(const Subject& s) {
        if (s.covariates.size() != names_.size())
            throw DimensionMismatch("subject covariate count != covariate_names length");
        const std::size_t row = size() + 1;
        if (!(s.time > 0.0) || !std::isfinite(s.time)) throw NonPositiveTime(row);
        if (s.event != 0 && s.event != 1) throw NonBinaryIndicator(row, "event");
        if (s.treated != 0 && s.treated != 1) throw NonBinaryIndicator(row, "treatment");
        times_.push_back(s.time);
        events_.push_back(static_cast<std::uint8_t>(s.event));
        treated_.push_back(static_cast<std::uint8_t>(s.treated));
        covs_.insert(covs_.end(), s.covariates.begin(), s.covariates.end());
    }

    std::size_t size() const { return times_.size(); }
    std::size_t n_covariates() const { return names_.size(); }
    const std::vector<std::string>& covariate_names() const { return names_; }

    double time(std::size_t i) const { return times_[i]; }
    int event(std::size_t i) const { return events_[i]; }
    int treated(std::size_t i) const { return treated_[i]; }
    double covariate(std::size_t i, std::size_t j) const { return covs_[i * names_.size() + j]; }

    Subject subject(std::size_t i) const {
        const std::size_t p = names_.size();
        return Subject{{covs_.begin() + i * p, covs_.begin() + (i + 1) * p},
                       treated_[i], times_[i], events_[i]};
    }

    const std::vector<double>& times() const { return times_; }
    const std::vector<std::uint8_t>& events() const { return events_; }
    const std::vector<std::uint8_t>& treated_flags() const { return treated_; }
    const std::vector<double>& covariates_rowmajor() const { return covs_; }

    std::size_t covariate_index(const std::string& name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) throw UnknownCovariate(name);
        return static_cast<std::size_t>(it - names_.begin());
    }

    Cohort select_rows(const std::vector<std::size_t>& rows) const {
        Cohort out(names_);
        const std::size_t p = names_.size();
        out.times_.reserve(rows.size());
        out.events_.reserve(rows.size());
        out.treated_.reserve(rows.size());
        out.covs_.reserve(rows.size() * p);
        for (std::size_t i : rows) {
            out.times_.push_back(times_[i]);
            out.events_.push_back(events_[i]);
            out.treated_.push_back(treated_[i]);
            out.covs_.insert(out.covs_.end(), covs_.begin() + i * p, covs_.begin() + (i + 1) * p);
        }
        return out;
    }

  private:
    std::vector<std::string> names_;
    std::vector<double> times_;
    std::vector<std::uint8_t> events_;
    std::vector<std::uint8_t> treated_;
    std::vector<double> covs_;  // row-major n x p
};

// Subgroup predicate on a single covariate, e.g. {age, ge, 70}.
struct SubgroupSpec {
    enum class Comparator { eq, ge, lt, le, gt };

    std::string covariate_name;
    Comparator comparator = Comparator::ge;
    double threshold = 0.0;

    bool matches(double x) const {
        switch (comparator) {
            case Comparator::eq: return x == threshold;
            case Comparator::ge: return x >= threshold;
            case Comparator::lt: return x < threshold;
            case Comparator::le: return x <= threshold;
            case Comparator::gt: return x > threshold;
        }
        return false;
    }

    std::string label() const {
        const char* op = "";
        switch (comparator) {
            case Comparator::eq: op = "=="; break;
            case Comparator::ge: op = ">="; break;
            case Comparator::lt: op = "<"; break;
            case Comparator::le: op = "<="; break;
            case Comparator::gt: op = ">"; break;
        }
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.10g", threshold);
        return covariate_name + op + buf;
    }
};

/// Parse "name>=value" (also <=, ==, =, >, <) into a SubgroupSpec.
inline SubgroupSpec parse_subgroup(std::string_view text) {
    struct OpToken { std::string_view tok; SubgroupSpec::Comparator cmp; };
    // two-character operators first so "a>=1" is not read as "a>" on "=1"
    static constexpr OpToken ops[] = {
        {">=", SubgroupSpec::Comparator::ge}, {"<=", SubgroupSpec::Comparator::le},
        {"==", SubgroupSpec::Comparator::eq}, {">", SubgroupSpec::Comparator::gt},
        {"<", SubgroupSpec::Comparator::lt},  {"=", SubgroupSpec::Comparator::eq},
    };
    for (const auto& op : ops) {
        const auto pos = text.find(op.tok);
        if (pos == std::string_view::npos || pos == 0) continue;
        SubgroupSpec spec;
        std::string name(text.substr(0, pos));
        while (!name.empty() && (name.front() == ' ' || name.front() == '\t')) name.erase(0, 1);
        while (!name.empty() && (name.back() == ' ' || name.back() == '\t')) name.pop_back();
        // a name holding an operator character means this op split too late
        if (name.empty() || name.find_first_of("<>= \t") != std::string::npos) continue;
        spec.covariate_name = std::move(name);
        spec.comparator = op.cmp;
        const std::string value(text.substr(pos + op.tok.size()));
        const char* b = value.data();
        const char* e = b + value.size();
        while (b < e && (*b == ' ' || *b == '\t')) ++b;
        while (e > b && (e[-1] == ' ' || e[-1] == '\t')) --e;
        auto [ptr, ec] = std::from_chars(b, e, spec.threshold);
        if (b == e || ec != std::errc() || ptr != e)
            throw ConfigInvalid("cannot parse subgroup threshold in '" + std::string(text) + "'");
        return spec;
    }
    throw ConfigInvalid("subgroup must look like 'name>=value', got '" + std::string(text) + "'");
}

inline std::vector<std::size_t> subgroup_indices(const Cohort& cohort, const SubgroupSpec& spec) {
    const std::size_t j = cohort.covariate_index(spec.covariate_name);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < cohort.size(); ++i)
        if (spec.matches(cohort.covariate(i, j))) rows.push_back(i);
    if (rows.empty()) throw EmptySubgroup(spec.label());
    return rows;
}

/// Subset satisfying the predicate; row order preserved, source unchanged.
inline Cohort filter_subgroup(const Cohort& cohort, const SubgroupSpec& spec) {
    return cohort.select_rows(subgroup_indices(cohort, spec));
}

// Pre-fit health report; informational, never throws.
struct CohortDiagnostics {
    std::size_t n = 0;
    std::size_t n_treated = 0;
    std::size_t n_control = 0;
    std::size_t events_treated = 0;
    std::size_t events_control = 0;
    double censor_fraction = 0.0;
    bool both_arms_present = false;
    bool zero_events = false;          // no events at all
    bool monotone_likelihood = false;  // some arm has zero events
};

inline CohortDiagnostics validate_for_fitting(const Cohort& cohort) {
    CohortDiagnostics d;
    d.n = cohort.size();
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const bool a = cohort.treated(i) != 0;
        (a ? d.n_treated : d.n_control) += 1;
        if (cohort.event(i)) (a ? d.events_treated : d.events_control) += 1;
    }
    const std::size_t events = d.events_treated + d.events_control;
    d.censor_fraction = d.n == 0 ? 0.0 : double(d.n - events) / double(d.n);
    d.both_arms_present = d.n_treated > 0 && d.n_control > 0;
    d.zero_events = events == 0;
    d.monotone_likelihood = d.events_treated == 0 || d.events_control == 0;
    return d;
}

// --- CSV ingestion ---

struct ColumnMap {
    std::string time = "time";
    std::string event = "event";
    std::string treatment = "treatment";
    std::vector<std::string> covariates;  // empty: every remaining column, file order
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

inline double parse_cell(std::string_view cell, std::size_t row, const std::string& col) {
    const char* b = cell.data();
    const char* e = b + cell.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    while (e > b && (e[-1] == ' ' || e[-1] == '\t')) --e;
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(b, e, out);
    if (ec != std::errc() || ptr != e || b == e) throw NonNumericCell(row, col);
    return out;
}

}  // namespace detail

/// Read a comma-delimited, headered CSV into a Cohort. Column mapping is by
/// name; rows keep file order; missing values are a hard error. Row numbers in
/// errors are 1-based data rows (header excluded).
inline Cohort load_csv(const std::filesystem::path& path, const ColumnMap& map = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    std::string text = std::move(buffer).str();
    if (text.starts_with("\xEF\xBB\xBF")) text.erase(0, 3);  // UTF-8 BOM

    std::vector<std::string_view> lines;
    {
        std::string_view rest = text;
        while (!rest.empty()) {
            auto nl = rest.find('\n');
            std::string_view line = rest.substr(0, nl);
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            lines.push_back(line);
            if (nl == std::string_view::npos) break;
            rest = rest.substr(nl + 1);
        }
        while (!lines.empty() && lines.back().empty()) lines.pop_back();
    }
    if (lines.empty()) throw DataError("empty CSV: " + path.string());

    const auto header = detail::split_csv_line(lines[0]);
    auto column = [&](const std::string& name) -> std::size_t {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return j;
        throw MissingColumn(name);
    };
    const std::size_t time_col = column(map.time);
    const std::size_t event_col = column(map.event);
    const std::size_t treat_col = column(map.treatment);

    std::vector<std::string> cov_names;
    std::vector<std::size_t> cov_cols;
    if (map.covariates.empty()) {
        for (std::size_t j = 0; j < header.size(); ++j) {
            if (j == time_col || j == event_col || j == treat_col) continue;
            cov_names.emplace_back(header[j]);
            cov_cols.push_back(j);
        }
    } else {
        for (const auto& name : map.covariates) {
            cov_cols.push_back(column(name));
            cov_names.push_back(name);
        }
    }

    Cohort cohort(cov_names);
    const std::size_t n_rows = lines.size() - 1;
    std::vector<double> times, covs;
    std::vector<std::uint8_t> events, treated;
    times.reserve(n_rows);
    events.reserve(n_rows);
    treated.reserve(n_rows);
    covs.reserve(n_rows * cov_cols.size());

    auto binary_cell = [](double v, std::size_t row, const std::string& col) -> std::uint8_t {
        if (v == 0.0) return 0;
        if (v == 1.0) return 1;
        throw NonBinaryIndicator(row, col);
    };
    for (std::size_t r = 1; r < lines.size(); ++r) {
        if (lines[r].empty()) throw DataError("blank line at row " + std::to_string(r));
        const auto fields = detail::split_csv_line(lines[r]);
        if (fields.size() != header.size())
            throw DataError("row " + std::to_string(r) + " has " + std::to_string(fields.size()) +
                            " fields, expected " + std::to_string(header.size()));
        const double t = detail::parse_cell(fields[time_col], r, map.time);
        if (!(t > 0.0) || !std::isfinite(t)) throw NonPositiveTime(r);
        times.push_back(t);
        events.push_back(binary_cell(detail::parse_cell(fields[event_col], r, map.event), r, map.event));
        treated.push_back(
            binary_cell(detail::parse_cell(fields[treat_col], r, map.treatment), r, map.treatment));
        for (std::size_t k = 0; k < cov_cols.size(); ++k)
            covs.push_back(detail::parse_cell(fields[cov_cols[k]], r, cov_names[k]));
    }
    return Cohort::from_arrays(std::move(cov_names), std::move(times), std::move(events),
                               std::move(treated), std::move(covs));
}

/// Write a Cohort back out with round-trip precision ("%.17g").
inline void write_csv(const Cohort& cohort, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path.string());
    out << "time,event,treatment";
    for (const auto& name : cohort.covariate_names()) out << ',' << name;
    out << '\n';
    char buf[40];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        put(cohort.time(i));
        out << ',' << cohort.event(i) << ',' << cohort.treated(i);
        for (std::size_t j = 0; j < cohort.n_covariates(); ++j) {
            out << ',';
            put(cohort.covariate(i, j));
        }
        out << '\n';
    }
}

}  // namespace pscox
