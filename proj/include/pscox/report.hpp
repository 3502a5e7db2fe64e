#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pscox/analysis.hpp"
#include "pscox/errors.hpp"
#include "pscox/simulation.hpp"
#include "pscox/variance.hpp"

// Rendering of analysis/simulation results to CSV (machine, full precision),
// aligned markdown (human, 3 decimals), and JSON (pipelines). All formatting
// goes through snprintf so output bytes do not depend on locale or stream
// state — `simulate` runs must be byte-identical across thread counts.

namespace pscox {

enum class OutputFormat { csv, md, json };

inline OutputFormat format_from_token(const std::string& tok) {
    if (tok == "csv") return OutputFormat::csv;
    if (tok == "md") return OutputFormat::md;
    if (tok == "json") return OutputFormat::json;
    throw ConfigInvalid("unknown output format '" + tok + "' (expected csv, md, or json)");
}

namespace detail {

inline std::string fmt(const char* spec, double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, x);
    return buf;
}

inline std::string full(double x) { return fmt("%.17g", x); }
inline std::string fixed3(double x) { return fmt("%.3f", x); }
inline std::string fixed4(double x) { return fmt("%.4f", x); }
inline std::string fixed5(double x) { return fmt("%.5f", x); }

inline std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string csv_table(const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    for (const auto& row : rows) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) out += ',';
            out += csv_cell(row[j]);
        }
        out += '\n';
    }
    return out;
}

// header + body as a pipe table, columns padded to the widest cell
inline std::string md_table(const std::vector<std::vector<std::string>>& rows) {
    if (rows.empty()) return "";
    std::vector<std::size_t> width(rows[0].size(), 0);
    for (const auto& row : rows)
        for (std::size_t j = 0; j < row.size(); ++j)
            width[j] = std::max(width[j], row[j].size());
    std::string out;
    auto emit = [&](const std::vector<std::string>& row) {
        out += '|';
        for (std::size_t j = 0; j < width.size(); ++j) {
            const std::string& cell = j < row.size() ? row[j] : std::string();
            out += ' ';
            out += cell;
            out.append(width[j] - cell.size() + 1, ' ');
            out += '|';
        }
        out += '\n';
    };
    emit(rows[0]);
    out += '|';
    for (std::size_t j = 0; j < width.size(); ++j) {
        out.append(width[j] + 2, '-');
        out += '|';
    }
    out += '\n';
    for (std::size_t i = 1; i < rows.size(); ++i) emit(rows[i]);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// single-fit report

inline nlohmann::ordered_json to_json(const VarianceReport& v) {
    nlohmann::ordered_json j;
    j["theta_hat"] = v.theta_hat;
    j["se_robust"] = v.se_robust;
    j["se_corrected"] = v.se_corrected;
    j["ratio_robust_over_corrected"] = v.se_robust / v.se_corrected;
    j["ci_robust"] = {v.ci_robust.lo, v.ci_robust.hi};
    j["ci_corrected"] = {v.ci_corrected.lo, v.ci_corrected.hi};
    return j;
}

// ---------------------------------------------------------------------------
// analyze

namespace detail {

inline const std::vector<std::string>& analysis_header() {
    static const std::vector<std::string> h = {
        "Weight",         "Subgroup",
        "log HR",         "Robust SE",
        "Corrected sandwich SE", "Robust SE /Corrected sandwich SE",
        "Status"};
    return h;
}

inline std::vector<std::vector<std::string>> analysis_cells(const std::vector<AnalysisRow>& rows,
                                                            bool human) {
    auto num = [&](double x) { return human ? fixed3(x) : full(x); };
    std::vector<std::vector<std::string>> cells;
    cells.push_back(analysis_header());
    for (const auto& r : rows) {
        std::vector<std::string> c;
        c.push_back(r.estimand);
        c.push_back(r.subgroup);
        if (r.ok) {
            c.push_back(num(r.log_hr));
            c.push_back(num(r.se_robust));
            c.push_back(num(r.se_corrected));
            c.push_back(num(r.ratio_robust_over_corrected));
        } else {
            c.insert(c.end(), 4, "");
        }
        c.push_back(r.status);
        cells.push_back(std::move(c));
    }
    return cells;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const std::vector<AnalysisRow>& rows, double level) {
    nlohmann::ordered_json j;
    j["command"] = "analyze";
    j["level"] = level;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json o;
        o["weight"] = r.estimand;
        o["subgroup"] = r.subgroup;
        o["n"] = r.n;
        o["events"] = r.events;
        o["status"] = r.status;
        if (r.ok) {
            o["theta_hat"] = r.log_hr;
            o["hazard_ratio"] = r.hazard_ratio;
            o["se_robust"] = r.se_robust;
            o["se_corrected"] = r.se_corrected;
            o["ratio_robust_over_corrected"] = r.ratio_robust_over_corrected;
            o["ci_robust"] = {r.ci_robust.lo, r.ci_robust.hi};
            o["ci_corrected"] = {r.ci_corrected.lo, r.ci_corrected.hi};
        } else {
            o["theta_hat"] = nullptr;
            o["hazard_ratio"] = nullptr;
            o["se_robust"] = nullptr;
            o["se_corrected"] = nullptr;
            o["ratio_robust_over_corrected"] = nullptr;
            o["ci_robust"] = nullptr;
            o["ci_corrected"] = nullptr;
        }
        j["rows"].push_back(std::move(o));
    }
    return j;
}

inline std::string render(const std::vector<AnalysisRow>& rows, double level, OutputFormat f) {
    switch (f) {
        case OutputFormat::csv:
            return detail::csv_table(detail::analysis_cells(rows, false));
        case OutputFormat::md:
            return detail::md_table(detail::analysis_cells(rows, true));
        case OutputFormat::json:
            return to_json(rows, level).dump(2) + "\n";
    }
    throw ConfigInvalid("unreachable output format");
}

// ---------------------------------------------------------------------------
// simulate

namespace detail {

inline std::vector<std::vector<std::string>> simulation_cells(const SimulationReport& r,
                                                              bool human) {
    auto num = [&](const std::string& h, const std::string& f) { return human ? h : f; };
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"Weight", "N", "True log HR", "Bias of log HR",
                     "Mean confidence interval width (Robust variance)",
                     "Mean confidence interval width (Corrected variance)",
                     "Coverage probability (Robust variance)",
                     "Coverage probability (Corrected variance)", "Censoring fraction",
                     "Treated fraction", "Replications", "Failures", "Seed"});
    std::string weight = r.estimand;
    for (auto& ch : weight) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    cells.push_back({weight, std::to_string(r.n),
                     num(fixed4(r.true_log_hr), full(r.true_log_hr)),
                     num(fixed5(r.bias), full(r.bias)),
                     num(fixed3(r.mean_width_robust), full(r.mean_width_robust)),
                     num(fixed3(r.mean_width_corrected), full(r.mean_width_corrected)),
                     num(fixed3(r.coverage_robust), full(r.coverage_robust)),
                     num(fixed3(r.coverage_corrected), full(r.coverage_corrected)),
                     num(fixed3(r.mean_censor_fraction), full(r.mean_censor_fraction)),
                     num(fixed3(r.mean_treated_fraction), full(r.mean_treated_fraction)),
                     std::to_string(r.replications), std::to_string(r.failures),
                     std::to_string(r.seed)});
    return cells;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const SimulationReport& r) {
    nlohmann::ordered_json j;
    j["command"] = "simulate";
    j["scenario"] = r.scenario_id;
    j["parameters"] = {{"alpha1", r.scenario.alpha1},
                       {"alpha2", r.scenario.alpha2},
                       {"beta1", r.scenario.beta1},
                       {"beta2", r.scenario.beta2},
                       {"base_event_rate", r.scenario.base_event_rate},
                       {"censor_rate", r.scenario.censor_rate}};
    j["weight"] = r.estimand;
    j["n"] = r.n;
    j["replications"] = r.replications;
    j["completed"] = r.completed;
    j["failures"] = r.failures;
    j["seed"] = r.seed;
    j["level"] = r.level;
    j["true_log_hr"] = r.true_log_hr;
    j["true_log_hr_mc_se"] = r.true_log_hr_computed ? nlohmann::ordered_json(r.true_log_hr_mc_se)
                                                    : nlohmann::ordered_json(nullptr);
    j["mean_log_hr"] = r.mean_log_hr;
    j["bias_of_log_hr"] = r.bias;
    j["sd_log_hr"] = r.sd_log_hr;
    j["mc_se_bias"] = r.mc_se_bias;
    j["mean_ci_width"] = {{"robust", r.mean_width_robust}, {"corrected", r.mean_width_corrected}};
    j["coverage_probability"] = {{"robust", r.coverage_robust},
                                 {"corrected", r.coverage_corrected}};
    j["mc_se_coverage"] = {{"robust", r.mc_se_coverage_robust},
                           {"corrected", r.mc_se_coverage_corrected}};
    j["mean_censor_fraction"] = r.mean_censor_fraction;
    j["mean_treated_fraction"] = r.mean_treated_fraction;
    return j;
}

inline std::string render(const SimulationReport& r, OutputFormat f) {
    switch (f) {
        case OutputFormat::csv:
            return detail::csv_table(detail::simulation_cells(r, false));
        case OutputFormat::md:
            return detail::md_table(detail::simulation_cells(r, true));
        case OutputFormat::json:
            return to_json(r).dump(2) + "\n";
    }
    throw ConfigInvalid("unreachable output format");
}

// ---------------------------------------------------------------------------
// true-hr

inline nlohmann::ordered_json true_hr_json(const TrueHrResult& t, int scenario,
                                           const std::string& estimand, std::size_t m,
                                           std::uint64_t seed) {
    nlohmann::ordered_json j;
    j["command"] = "true-hr";
    j["scenario"] = scenario;
    j["weight"] = estimand;
    j["samples"] = m;
    j["seed"] = seed;
    j["true_log_hr"] = t.theta;
    j["mc_se"] = t.mc_se;
    return j;
}

inline std::string render_true_hr(const TrueHrResult& t, int scenario, const std::string& estimand,
                                  std::size_t m, std::uint64_t seed, OutputFormat f) {
    std::string weight = estimand;  // tables print the scheme uppercased
    for (auto& ch : weight) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    switch (f) {
        case OutputFormat::csv:
            return detail::csv_table(
                {{"Weight", "Samples", "True log HR", "MC SE", "Seed"},
                 {weight, std::to_string(m), detail::full(t.theta), detail::full(t.mc_se),
                  std::to_string(seed)}});
        case OutputFormat::md:
            return detail::md_table(
                {{"Weight", "Samples", "True log HR", "MC SE"},
                 {weight, std::to_string(m), detail::fixed4(t.theta), detail::fmt("%.6f", t.mc_se)}});
        case OutputFormat::json:
            return true_hr_json(t, scenario, estimand, m, seed).dump(2) + "\n";
    }
    throw ConfigInvalid("unreachable output format");
}

}  // namespace pscox
