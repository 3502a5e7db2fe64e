#pragma once

#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "pscox/cohort.hpp"
#include "pscox/coxfit.hpp"
#include "pscox/errors.hpp"
#include "pscox/propensity.hpp"
#include "pscox/variance.hpp"

namespace pscox {

// Whether subgroup analyses refit the propensity model inside the subgroup
// (each subgroup is its own target population) or reuse full-cohort scores.
enum class PsScope { subgroup, full };

struct AnalysisConfig {
    std::string input_path;
    ColumnMap columns;
    std::vector<WeightScheme> estimands = {WeightScheme::ate()};
    std::vector<SubgroupSpec> subgroups;
    PsScope ps_scope = PsScope::subgroup;
    double level = 0.95;
};

// One output row per (estimand x subgroup). A failed fit is reported in-row
// via `status`, never as a crash of the whole analysis.
struct AnalysisRow {
    std::string estimand;
    std::string subgroup;  // "overall" or the subgroup expression, e.g. "L1==1"
    std::size_t n = 0;
    std::size_t events = 0;
    std::string status = "ok";
    double log_hr = 0.0;
    double hazard_ratio = 0.0;
    double se_robust = 0.0;
    double se_corrected = 0.0;
    double ratio_robust_over_corrected = 0.0;
    Interval ci_robust;     // log-HR scale
    Interval ci_corrected;  // log-HR scale
    bool ok = false;
};

namespace detail {

// A covariate that is constant in the fitted sample carries no information
// about treatment and makes the logistic design rank-deficient (typical for a
// subgroup defined by that covariate), so the propensity refit excludes it.
inline Cohort drop_constant_covariates(const Cohort& c) {
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < c.n_covariates(); ++j) {
        bool varies = false;
        for (std::size_t i = 1; i < c.size() && !varies; ++i)
            varies = c.covariate(i, j) != c.covariate(0, j);
        if (varies) keep.push_back(j);
    }
    if (keep.size() == c.n_covariates()) return c;
    std::vector<std::string> names;
    for (std::size_t j : keep) names.push_back(c.covariate_names()[j]);
    Cohort out(std::move(names));
    for (std::size_t i = 0; i < c.size(); ++i) {
        Subject s = c.subject(i);
        std::vector<double> covs;
        for (std::size_t j : keep) covs.push_back(s.covariates[j]);
        s.covariates = std::move(covs);
        out.add(s);
    }
    return out;
}

inline const char* status_for(const Error& err) {
    // surfaced per-row; keep tokens short and grep-able
    if (dynamic_cast<const MonotoneLikelihood*>(&err)) return "monotone-likelihood";
    if (dynamic_cast<const Separation*>(&err)) return "separation";
    if (dynamic_cast<const EmptySubgroup*>(&err)) return "empty-subgroup";
    return "failed";
}

inline AnalysisRow analyze_cell(const Cohort& full, const std::optional<SubgroupSpec>& spec,
                                const WeightScheme& scheme, PsScope scope, double level) {
    AnalysisRow row;
    row.estimand = scheme.token();
    row.subgroup = spec ? spec->label() : "overall";
    try {
        std::vector<std::size_t> rows;
        if (spec) {
            rows = subgroup_indices(full, *spec);
        } else {
            rows.resize(full.size());
            std::iota(rows.begin(), rows.end(), std::size_t{0});
        }
        const Cohort sub = spec ? full.select_rows(rows) : full;
        row.n = sub.size();
        const auto diag = validate_for_fitting(sub);
        row.events = diag.events_treated + diag.events_control;

        VarianceReport v;
        if (scope == PsScope::full && spec) {
            // propensity from the full cohort; cox + correction masked to the rows
            const Cohort ps_basis = drop_constant_covariates(full);
            const PropensityFit ps = fit_logistic(ps_basis);
            std::vector<double> e_sub(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) e_sub[i] = ps.e_hat[rows[i]];
            const auto w = balancing_weights(scheme, e_sub, sub);
            const CoxFit fit = fit_cox_fast(sub, w);
            v = corrected_sandwich_variance(fit, ps, sub, ps_basis, scheme, rows, level);
        } else {
            const Cohort ps_basis = drop_constant_covariates(sub);
            const PropensityFit ps = fit_logistic(ps_basis);
            const auto w = balancing_weights(scheme, ps.e_hat, sub);
            const CoxFit fit = fit_cox_fast(sub, w);
            v = corrected_sandwich_variance(fit, ps, ps_basis, scheme, level);
        }
        row.log_hr = v.theta_hat;
        row.hazard_ratio = std::exp(v.theta_hat);
        row.se_robust = v.se_robust;
        row.se_corrected = v.se_corrected;
        row.ratio_robust_over_corrected = v.se_robust / v.se_corrected;
        row.ci_robust = v.ci_robust;
        row.ci_corrected = v.ci_corrected;
        row.ok = true;
    } catch (const Error& err) {
        row.status = status_for(err);
    }
    return row;
}

}  // namespace detail

/// Weighted Cox analysis of a cohort: one row per (estimand x subgroup), the
/// overall population first. Input data are never modified.
inline std::vector<AnalysisRow> analyze(const Cohort& cohort, const AnalysisConfig& cfg) {
    if (!(cfg.level > 0.0) || !(cfg.level < 1.0)) throw InvalidLevel(cfg.level);
    if (cfg.estimands.empty()) throw ConfigInvalid("no estimand selected");
    // validate subgroup covariates upfront so typos fail fast, not per-row
    for (const auto& s : cfg.subgroups) cohort.covariate_index(s.covariate_name);

    std::vector<AnalysisRow> out;
    for (const auto& scheme : cfg.estimands) {
        out.push_back(detail::analyze_cell(cohort, std::nullopt, scheme, cfg.ps_scope, cfg.level));
        for (const auto& spec : cfg.subgroups)
            out.push_back(detail::analyze_cell(cohort, spec, scheme, cfg.ps_scope, cfg.level));
    }
    return out;
}

inline std::vector<AnalysisRow> analyze_file(const AnalysisConfig& cfg) {
    return analyze(load_csv(cfg.input_path, cfg.columns), cfg);
}

}  // namespace pscox
