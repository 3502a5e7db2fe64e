#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "pscox/cohort.hpp"
#include "pscox/coxfit.hpp"
#include "pscox/errors.hpp"
#include "pscox/propensity.hpp"

namespace pscox {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double width() const { return hi - lo; }
    bool contains(double x) const { return lo <= x && x <= hi; }
};

struct ConfidenceInterval {
    Interval log_hr;
    Interval hr;  // exponentiated endpoints
};

/// Wald interval theta +/- z_{(1+level)/2} * sqrt(variance), on both scales.
inline ConfidenceInterval confidence_interval(double theta_hat, double variance, double level) {
    if (!(level > 0.0) || !(level < 1.0)) throw InvalidLevel(level);
    if (!(variance > 0.0) || !std::isfinite(variance))
        throw NumericalError("variance must be positive and finite");
    const double z = boost::math::quantile(boost::math::normal_distribution<double>(),
                                           0.5 * (1.0 + level));
    const double half = z * std::sqrt(variance);
    ConfidenceInterval ci;
    ci.log_hr = {theta_hat - half, theta_hat + half};
    ci.hr = {std::exp(ci.log_hr.lo), std::exp(ci.log_hr.hi)};
    return ci;
}

// Per-subject pieces of the theta estimating equation and the A-blocks of the
// stacked information matrix.
struct ScoreResiduals {
    std::vector<double> eta;  // eta_i = w_i * L0_i, the weighted score residual
    std::vector<double> l0;   // L0_i, computed by its own formula (not eta/w)
    double a11 = 0.0;         // -d(score)/d(theta)
    Eigen::RowVectorXd a12;   // -d(score)/d(gamma^T), via the k-factor chain rule
    Eigen::MatrixXd a22;      // logistic information, sum e(1-e) X X^T
};

struct VarianceReport {
    double theta_hat = 0.0;
    double level = 0.95;
    double var_robust = 0.0;
    double var_corrected = 0.0;
    double correction_bracket = 0.0;  // d'Qd + 2d'g, unscaled
    double correction = 0.0;          // (n/a11^2) * bracket = var_corrected - var_robust
    Eigen::VectorXd d_hat;
    Eigen::MatrixXd u_hat;
    Eigen::MatrixXd sandwich;  // full (1+p) x (1+p) corrected matrix A^{-1} B A^{-T}
    double se_robust = 0.0;
    double se_corrected = 0.0;
    Interval ci_robust;     // log-HR scale
    Interval ci_corrected;  // log-HR scale
};

namespace detail {

// Risk-set sums at each subject's own time plus the tie-inclusive cumulative
// event sums
//   c1(t) = sum_{j events, T_j <= t} w_j / S0(j)
//   c2(t) = sum_{j events, T_j <= t} w_j S1(j) / S0(j)^2,
// all evaluated at a fixed theta. These are the building blocks of eta and L0.
struct CoxPrefix {
    std::vector<double> s0, s1, c1, c2;  // indexed like the cohort
    double a11 = 0.0;
};

inline CoxPrefix build_cox_prefix(const CoxData& d, double theta) {
    const std::size_t n = d.time.size();
    const double x = std::exp(theta);
    CoxPrefix pre;
    pre.s0.resize(n);
    pre.s1.resize(n);
    pre.c1.assign(n, 0.0);
    pre.c2.assign(n, 0.0);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return d.time[a] != d.time[b] ? d.time[a] > d.time[b] : a < b;
    });

    struct EventGroup {
        double t, inc1, inc2;
    };
    std::vector<EventGroup> groups;  // time descending
    Kahan cw, tw;
    std::size_t i = 0;
    while (i < n) {
        const double t = d.time[order[i]];
        double ew = 0.0;
        std::size_t j = i;
        for (; j < n && d.time[order[j]] == t; ++j) {
            const std::size_t l = order[j];
            (d.treated[l] ? tw : cw).add(d.w[l]);
            if (d.event[l]) ew += d.w[l];
        }
        const double s1 = x * tw.value();
        const double s0 = cw.value() + s1;
        for (; i < j; ++i) {
            pre.s0[order[i]] = s0;
            pre.s1[order[i]] = s1;
        }
        if (ew > 0.0) {
            groups.push_back({t, ew / s0, ew * s1 / (s0 * s0)});
            const double r = s1 / s0;
            pre.a11 += ew * r * (1.0 - r);
        }
    }

    // cumulative over event groups in ascending time, then spread to subjects
    std::reverse(groups.begin(), groups.end());
    double cum1 = 0.0, cum2 = 0.0;
    std::vector<double> t_asc(groups.size()), c1_asc(groups.size()), c2_asc(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        cum1 += groups[g].inc1;
        cum2 += groups[g].inc2;
        t_asc[g] = groups[g].t;
        c1_asc[g] = cum1;
        c2_asc[g] = cum2;
    }
    std::size_t g = 0;
    for (std::size_t k = n; k-- > 0;) {  // ascending time
        const std::size_t subj = order[k];
        while (g < t_asc.size() && t_asc[g] <= d.time[subj]) ++g;
        if (g > 0) {
            pre.c1[subj] = c1_asc[g - 1];
            pre.c2[subj] = c2_asc[g - 1];
        }
    }
    return pre;
}

inline CoxData cox_data(const Cohort& cohort, const std::vector<double>& w) {
    return CoxData{cohort.times(), cohort.events(), cohort.treated_flags(), w};
}

inline void require_converged(const CoxFit& fit, const Cohort& cohort) {
    if (!fit.converged) throw NumericalError("cox fit did not converge");
    if (fit.weights.size() != cohort.size())
        throw DimensionMismatch("fit weights length != cohort size");
}

inline std::vector<double> eta_from_prefix(const CoxData& d, const CoxPrefix& pre, double theta) {
    const std::size_t n = d.time.size();
    std::vector<double> eta(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = d.treated[i];
        const double ex = std::exp(theta * a);
        const double ev = d.event[i] ? a - pre.s1[i] / pre.s0[i] : 0.0;
        eta[i] = d.w[i] * (ev - a * ex * pre.c1[i] + ex * pre.c2[i]);
    }
    return eta;
}

inline std::vector<double> l0_from_prefix(const CoxData& d, const CoxPrefix& pre, double theta) {
    const std::size_t n = d.time.size();
    std::vector<double> l0(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = d.treated[i];
        const double ev = d.event[i] ? a - pre.s1[i] / pre.s0[i] : 0.0;
        l0[i] = ev - std::exp(theta * a) * (a * pre.c1[i] - pre.c2[i]);
    }
    return l0;
}

inline void guard_a11(double a11) {
    if (!(a11 > 0.0) || !std::isfinite(a11)) throw DegenerateInformation();
}

inline Eigen::LDLT<Eigen::MatrixXd> guarded_ldlt(const Eigen::MatrixXd& m, bool u_context) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    const bool bad = ldlt.info() != Eigen::Success ||
                     ldlt.vectorD().minCoeff() <= 1e-12 * ldlt.vectorD().maxCoeff();
    if (bad) {
        if (u_context) throw SingularU();
        throw SingularBlock();
    }
    return ldlt;
}

}  // namespace detail

/// Weighted score residuals eta_i(theta_hat, gamma_hat) for every subject.
/// The inner sums run over event subjects j with T_j <= T_i (ties included).
inline std::vector<double> eta_residuals(const CoxFit& fit, const Cohort& cohort) {
    detail::require_converged(fit, cohort);
    const auto d = detail::cox_data(cohort, fit.weights);
    const auto pre = detail::build_cox_prefix(d, fit.theta_hat);
    return detail::eta_from_prefix(d, pre, fit.theta_hat);
}

/// eta, L0, and the A-blocks of the stacked system. L0 is evaluated from its
/// own display so the eta_i = w_i L0_i identity is a genuine cross-check.
/// `rows` maps cohort rows of the Cox fit into the propensity fit's cohort
/// (identity when both were fit on the same data).
inline ScoreResiduals score_residual_blocks(const CoxFit& fit, const PropensityFit& ps,
                                            const Cohort& cohort, const WeightScheme& scheme,
                                            const Eigen::MatrixXd& X_ps,
                                            const std::vector<std::size_t>& rows) {
    detail::require_converged(fit, cohort);
    const std::size_t n = cohort.size();
    if (rows.size() != n) throw DimensionMismatch("row map length != cox cohort size");

    const auto d = detail::cox_data(cohort, fit.weights);
    const auto pre = detail::build_cox_prefix(d, fit.theta_hat);
    detail::guard_a11(pre.a11);

    ScoreResiduals r;
    r.eta = detail::eta_from_prefix(d, pre, fit.theta_hat);
    r.l0 = detail::l0_from_prefix(d, pre, fit.theta_hat);
    r.a11 = pre.a11;
    r.a22 = ps.info_matrix;
    r.a12 = Eigen::RowVectorXd::Zero(X_ps.cols());
    for (std::size_t i = 0; i < n; ++i) {
        const double e = ps.e_hat[rows[i]];
        const double k = k_factor(scheme, e, cohort.treated(i));
        r.a12 -= k * r.l0[i] * X_ps.row(static_cast<Eigen::Index>(rows[i]));
    }
    return r;
}

inline ScoreResiduals score_residual_blocks(const CoxFit& fit, const PropensityFit& ps,
                                            const Cohort& cohort, const WeightScheme& scheme) {
    std::vector<std::size_t> rows(cohort.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return score_residual_blocks(fit, ps, cohort, scheme, detail::design_matrix(cohort), rows);
}

/// Robust (weights-as-known) variance: sum eta_i^2 / a11^2.
inline double robust_variance(const CoxFit& fit, const Cohort& cohort) {
    detail::require_converged(fit, cohort);
    const auto d = detail::cox_data(cohort, fit.weights);
    const auto pre = detail::build_cox_prefix(d, fit.theta_hat);
    detail::guard_a11(pre.a11);
    const auto eta = detail::eta_from_prefix(d, pre, fit.theta_hat);
    double b11 = 0.0;
    for (double e : eta) b11 += e * e;
    return b11 / (pre.a11 * pre.a11);
}

/// Corrected sandwich variance from the stacked estimating equations
/// (theta score over the analysis cohort, logistic score over the propensity
/// cohort). The general form takes `rows` mapping analysis rows into the
/// propensity cohort, so a subgroup analysis can reuse full-cohort scores;
/// with the identity map it reduces to the usual same-cohort estimator.
inline VarianceReport corrected_sandwich_variance(const CoxFit& fit, const PropensityFit& ps,
                                                  const Cohort& cohort, const Cohort& ps_cohort,
                                                  const WeightScheme& scheme,
                                                  const std::vector<std::size_t>& rows,
                                                  double level = 0.95) {
    const Eigen::MatrixXd X = detail::design_matrix(ps_cohort);
    if (ps.e_hat.size() != ps_cohort.size()) throw DimensionMismatch("ps fit/cohort disagree");
    const auto sr = score_residual_blocks(fit, ps, cohort, scheme, X, rows);
    const Eigen::Index q = X.cols();
    const std::size_t n_ps = ps_cohort.size();

    // B over stacked per-subject scores Omega_i = (eta_i, pi_i^T)^T; subjects
    // outside the analysis cohort contribute eta = 0.
    double b11 = 0.0;
    Eigen::RowVectorXd b12 = Eigen::RowVectorXd::Zero(q);
    for (std::size_t i = 0; i < sr.eta.size(); ++i) {
        b11 += sr.eta[i] * sr.eta[i];
        b12 += sr.eta[i] * ps.score_residuals.row(static_cast<Eigen::Index>(rows[i]));
    }
    const Eigen::MatrixXd b22 = ps.score_residuals.transpose() * ps.score_residuals;

    // A^{-1} in closed form from the block-triangular structure
    auto a22_ldlt = detail::guarded_ldlt(sr.a22, /*u_context=*/false);
    const Eigen::MatrixXd a22_inv = a22_ldlt.solve(Eigen::MatrixXd::Identity(q, q));
    Eigen::MatrixXd a_inv = Eigen::MatrixXd::Zero(q + 1, q + 1);
    a_inv(0, 0) = 1.0 / sr.a11;
    a_inv.block(0, 1, 1, q) = -(sr.a12 * a22_inv) / sr.a11;
    a_inv.block(1, 1, q, q) = a22_inv;

    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(q + 1, q + 1);
    b(0, 0) = b11;
    b.block(0, 1, 1, q) = b12;
    b.block(1, 0, q, 1) = b12.transpose();
    b.block(1, 1, q, q) = b22;

    VarianceReport rep;
    rep.theta_hat = fit.theta_hat;
    rep.level = level;
    rep.sandwich = a_inv * b * a_inv.transpose();
    rep.var_corrected = rep.sandwich(0, 0);
    rep.var_robust = b11 / (sr.a11 * sr.a11);
    rep.d_hat = -(a22_inv * sr.a12.transpose());
    rep.u_hat = sr.a22 / double(n_ps);

    // bracket decomposition: var_CS = var_R + (n/a11^2)(d'Qd + 2d'g) with
    // Q = B22/n and g = (1/n) sum_i w_i L0_i (A_i - e_i) X_i = B12'/n
    const double quad = rep.d_hat.dot((b22 / double(n_ps)) * rep.d_hat);
    const double cross = 2.0 * rep.d_hat.dot(b12.transpose()) / double(n_ps);
    rep.correction_bracket = quad + cross;
    rep.correction = double(n_ps) / (sr.a11 * sr.a11) * rep.correction_bracket;

    rep.se_robust = std::sqrt(rep.var_robust);
    rep.se_corrected = std::sqrt(rep.var_corrected);
    rep.ci_robust = confidence_interval(fit.theta_hat, rep.var_robust, level).log_hr;
    rep.ci_corrected = confidence_interval(fit.theta_hat, rep.var_corrected, level).log_hr;
    return rep;
}

inline VarianceReport corrected_sandwich_variance(const CoxFit& fit, const PropensityFit& ps,
                                                  const Cohort& cohort,
                                                  const WeightScheme& scheme,
                                                  double level = 0.95) {
    std::vector<std::size_t> rows(cohort.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return corrected_sandwich_variance(fit, ps, cohort, cohort, scheme, rows, level);
}

// Decomposition of corrected - robust into a quadratic-plus-cross bracket.
// The identity is exact in finite samples (see README); bracket_u_substituted
// replaces Q by U-hat, the form under which the ATE bracket is provably <= 0.
struct Decomposition {
    double var_robust = 0.0;
    double var_corrected_direct = 0.0;
    double var_corrected_reconstructed = 0.0;
    Eigen::VectorXd d_hat;
    Eigen::MatrixXd u_hat;
    double quad_term = 0.0;   // d' Q d,  Q = (1/n) sum (A_i - e_i)^2 X_i X_i'
    double cross_term = 0.0;  // 2 d' g,  g = (1/n) sum w_i L0_i (A_i - e_i) X_i
    double bracket = 0.0;
    double bracket_u_substituted = 0.0;
    double correction = 0.0;  // (n/a11^2) * bracket
};

inline Decomposition variance_decomposition(const CoxFit& fit, const PropensityFit& ps,
                                            const Cohort& cohort, const WeightScheme& scheme) {
    const VarianceReport rep = corrected_sandwich_variance(fit, ps, cohort, scheme);
    Decomposition dec;
    dec.var_robust = rep.var_robust;
    dec.var_corrected_direct = rep.var_corrected;
    dec.d_hat = rep.d_hat;
    dec.u_hat = rep.u_hat;

    // recompute the bracket pieces from their own displays
    const Eigen::MatrixXd X = detail::design_matrix(cohort);
    const auto sr = score_residual_blocks(fit, ps, cohort, scheme);
    const std::size_t n = cohort.size();
    const Eigen::Index q = X.cols();
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(q);
    for (std::size_t i = 0; i < n; ++i) {
        const double res = cohort.treated(i) - ps.e_hat[i];
        const Eigen::RowVectorXd xi = X.row(static_cast<Eigen::Index>(i));
        Q += (res * res) * (xi.transpose() * xi);
        g += (fit.weights[i] * sr.l0[i] * res) * xi.transpose();
    }
    Q /= double(n);
    g /= double(n);

    detail::guarded_ldlt(dec.u_hat, /*u_context=*/true);  // SingularU guard
    dec.quad_term = dec.d_hat.dot(Q * dec.d_hat);
    dec.cross_term = 2.0 * dec.d_hat.dot(g);
    dec.bracket = dec.quad_term + dec.cross_term;
    dec.bracket_u_substituted = dec.d_hat.dot(dec.u_hat * dec.d_hat) + 2.0 * dec.d_hat.dot(g);
    dec.correction = double(n) / (sr.a11 * sr.a11) * dec.bracket;
    dec.var_corrected_reconstructed = dec.var_robust + dec.correction;
    return dec;
}

}  // namespace pscox
