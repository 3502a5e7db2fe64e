#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "pscox/cohort.hpp"
#include "pscox/errors.hpp"

namespace pscox {

struct CoxOptions {
    double tol = 1e-10;   // on |score|; floored internally by an accumulation-noise bound
    int max_iter = 100;
    double bracket = 20.0;  // search interval for theta is [-bracket, bracket]
};

// Weighted partial-likelihood fit for the single binary treatment covariate.
// s0/s1 hold the risk-set sums at theta_hat evaluated at each subject's own
// time (ties included), indexed like the cohort.
struct CoxFit {
    double theta_hat = 0.0;
    std::vector<double> weights;
    std::vector<double> s0, s1;
    double score_at_solution = 0.0;
    bool converged = false;
    int iterations = 0;
};

namespace detail {

// Compensated (Kahan) accumulator: the fast fitter sums millions of terms and
// the naive/fast equivalence contract is 1e-10 on theta.
class Kahan {
  public:
    void add(double v) {
        const double y = v - c_;
        const double t = sum_ + y;
        c_ = (t - sum_) - y;
        sum_ = t;
    }
    double value() const { return sum_; }

  private:
    double sum_ = 0.0;
    double c_ = 0.0;
};

struct CoxData {
    std::span<const double> time;
    std::span<const std::uint8_t> event;
    std::span<const std::uint8_t> treated;
    std::span<const double> w;
};

inline void check_cox_inputs(const CoxData& d) {
    const std::size_t n = d.time.size();
    if (d.event.size() != n || d.treated.size() != n || d.w.size() != n)
        throw DimensionMismatch("cox input arrays disagree on length");
    for (std::size_t i = 0; i < n; ++i)
        if (!(d.w[i] > 0.0) || !std::isfinite(d.w[i]))
            throw NumericalError("weights must be positive and finite");
}

inline void check_events_per_arm(const CoxData& d) {
    std::size_t ev[2] = {0, 0};
    for (std::size_t i = 0; i < d.time.size(); ++i)
        if (d.event[i]) ++ev[d.treated[i]];
    if (ev[0] == 0 || ev[1] == 0) throw MonotoneLikelihood();
}

// Risk-set suffix sums grouped by distinct event time; evaluating the score
// afterwards is O(#groups) for any theta.
struct RiskGroups {
    std::vector<double> cw, tw;  // sum of control / treated weights over {T_l >= t}
    std::vector<double> ew, et;  // event-weight and treated-event-weight within the tie group
    std::vector<std::size_t> order;  // row indices, time descending
    double event_weight_mass = 0.0;  // scale for the score's rounding-noise floor

    // score U(theta) and curvature A11 = -dU/dtheta
    void eval(double theta, double& u_out, double& a11_out) const {
        const double x = std::exp(theta);
        Kahan u, a11;
        for (std::size_t g = 0; g < cw.size(); ++g) {
            const double xs1 = x * tw[g];
            const double r = xs1 / (cw[g] + xs1);
            u.add(et[g] - ew[g] * r);
            a11.add(ew[g] * r * (1.0 - r));
        }
        u_out = u.value();
        a11_out = a11.value();
    }
};

inline RiskGroups build_risk_groups(const CoxData& d) {
    const std::size_t n = d.time.size();
    RiskGroups rg;
    rg.order.resize(n);
    std::iota(rg.order.begin(), rg.order.end(), std::size_t{0});
    std::sort(rg.order.begin(), rg.order.end(), [&](std::size_t a, std::size_t b) {
        return d.time[a] != d.time[b] ? d.time[a] > d.time[b] : a < b;
    });
    Kahan cw, tw, mass;
    std::size_t i = 0;
    while (i < n) {
        const double t = d.time[rg.order[i]];
        double ew = 0.0, et = 0.0;
        // everyone tied at t enters the risk set before events at t are scored
        for (; i < n && d.time[rg.order[i]] == t; ++i) {
            const std::size_t l = rg.order[i];
            (d.treated[l] ? tw : cw).add(d.w[l]);
            if (d.event[l]) {
                ew += d.w[l];
                if (d.treated[l]) et += d.w[l];
            }
        }
        if (ew > 0.0) {
            rg.cw.push_back(cw.value());
            rg.tw.push_back(tw.value());
            rg.ew.push_back(ew);
            rg.et.push_back(et);
            mass.add(ew);
        }
    }
    rg.event_weight_mass = mass.value();
    return rg;
}

// 1-d safeguarded Newton on the (nonincreasing) score, bisection fallback
// inside a verified sign-change bracket.
template <class Eval>
inline CoxFit solve_cox(Eval&& eval, double weight_mass, const CoxOptions& opt) {
    const double eps = std::numeric_limits<double>::epsilon();
    const double tol = std::max(opt.tol, 64.0 * eps * weight_mass);

    double u_lo, u_hi, a11;
    eval(-opt.bracket, u_lo, a11);
    eval(opt.bracket, u_hi, a11);
    if (u_lo < -tol || u_hi > tol) throw MonotoneLikelihood();

    CoxFit fit;
    double lo = -opt.bracket, hi = opt.bracket;
    double theta = 0.0;
    for (int iter = 1; iter <= opt.max_iter; ++iter) {
        double u;
        eval(theta, u, a11);
        fit.iterations = iter;
        fit.theta_hat = theta;
        fit.score_at_solution = u;
        if (std::abs(u) <= tol) {
            fit.converged = true;
            return fit;
        }
        (u > 0.0 ? lo : hi) = theta;
        double next = a11 > 0.0 ? theta + u / a11 : theta;
        if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);
        theta = next;
    }
    throw MaxIterExceeded(opt.max_iter);
}

// Naive risk-set sums at one subject's time: S0 = sum_{T_l >= t} w_l e^{theta A_l},
// S1 the treated part. O(n) per call; kept independent of the fast path so the
// two can police each other.
inline void naive_s0_s1(const CoxData& d, double t, double x, double& s0, double& s1) {
    Kahan k0, k1;
    for (std::size_t l = 0; l < d.time.size(); ++l) {
        if (d.time[l] < t) continue;
        const double v = d.w[l] * (d.treated[l] ? x : 1.0);
        k0.add(v);
        if (d.treated[l]) k1.add(v);
    }
    s0 = k0.value();
    s1 = k1.value();
}

inline void naive_score(const CoxData& d, double theta, double& u_out, double& a11_out) {
    const double x = std::exp(theta);
    Kahan u, a11;
    for (std::size_t i = 0; i < d.time.size(); ++i) {
        if (!d.event[i]) continue;
        double s0, s1;
        naive_s0_s1(d, d.time[i], x, s0, s1);
        const double r = s1 / s0;
        u.add(d.w[i] * (d.treated[i] - r));
        a11.add(d.w[i] * r * (1.0 - r));
    }
    u_out = u.value();
    a11_out = a11.value();
}

inline double event_weight_mass(const CoxData& d) {
    Kahan m;
    for (std::size_t i = 0; i < d.time.size(); ++i)
        if (d.event[i]) m.add(d.w[i]);
    return m.value();
}

inline void fill_sums_at_solution(const CoxData& d, const RiskGroups& rg, double theta,
                                  CoxFit& fit) {
    const std::size_t n = d.time.size();
    const double x = std::exp(theta);
    fit.s0.resize(n);
    fit.s1.resize(n);
    Kahan cw, tw;
    std::size_t i = 0;
    while (i < n) {
        const double t = d.time[rg.order[i]];
        std::size_t j = i;
        for (; j < n && d.time[rg.order[j]] == t; ++j) {
            const std::size_t l = rg.order[j];
            (d.treated[l] ? tw : cw).add(d.w[l]);
        }
        const double s1 = x * tw.value();
        const double s0 = cw.value() + s1;
        for (; i < j; ++i) {
            fit.s0[rg.order[i]] = s0;
            fit.s1[rg.order[i]] = s1;
        }
    }
}

}  // namespace detail

/// Weighted partial-likelihood score U(theta) = sum_i w_i delta_i [A_i - S1(i)/S0(i)],
/// risk sets {l : T_l >= T_i} at event times, Breslow ties. Direct O(n * events)
/// evaluation.
inline double cox_score(double theta, const Cohort& cohort, const std::vector<double>& weights) {
    detail::CoxData d{cohort.times(), cohort.events(), cohort.treated_flags(), weights};
    detail::check_cox_inputs(d);
    double u, a11;
    detail::naive_score(d, theta, u, a11);
    return u;
}

/// Root of the score by safeguarded Newton, computing risk-set sums naively per
/// iteration. Reference implementation; fit_cox_fast is the production path.
inline CoxFit fit_cox(const Cohort& cohort, const std::vector<double>& weights,
                      const CoxOptions& opt = {}) {
    detail::CoxData d{cohort.times(), cohort.events(), cohort.treated_flags(), weights};
    detail::check_cox_inputs(d);
    detail::check_events_per_arm(d);
    auto eval = [&](double theta, double& u, double& a11) { detail::naive_score(d, theta, u, a11); };
    CoxFit fit = detail::solve_cox(eval, detail::event_weight_mass(d), opt);
    fit.weights = weights;
    const auto rg = detail::build_risk_groups(d);
    detail::fill_sums_at_solution(d, rg, fit.theta_hat, fit);
    return fit;
}

/// Same contract as fit_cox; sorts once, then each score evaluation runs over
/// per-event-time suffix sums in O(#distinct event times). Handles n in the
/// millions.
inline CoxFit fit_cox_fast(std::span<const double> time, std::span<const std::uint8_t> event,
                           std::span<const std::uint8_t> treated, std::span<const double> weights,
                           const CoxOptions& opt = {}) {
    detail::CoxData d{time, event, treated, weights};
    detail::check_cox_inputs(d);
    detail::check_events_per_arm(d);
    const auto rg = detail::build_risk_groups(d);
    auto eval = [&](double theta, double& u, double& a11) { rg.eval(theta, u, a11); };
    CoxFit fit = detail::solve_cox(eval, rg.event_weight_mass, opt);
    fit.weights.assign(weights.begin(), weights.end());
    detail::fill_sums_at_solution(d, rg, fit.theta_hat, fit);
    return fit;
}

inline CoxFit fit_cox_fast(const Cohort& cohort, const std::vector<double>& weights,
                           const CoxOptions& opt = {}) {
    return fit_cox_fast(cohort.times(), cohort.events(), cohort.treated_flags(), weights, opt);
}

}  // namespace pscox
