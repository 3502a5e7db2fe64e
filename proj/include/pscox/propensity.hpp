#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "pscox/cohort.hpp"
#include "pscox/errors.hpp"

namespace pscox {

// Estimand selection via the tilting function w(e): ATE w=1, ATT w=e,
// ATO w=e(1-e). Custom schemes supply w and its derivative explicitly.
struct WeightScheme {
    enum class Kind { ate, att, ato, custom };

    Kind kind = Kind::ate;
    std::function<double(double)> custom_w;        // used when kind == custom
    std::function<double(double)> custom_w_prime;  // derivative of custom_w

    static WeightScheme ate() { return {Kind::ate, nullptr, nullptr}; }
    static WeightScheme att() { return {Kind::att, nullptr, nullptr}; }
    static WeightScheme ato() { return {Kind::ato, nullptr, nullptr}; }
    static WeightScheme custom(std::function<double(double)> w,
                               std::function<double(double)> w_prime) {
        return {Kind::custom, std::move(w), std::move(w_prime)};
    }

    static WeightScheme from_token(std::string_view tok) {
        if (tok == "ate") return ate();
        if (tok == "att") return att();
        if (tok == "ato") return ato();
        throw ConfigInvalid("unknown estimand token '" + std::string(tok) +
                            "' (expected ate, att, or ato)");
    }

    const char* token() const {
        switch (kind) {
            case Kind::ate: return "ate";
            case Kind::att: return "att";
            case Kind::ato: return "ato";
            case Kind::custom: return "custom";
        }
        return "?";
    }

    double w(double e) const {
        switch (kind) {
            case Kind::ate: return 1.0;
            case Kind::att: return e;
            case Kind::ato: return e * (1.0 - e);
            case Kind::custom: return custom_w(e);
        }
        return 0.0;
    }

    double w_prime(double e) const {
        switch (kind) {
            case Kind::ate: return 0.0;
            case Kind::att: return 1.0;
            case Kind::ato: return 1.0 - 2.0 * e;
            case Kind::custom: return custom_w_prime(e);
        }
        return 0.0;
    }
};

namespace detail {
inline void check_propensity(double e) {
    if (!(e > 0.0) || !(e < 1.0)) throw PropensityOutOfRange(e);
}
}  // namespace detail

/// Balancing weight w_i = w(e) / (a*e + (1-a)*(1-e)).
inline double subject_weight(const WeightScheme& scheme, double e, int a) {
    detail::check_propensity(e);
    return scheme.w(e) / (a ? e : 1.0 - e);
}

/// Propensity-sensitivity factor of the weight:
///   k_i = A(1-e)(w'(e) - w(e)/e) + (1-A)e(w'(e) + w(e)/(1-e)),
/// i.e. k_i = e(1-e) * d/de[subject_weight]. Feeds the A12 block of the
/// corrected sandwich. For ATE, k_i = -w_i(A_i - e_i) exactly.
inline double k_factor(const WeightScheme& scheme, double e, int a) {
    detail::check_propensity(e);
    const double w = scheme.w(e);
    const double wp = scheme.w_prime(e);
    return a ? (1.0 - e) * (wp - w / e) : e * (wp + w / (1.0 - e));
}

/// Per-subject balancing weights for a scheme from propensities.
inline std::vector<double> balancing_weights(const WeightScheme& scheme,
                                             const std::vector<double>& e_hat,
                                             const Cohort& cohort) {
    if (e_hat.size() != cohort.size()) throw DimensionMismatch("e_hat length != cohort size");
    std::vector<double> w(e_hat.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = subject_weight(scheme, e_hat[i], cohort.treated(i));
    return w;
}

// Fitted logistic propensity model; immutable once returned.
struct PropensityFit {
    Eigen::VectorXd gamma_hat;            // intercept first
    std::vector<double> e_hat;            // fitted propensities, strictly inside (0,1)
    Eigen::MatrixXd score_residuals;      // n x (1+p), row i = (A_i - e_i) X_i
    Eigen::MatrixXd info_matrix;          // sum e_i (1-e_i) X_i X_i^T
    bool converged = false;
    int iterations = 0;
};

namespace detail {

// Design matrix with a leading intercept column.
inline Eigen::MatrixXd design_matrix(const Cohort& cohort) {
    const auto n = static_cast<Eigen::Index>(cohort.size());
    const auto p = static_cast<Eigen::Index>(cohort.n_covariates());
    Eigen::MatrixXd X(n, p + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        for (Eigen::Index j = 0; j < p; ++j) X(i, j + 1) = cohort.covariate(i, j);
    }
    return X;
}

inline double logistic_loglik(const Eigen::VectorXd& z, const Eigen::VectorXd& a) {
    // sum log sigma((2A-1) z), computed as -log1p(exp(-|m|)) - max(-m, 0)
    double ll = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double m = (a[i] > 0.5 ? z[i] : -z[i]);
        ll += -(std::log1p(std::exp(-std::abs(m))) + (m < 0.0 ? -m : 0.0));
    }
    return ll;
}

}  // namespace detail

/// Maximum-likelihood logistic fit of treatment on (1, covariates) by damped
/// Newton with step halving. Converges when the score max-norm drops to tol.
inline PropensityFit fit_logistic(const Cohort& cohort, double tol = 1e-10, int max_iter = 100) {
    const auto n = static_cast<Eigen::Index>(cohort.size());
    if (n == 0) throw DimensionMismatch("empty cohort");
    const Eigen::MatrixXd X = detail::design_matrix(cohort);
    Eigen::VectorXd a(n);
    for (Eigen::Index i = 0; i < n; ++i) a[i] = cohort.treated(i);
    if (a.sum() <= 0.0 || a.sum() >= double(n))
        throw Separation("only one treatment arm present");

    const Eigen::Index q = X.cols();
    Eigen::VectorXd gamma = Eigen::VectorXd::Zero(q);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd e(n), score(q);
    Eigen::MatrixXd info(q, q);
    double ll = detail::logistic_loglik(z, a);

    PropensityFit fit;
    for (int iter = 1; iter <= max_iter; ++iter) {
        fit.iterations = iter;
        e = (1.0 + (-z.array()).exp()).inverse();
        score = X.transpose() * (a - e);
        const Eigen::ArrayXd v = e.array() * (1.0 - e.array());
        info = X.transpose() * v.matrix().asDiagonal() * X;

        // scale-invariant separation tests on the linear predictor: a huge
        // worst-case classification margin means complete separation, and a
        // pinned fitted probability means a subject beyond double resolution
        double margin = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < n; ++i)
            margin = std::min(margin, a[i] > 0.5 ? z[i] : -z[i]);
        if (margin > 15.0)
            throw Separation("complete separation: every subject classified perfectly");
        for (Eigen::Index i = 0; i < n; ++i)
            if (e[i] < 1e-10 || e[i] > 1.0 - 1e-10)
                throw Separation("fitted propensity pinned at 0 or 1");

        if (score.lpNorm<Eigen::Infinity>() <= tol) {
            fit.converged = true;
            break;
        }

        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success ||
            ldlt.vectorD().minCoeff() <= 1e-12 * ldlt.vectorD().maxCoeff())
            throw SingularInformation();
        const Eigen::VectorXd step = ldlt.solve(score);

        // step halving on the (concave) log-likelihood
        double scale = 1.0;
        for (int h = 0; h < 40; ++h) {
            const Eigen::VectorXd cand = gamma + scale * step;
            const Eigen::VectorXd zc = X * cand;
            const double llc = detail::logistic_loglik(zc, a);
            if (llc >= ll - 1e-12 * std::abs(ll)) {
                gamma = cand;
                z = zc;
                ll = llc;
                break;
            }
            scale *= 0.5;
            if (h == 39) throw MaxIterExceeded(iter);
        }
    }
    if (!fit.converged) throw MaxIterExceeded(max_iter);

    fit.gamma_hat = gamma;
    fit.e_hat.assign(e.data(), e.data() + n);
    fit.info_matrix = info;
    fit.score_residuals = (a - e).asDiagonal() * X;
    return fit;
}

}  // namespace pscox
