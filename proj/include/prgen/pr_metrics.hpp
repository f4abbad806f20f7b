#pragma once

// Precision and Recall for discrete sequence distributions: the support
// variant, the full PR-curve by exhaustive enumeration, and the sparsity
// bound that caps both as a function of the model's logit spread.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "prgen/seq_dist.hpp"

namespace prgen {

/// One point of the PR-curve. For finite positive lambda the coordinates
/// satisfy alpha = lambda * beta.
struct PRPoint {
    double lambda = 1.0;
    double alpha = 0.0;
    double beta = 0.0;
};

/// Ordered PR-curve, ascending in lambda; alpha is nondecreasing and beta
/// nonincreasing along the curve.
struct PRCurve {
    std::vector<PRPoint> points;
};

/// Support Precision/Recall: alpha_bar = Q(Supp(P)), beta_bar = P(Supp(Q)).
struct SupportPR {
    double alpha_bar = 0.0;
    double beta_bar = 0.0;
};

inline SupportPR support_pr(const FactorizedSeqDist& p, const FactorizedSeqDist& q,
                            double budget = 1e7) {
    SupportPR s;
    enumerate_pair(
        p, q,
        [&](double pp, double qq) {
            if (pp > 0.0) s.alpha_bar += qq;
            if (qq > 0.0) s.beta_bar += pp;
        },
        budget);
    return s;
}

/// alpha_lambda = sum_x min(lambda P(x), Q(x)) and
/// beta_lambda  = sum_x min(P(x), Q(x)/lambda), both by exhaustive
/// enumeration. lambda = 0 and lambda = +inf are served by the support
/// sums (beta_0 = beta_bar, alpha_inf = alpha_bar) instead of infinity
/// arithmetic.
inline PRPoint pr_point_exact(const FactorizedSeqDist& p, const FactorizedSeqDist& q,
                              double lambda, double budget = 1e7) {
    if (std::isnan(lambda) || lambda < 0.0) {
        throw std::domain_error("pr_point_exact: lambda must be >= 0 or +inf");
    }
    if (lambda == 0.0 || std::isinf(lambda)) {
        const SupportPR s = support_pr(p, q, budget);
        if (lambda == 0.0) {
            return PRPoint{0.0, 0.0, s.beta_bar};
        }
        return PRPoint{std::numeric_limits<double>::infinity(), s.alpha_bar, 0.0};
    }
    PRPoint out;
    out.lambda = lambda;
    enumerate_pair(
        p, q,
        [&](double pp, double qq) {
            out.alpha += std::min(lambda * pp, qq);
            out.beta += std::min(pp, qq / lambda);
        },
        budget);
    return out;
}

/// One enumeration pass shared by all requested trade-off values.
inline PRCurve pr_curve_exact(const FactorizedSeqDist& p, const FactorizedSeqDist& q,
                              const std::vector<double>& lambdas, double budget = 1e7) {
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        if (!(lambdas[i] > 0.0) || std::isinf(lambdas[i])) {
            throw std::domain_error("pr_curve_exact: lambdas must be positive finite");
        }
        if (i > 0 && lambdas[i] < lambdas[i - 1]) {
            throw std::domain_error("pr_curve_exact: lambdas must be ascending");
        }
    }
    PRCurve curve;
    curve.points.resize(lambdas.size());
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        curve.points[i].lambda = lambdas[i];
    }
    enumerate_pair(
        p, q,
        [&](double pp, double qq) {
            for (std::size_t i = 0; i < lambdas.size(); ++i) {
                curve.points[i].alpha += std::min(lambdas[i] * pp, qq);
                curve.points[i].beta += std::min(pp, qq / lambdas[i]);
            }
        },
        budget);
    return curve;
}

/// Upper bound on alpha/beta from the target's support size and the
/// model's highest logit gap Z: alpha <= (|Supp(P)| / V^L) e^(Z L / t).
/// Raw values are kept alongside the [0, 1]-clamped reporting values.
struct SparsityBound {
    double alpha_raw = 0.0;
    double beta_raw = 0.0;
    double alpha_ub = 0.0;  // clamped to [0, 1]
    double beta_ub = 0.0;   // clamped to [0, 1]
};

inline SparsityBound sparsity_bound(double supp_size, std::size_t vocab_size, std::size_t length,
                                    double z, double t, double lambda) {
    if (!(supp_size >= 0.0) || supp_size > pow_size(vocab_size, length)) {
        throw std::domain_error("sparsity_bound: support size must lie in [0, V^L]");
    }
    if (!(z >= 0.0) || !(t > 0.0) || !(lambda > 0.0)) {
        throw std::domain_error("sparsity_bound: Z >= 0, t > 0, lambda > 0 required");
    }
    SparsityBound b;
    b.alpha_raw = supp_size / pow_size(vocab_size, length) *
                  std::exp(z * static_cast<double>(length) / t);
    b.beta_raw = b.alpha_raw / lambda;
    b.alpha_ub = std::min(1.0, b.alpha_raw);
    b.beta_ub = std::min(1.0, b.beta_raw);
    return b;
}

/// Highest difference between any two logits of the same context,
/// maximized over contexts: max - min per row, then max over rows.
inline double max_logit_gap(const std::vector<std::vector<double>>& logit_table) {
    if (logit_table.empty()) {
        throw std::domain_error("max_logit_gap: empty logit table");
    }
    double gap = 0.0;
    for (const auto& row : logit_table) {
        if (row.empty()) {
            throw std::domain_error("max_logit_gap: empty logit row");
        }
        const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
        gap = std::max(gap, *hi - *lo);
    }
    return gap;
}

}  // namespace prgen
