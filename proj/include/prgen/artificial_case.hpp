#pragma once

// Two-defect artificial sequence model admitting a closed-form PR-curve
// under temperature scaling. The target is uniform over the first K token
// ids at every position. The model matches it everywhere except at
// position l1 (the first rho*K acceptable ids carry excess mass a, the
// remaining (1-rho)*K carry b = mu*(1-a) with mu = rho/(1-rho)) and at
// position l2 (mass epsilon leaks uniformly off support).

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "prgen/pr_metrics.hpp"
#include "prgen/seq_dist.hpp"

namespace prgen::artcase {

struct ArtCaseParams {
    std::size_t vocab_size = 0;  // V
    std::size_t supp_size = 0;   // K acceptable ids per position
    std::size_t length = 0;      // L
    std::size_t l1 = 1;          // 1-based defect positions, distinct
    std::size_t l2 = 2;
    double rho = 0.5;      // proportion of over-represented acceptable ids
    double a = 1.0;        // mass on the first rho*K ids at l1
    double epsilon = 0.0;  // off-support mass at l2

    double mu() const { return rho / (1.0 - rho); }
    double b() const { return mu() * (1.0 - a); }
    std::size_t rho_k() const { return static_cast<std::size_t>(std::llround(rho * static_cast<double>(supp_size))); }

    void validate() const {
        if (vocab_size == 0 || supp_size == 0 || supp_size > vocab_size) {
            throw std::domain_error("ArtCaseParams: need 1 <= K <= V");
        }
        if (length < 2 || l1 == l2 || l1 < 1 || l2 < 1 || l1 > length || l2 > length) {
            throw std::domain_error("ArtCaseParams: l1, l2 must be distinct positions in [1, L]");
        }
        if (!(rho > 0.0) || !(rho < 1.0)) {
            throw std::domain_error("ArtCaseParams: rho must lie in (0, 1)");
        }
        const double k = static_cast<double>(supp_size);
        const double rk = rho * k;
        // Proofs assume an exact partition; non-integer rho*K is rejected,
        // not rounded.
        if (std::abs(rk - std::round(rk)) > 1e-9 || std::round(rk) < 1.0 ||
            std::round(k - rk) < 1.0) {
            throw std::domain_error("ArtCaseParams: rho*K and (1-rho)*K must be integers >= 1");
        }
        if (!(a > 0.0) || a > 1.0) {
            throw std::domain_error("ArtCaseParams: a must lie in (0, 1]");
        }
        if (a < rho) {
            throw std::domain_error("ArtCaseParams: a >= rho required so the first rho*K ids are the over-represented ones");
        }
        if (epsilon < 0.0 || epsilon > 0.5) {
            throw std::domain_error("ArtCaseParams: epsilon must lie in [0, 1/2]");
        }
        if (epsilon > 0.0 && supp_size == vocab_size) {
            throw std::domain_error("ArtCaseParams: epsilon > 0 needs V > K");
        }
    }
};

/// Target: uniform 1/K over ids {0..K-1} at every position.
inline FactorizedSeqDist build_p(const ArtCaseParams& params) {
    params.validate();
    std::vector<double> row(params.vocab_size, 0.0);
    for (std::size_t i = 0; i < params.supp_size; ++i) {
        row[i] = 1.0 / static_cast<double>(params.supp_size);
    }
    const Categorical uniform_k(row);
    return FactorizedSeqDist{params.vocab_size, params.length,
                             [uniform_k](std::span<const TokenId>) { return uniform_k; }};
}

/// Model with the two defect positions described above.
inline FactorizedSeqDist build_q(const ArtCaseParams& params) {
    params.validate();
    const std::size_t v = params.vocab_size;
    const std::size_t k = params.supp_size;
    const std::size_t rk = params.rho_k();

    std::vector<double> base(v, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        base[i] = 1.0 / static_cast<double>(k);
    }

    std::vector<double> at_l1(v, 0.0);
    for (std::size_t i = 0; i < rk; ++i) {
        at_l1[i] = params.a / static_cast<double>(rk);
    }
    for (std::size_t i = rk; i < k; ++i) {
        at_l1[i] = params.b() / static_cast<double>(rk);
    }

    std::vector<double> at_l2(v, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        at_l2[i] = (1.0 - params.epsilon) / static_cast<double>(k);
    }
    for (std::size_t i = k; i < v; ++i) {
        at_l2[i] = params.epsilon / static_cast<double>(v - k);
    }

    const Categorical c_base = Categorical::normalized(base);
    const Categorical c_l1 = Categorical::normalized(at_l1);
    const Categorical c_l2 = Categorical::normalized(at_l2);
    const std::size_t pos1 = params.l1 - 1;
    const std::size_t pos2 = params.l2 - 1;
    return FactorizedSeqDist{v, params.length,
                             [c_base, c_l1, c_l2, pos1, pos2](std::span<const TokenId> ctx) {
                                 if (ctx.size() == pos1) return c_l1;
                                 if (ctx.size() == pos2) return c_l2;
                                 return c_base;
                             }};
}

/// Applies temperature position-wise, which is exactly how the closed form
/// tempers the sequence model.
inline FactorizedSeqDist temper_each(const FactorizedSeqDist& d, double t) {
    return FactorizedSeqDist{d.vocab_size, d.length, [d, t](std::span<const TokenId> ctx) {
                                 return temper(d.conditional(ctx), t);
                             }};
}

namespace detail {

// f_{gamma,nu}(tau) = (1-gamma)^tau / ((1-gamma)^tau + nu^(1-tau) gamma^tau),
// evaluated as a logistic in log space so extreme tau neither overflows
// nor underflows.
inline double regime_factor(double gamma, double nu, double tau) {
    if (gamma <= 0.0) return 1.0;
    if (gamma >= 1.0) return 0.0;
    if (nu <= 0.0) return 1.0;
    const double s = (1.0 - tau) * std::log(nu) + tau * (std::log(gamma) - std::log1p(-gamma));
    if (s > 700.0) return 0.0;
    return 1.0 / (1.0 + std::exp(s));
}

}  // namespace detail

struct RegimeBoundaries {
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    double t = 1.0;
    bool degenerate = false;  // a = 1 leaves no under-represented ids
};

/// Trade-off values separating the three closed-form regimes at
/// temperature t.
inline RegimeBoundaries regime_boundaries(const ArtCaseParams& params, double t) {
    params.validate();
    if (!(t > 0.0)) {
        throw std::domain_error("regime_boundaries: t must be positive");
    }
    const double tau = 1.0 / t;
    const double mu = params.mu();
    const double nu_vk = static_cast<double>(params.vocab_size) / static_cast<double>(params.supp_size) - 1.0;
    const double f_noise = detail::regime_factor(params.epsilon, nu_vk, tau);
    RegimeBoundaries rb;
    rb.t = t;
    rb.degenerate = params.a >= 1.0;
    rb.lambda_min = detail::regime_factor(params.a, mu, tau) * f_noise / (1.0 - params.rho);
    rb.lambda_max = detail::regime_factor(1.0 - params.a, 1.0 / mu, tau) * f_noise / params.rho;
    return rb;
}

/// Piecewise closed form of the PR-curve at temperature t:
///   lambda >= lambda_max: alpha = f_eps(t), beta = alpha / lambda
///   lambda in [lambda_min, lambda_max]: alpha = rho*lambda + (1-rho)*lambda_min
///   lambda <= lambda_min: alpha = lambda, beta = 1
inline PRPoint pr_closed_form(const ArtCaseParams& params, double t, double lambda) {
    if (!(lambda > 0.0) || std::isinf(lambda)) {
        throw std::domain_error("pr_closed_form: lambda must be positive finite");
    }
    const RegimeBoundaries rb = regime_boundaries(params, t);
    const double tau = 1.0 / t;
    const double nu_vk = static_cast<double>(params.vocab_size) / static_cast<double>(params.supp_size) - 1.0;
    PRPoint pt;
    pt.lambda = lambda;
    if (lambda >= rb.lambda_max) {
        pt.alpha = detail::regime_factor(params.epsilon, nu_vk, tau);
        pt.beta = pt.alpha / lambda;
    } else if (lambda >= rb.lambda_min) {
        pt.alpha = params.rho * lambda + (1.0 - params.rho) * rb.lambda_min;
        pt.beta = pt.alpha / lambda;
    } else {
        pt.alpha = lambda;
        pt.beta = 1.0;
    }
    return pt;
}

struct Epsilon0 {
    double value = 0.0;
    bool degenerate = false;  // b = 0
};

/// Noise threshold from the rate-of-change analysis. For epsilon below the
/// threshold the middle-regime factor (equivalently lambda_min) eventually
/// decreases with t; above it, it keeps increasing.
inline Epsilon0 epsilon0(const ArtCaseParams& params) {
    params.validate();
    Epsilon0 out;
    const double b = params.b();
    if (b <= 0.0) {
        out.degenerate = true;
        return out;
    }
    const double nu = static_cast<double>(params.vocab_size) / static_cast<double>(params.supp_size) - 1.0;
    const double kv = static_cast<double>(params.supp_size) / static_cast<double>(params.vocab_size);
    const double expo = params.rho / (1.0 - kv);
    out.value = nu / (nu + std::pow(params.a / b, expo));
    return out;
}

/// Recall as a function of temperature at a fixed trade-off, via the
/// closed form. Used to draw the rise-then-fall curve.
inline std::vector<std::pair<double, double>> recall_vs_temperature(
    const ArtCaseParams& params, double lambda, const std::vector<double>& t_grid) {
    std::vector<std::pair<double, double>> out;
    out.reserve(t_grid.size());
    for (double t : t_grid) {
        out.emplace_back(t, pr_closed_form(params, t, lambda).beta);
    }
    return out;
}

/// Temperature where the middle-regime factor (lambda_min) peaks, located
/// by bisection on its finite differences over [t_lo, t_hi]. There is no
/// closed form for this point; it exists when epsilon < epsilon0 and the
/// peak falls inside the bracket.
inline std::optional<double> lambda_min_peak_t(const ArtCaseParams& params, double t_lo = 1e-3,
                                               double t_hi = 1e3, double tol = 1e-8) {
    const double h = 1e-6;
    const auto slope = [&](double t) {
        return regime_boundaries(params, t * (1.0 + h)).lambda_min -
               regime_boundaries(params, t * (1.0 - h)).lambda_min;
    };
    double lo = t_lo, hi = t_hi;
    if (!(slope(lo) > 0.0) || !(slope(hi) < 0.0)) {
        return std::nullopt;  // no interior peak in the bracket
    }
    while (hi - lo > tol * lo) {
        const double mid = std::sqrt(lo * hi);
        (slope(mid) > 0.0 ? lo : hi) = mid;
    }
    return std::sqrt(lo * hi);
}

}  // namespace prgen::artcase
