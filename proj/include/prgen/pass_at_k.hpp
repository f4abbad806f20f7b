#pragma once

// Unbiased pass@k: probability that at least one of k draws from n samples
// (c of them correct) is correct, 1 - C(n-c, k) / C(n, k).

#include <cstdint>
#include <stdexcept>

namespace prgen {

namespace detail {

// C(n, k) via the integral multiplicative form; every intermediate value
// is an exact binomial, so no rounding occurs while it fits 64 bits.
// Returns 0 on overflow.
inline std::uint64_t binomial_u64(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    std::uint64_t c = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        const std::uint64_t num = n - k + i;
        // c * num / i is integral; detect overflow of the product.
        if (c > UINT64_MAX / num) return 0;
        c = c * num / i;
    }
    return c;
}

}  // namespace detail

inline double pass_at_k(std::uint64_t n, std::uint64_t c, std::uint64_t k) {
    if (n == 0 || k == 0 || k > n) {
        throw std::domain_error("pass_at_k: need n >= 1 and 1 <= k <= n");
    }
    if (c > n) {
        throw std::domain_error("pass_at_k: c must lie in [0, n]");
    }
    if (c == 0) return 0.0;
    if (c > n - k) return 1.0;
    // Exact path while the binomials fit; matches exhaustive subset
    // averaging bit for bit.
    const std::uint64_t denom = detail::binomial_u64(n, k);
    if (denom != 0) {
        const std::uint64_t num = detail::binomial_u64(n - c, k);
        return static_cast<double>(denom - num) / static_cast<double>(denom);
    }
    // Stable product form for large n: C(n-c,k)/C(n,k) = prod (1 - k/i).
    double ratio = 1.0;
    for (std::uint64_t i = n - c + 1; i <= n; ++i) {
        ratio *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
    }
    return 1.0 - ratio;
}

}  // namespace prgen
