#pragma once

// Categorical distributions over a finite token vocabulary: temperature
// scaling, top-p truncation, entropy, support and sampling. Values are
// immutable after construction and safe to share across threads; random
// streams are caller-owned.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace prgen {

using Rng = std::mt19937_64;

/// splitmix64 mix of a base seed and a stream index; used wherever
/// independent deterministic streams are derived from one seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Probability vector over a vocabulary of V tokens.
/// Invariants: entries >= 0 and sum to 1 within 1e-12.
class Categorical {
public:
    explicit Categorical(std::vector<double> probs) : probs_(std::move(probs)) {
        if (probs_.empty()) {
            throw std::invalid_argument("Categorical: empty probability vector");
        }
        double sum = 0.0;
        for (double p : probs_) {
            if (!(p >= 0.0) || !std::isfinite(p)) {
                throw std::invalid_argument("Categorical: entries must be finite and >= 0");
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-12) {
            throw std::invalid_argument("Categorical: entries sum to " + std::to_string(sum) +
                                        ", expected 1 within 1e-12");
        }
    }

    /// Builds a Categorical from non-negative weights by normalizing them.
    static Categorical normalized(std::vector<double> weights) {
        double sum = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) {
                throw std::invalid_argument("Categorical: weights must be finite and >= 0");
            }
            sum += w;
        }
        if (sum <= 0.0) {
            throw std::invalid_argument("Categorical: weights sum to zero");
        }
        for (double& w : weights) {
            w /= sum;
        }
        return Categorical(std::move(weights));
    }

    std::size_t size() const { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    const std::vector<double>& probs() const { return probs_; }

private:
    std::vector<double> probs_;
};

/// Temperature scaling: returns (d_i^(1/t)) / sum_j d_j^(1/t).
///
/// Computed in log space so that t well below 1 does not underflow. Zero
/// entries stay exactly zero for every finite t, and t = 1 returns the
/// input unchanged.
inline Categorical temper(const Categorical& d, double t) {
    if (!(t > 0.0) || !std::isfinite(t)) {
        throw std::domain_error("temper: temperature must be a positive finite real");
    }
    if (t == 1.0) {
        return d;
    }
    const std::size_t n = d.size();
    std::vector<double> logs(n, -std::numeric_limits<double>::infinity());
    double max_log = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (d[i] > 0.0) {
            logs[i] = std::log(d[i]) / t;
            max_log = std::max(max_log, logs[i]);
        }
    }
    std::vector<double> out(n, 0.0);
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (d[i] > 0.0) {
            out[i] = std::exp(logs[i] - max_log);
            norm += out[i];
        }
    }
    for (double& p : out) {
        p /= norm;
    }
    return Categorical(std::move(out));
}

/// Shannon entropy in nats, with 0 * log 0 = 0.
inline double entropy(const Categorical& d) {
    double h = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] > 0.0) {
            h -= d[i] * std::log(d[i]);
        }
    }
    return h;
}

/// Nucleus truncation: keep the minimal prefix of tokens, sorted by
/// descending probability, whose cumulative mass reaches p; zero the rest
/// and renormalize. Ties are broken by lower token id first.
inline Categorical top_p(const Categorical& d, double p) {
    if (!(p > 0.0) || p > 1.0) {
        throw std::domain_error("top_p: p must lie in (0, 1]");
    }
    const std::size_t n = d.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (d[a] != d[b]) return d[a] > d[b];
        return a < b;
    });
    std::vector<double> kept(n, 0.0);
    double cum = 0.0;
    double kept_mass = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t id = order[r];
        cum += d[id];
        kept[id] = d[id];
        kept_mass += d[id];
        if (cum >= p) {
            break;
        }
    }
    for (double& v : kept) {
        v /= kept_mass;
    }
    return Categorical(std::move(kept));
}

/// Token ids with probability strictly above tol (default 0).
inline std::set<std::size_t> support(const Categorical& d, double tol = 0.0) {
    std::set<std::size_t> ids;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] > tol) {
            ids.insert(i);
        }
    }
    return ids;
}

/// Draws one token id by inverse CDF on a caller-owned stream.
inline std::size_t sample(const Categorical& d, Rng& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double u = uni(rng);
    double cum = 0.0;
    std::size_t last_positive = 0;
    bool seen_positive = false;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] > 0.0) {
            last_positive = i;
            seen_positive = true;
        }
        cum += d[i];
        if (u < cum) {
            return d[i] > 0.0 ? i : last_positive;
        }
    }
    // Rounding can leave cum marginally below 1; fall back to the last
    // positive-mass token.
    return seen_positive ? last_positive : d.size() - 1;
}

inline std::size_t argmax_lowest_id(const Categorical& d) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.size(); ++i) {
        if (d[i] > d[best]) {
            best = i;
        }
    }
    return best;
}

}  // namespace prgen
