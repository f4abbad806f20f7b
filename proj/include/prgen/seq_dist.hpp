#pragma once

// Factorized sequence distributions over V^L: per-position conditional
// tables addressed by context, plus exact enumeration utilities shared by
// the PR metrics.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "prgen/categorical.hpp"

namespace prgen {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

/// Sequence distribution P(x) = prod_l P(x_l | x_{<l}) given by a
/// deterministic conditional table: same context, same Categorical.
struct FactorizedSeqDist {
    std::size_t vocab_size = 0;
    std::size_t length = 0;
    std::function<Categorical(std::span<const TokenId>)> conditional;

    Categorical conditional_checked(std::span<const TokenId> context) const {
        Categorical c = conditional(context);
        if (c.size() != vocab_size) {
            throw std::logic_error("FactorizedSeqDist: conditional returned " +
                                   std::to_string(c.size()) + " entries, expected " +
                                   std::to_string(vocab_size));
        }
        return c;
    }
};

/// Exact sequence probability, the product of the per-position conditionals.
inline double seq_prob(const FactorizedSeqDist& dist, std::span<const TokenId> x) {
    if (x.size() != dist.length) {
        throw std::domain_error("seq_prob: sequence length " + std::to_string(x.size()) +
                                " does not match L = " + std::to_string(dist.length));
    }
    double p = 1.0;
    for (std::size_t l = 0; l < dist.length; ++l) {
        if (x[l] >= dist.vocab_size) {
            throw std::domain_error("seq_prob: token id out of range");
        }
        const Categorical c = dist.conditional_checked(x.subspan(0, l));
        p *= c[x[l]];
        if (p == 0.0) {
            return 0.0;
        }
    }
    return p;
}

struct EnumerationBudgetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline double pow_size(std::size_t v, std::size_t l) {
    double n = 1.0;
    for (std::size_t i = 0; i < l; ++i) {
        n *= static_cast<double>(v);
    }
    return n;
}

inline void check_enumeration_budget(const FactorizedSeqDist& d, double budget) {
    const double outcomes = pow_size(d.vocab_size, d.length);
    if (outcomes > budget) {
        throw EnumerationBudgetError("enumeration budget exceeded: V^L = " +
                                     std::to_string(outcomes) + " outcomes > budget " +
                                     std::to_string(budget));
    }
}

namespace detail {

// Depth-first walk over all V^L sequences of two aligned models. Partial
// products are carried down the prefix tree so the cost is O(V^L)
// multiplications. Visit receives (p, q) for each complete sequence in
// lexicographic token order.
template <typename Visit>
void for_each_pair(const FactorizedSeqDist& p_dist, const FactorizedSeqDist& q_dist,
                   TokenSeq& prefix, double p_acc, double q_acc, Visit&& visit) {
    if (prefix.size() == p_dist.length) {
        visit(p_acc, q_acc);
        return;
    }
    const std::span<const TokenId> ctx(prefix.data(), prefix.size());
    const Categorical pc = p_dist.conditional_checked(ctx);
    const Categorical qc = q_dist.conditional_checked(ctx);
    for (TokenId tok = 0; tok < p_dist.vocab_size; ++tok) {
        prefix.push_back(tok);
        for_each_pair(p_dist, q_dist, prefix, p_acc * pc[tok], q_acc * qc[tok], visit);
        prefix.pop_back();
    }
}

}  // namespace detail

/// Enumerates (P(x), Q(x)) over every sequence x in V^L.
template <typename Visit>
void enumerate_pair(const FactorizedSeqDist& p, const FactorizedSeqDist& q, Visit&& visit,
                    double budget = 1e7) {
    if (p.vocab_size != q.vocab_size || p.length != q.length) {
        throw std::domain_error("enumerate_pair: P and Q must share V and L");
    }
    check_enumeration_budget(p, budget);
    TokenSeq prefix;
    prefix.reserve(p.length);
    detail::for_each_pair(p, q, prefix, 1.0, 1.0, visit);
}

}  // namespace prgen
