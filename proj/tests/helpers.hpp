#pragma once

// Shared generators for property-style tests.

#include <memory>
#include <random>
#include <vector>

#include "prgen/categorical.hpp"
#include "prgen/seq_dist.hpp"

namespace prgen::testing {

// Random categorical with optional zero entries.
inline Categorical random_categorical(Rng& rng, std::size_t vocab, double zero_frac = 0.0) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> w(vocab, 0.0);
    bool any = false;
    for (std::size_t i = 0; i < vocab; ++i) {
        if (uni(rng) >= zero_frac) {
            w[i] = 0.05 + uni(rng);
            any = true;
        }
    }
    if (!any) {
        w[std::uniform_int_distribution<std::size_t>(0, vocab - 1)(rng)] = 1.0;
    }
    return Categorical::normalized(std::move(w));
}

// Random factorized model over V^L. Conditional tables are materialized up
// front, keyed by the context's mixed-radix index, so lookups are
// deterministic.
inline FactorizedSeqDist random_seq_dist(Rng& rng, std::size_t vocab, std::size_t len,
                                         double zero_frac = 0.0) {
    std::size_t n_contexts = 0;
    std::size_t pow = 1;
    for (std::size_t l = 0; l < len; ++l) {
        n_contexts += pow;
        pow *= vocab;
    }
    auto tables = std::make_shared<std::vector<Categorical>>();
    tables->reserve(n_contexts);
    for (std::size_t i = 0; i < n_contexts; ++i) {
        tables->push_back(random_categorical(rng, vocab, zero_frac));
    }
    // Contexts of length l start at offset sum_{j<l} V^j.
    return FactorizedSeqDist{vocab, len, [tables, vocab](std::span<const TokenId> ctx) {
                                 std::size_t idx = 0;
                                 std::size_t offset = 0;
                                 std::size_t p = 1;
                                 for (std::size_t l = 0; l < ctx.size(); ++l) {
                                     idx = idx * vocab + ctx[l];
                                     offset += p;
                                     p *= vocab;
                                 }
                                 return (*tables)[offset + idx];
                             }};
}

}  // namespace prgen::testing
