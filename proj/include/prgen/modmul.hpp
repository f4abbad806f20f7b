#pragma once

// Integer multiplication modulo 97: skewed dataset generation, the exact
// reference distribution, format/arithmetic checking of generations, and
// Precision/Recall evaluation by enumeration of the answer space.
//
// Token inventory: digits 0..9 are ids 0..9, the times sign is id 10 and
// the equals sign is id 11. Sequences render as  a1 a2 x b1 b2 = c1 c2
// with operands and result always two digit tokens (leading zeros kept),
// so V = 12 and L = 8.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "prgen/seq_dist.hpp"
#include "prgen/transformer.hpp"

namespace prgen::modmul {

constexpr std::size_t kVocab = 12;
constexpr std::size_t kSeqLen = 8;
constexpr TokenId kTimes = 10;
constexpr TokenId kEquals = 11;
constexpr std::uint32_t kModulus = 97;
constexpr std::size_t kPairSpace = 99 * 99;  // recall denominator

struct MulSample {
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    std::uint32_t c = 0;  // (a * b) mod 97
    TokenSeq tokens;
};

/// Sampling proportion of the first digit of operand a falling in the
/// first five digits {0..4} rather than the last five.
struct SkewSpec {
    double b_level = 1.0;

    void validate() const {
        if (!(b_level > 0.0) || b_level > 1.0) {
            throw std::domain_error("SkewSpec: b_level must lie in (0, 1]");
        }
    }
};

inline TokenSeq render_tokens(std::uint32_t a, std::uint32_t b) {
    if (a > 99 || b > 99) {
        throw std::domain_error("render_tokens: operands must have two digits");
    }
    const std::uint32_t c = (a * b) % kModulus;
    return TokenSeq{a / 10, a % 10, kTimes, b / 10, b % 10, kEquals, c / 10, c % 10};
}

inline std::string render_text(const TokenSeq& tokens) {
    std::string out;
    for (TokenId t : tokens) {
        if (t <= 9) {
            out.push_back(static_cast<char>('0' + t));
        } else if (t == kTimes) {
            out.push_back('x');
        } else {
            out.push_back('=');
        }
    }
    return out;
}

inline TokenSeq parse_text(const std::string& line) {
    TokenSeq out;
    out.reserve(line.size());
    for (char ch : line) {
        if (ch >= '0' && ch <= '9') {
            out.push_back(static_cast<TokenId>(ch - '0'));
        } else if (ch == 'x') {
            out.push_back(kTimes);
        } else if (ch == '=') {
            out.push_back(kEquals);
        } else {
            throw std::domain_error("parse_text: unexpected character in line");
        }
    }
    return out;
}

enum class ParseStatus { Malformed, Incorrect, Correct };

struct ParseResult {
    ParseStatus status = ParseStatus::Malformed;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
};

/// Format check against the fixed grammar, then the arithmetic check.
/// Operands outside [1, 99] are counted as incorrect: the reference never
/// produces them and the unique-pair space is [1,99] x [1,99].
inline ParseResult parse_and_check(const TokenSeq& tokens) {
    if (tokens.size() != kSeqLen) {
        return {};
    }
    const std::array<bool, kSeqLen> digit_pos{true, true, false, true, true, false, true, true};
    for (std::size_t i = 0; i < kSeqLen; ++i) {
        if (digit_pos[i] ? tokens[i] > 9
                         : tokens[i] != (i == 2 ? kTimes : kEquals)) {
            return {};
        }
    }
    ParseResult out;
    out.a = tokens[0] * 10 + tokens[1];
    out.b = tokens[3] * 10 + tokens[4];
    const std::uint32_t c = tokens[6] * 10 + tokens[7];
    const bool in_range = out.a >= 1 && out.b >= 1;
    out.status = in_range && (out.a * out.b) % kModulus == c ? ParseStatus::Correct
                                                             : ParseStatus::Incorrect;
    return out;
}

/// n i.i.d. samples: the first digit of operand a follows the skew, all
/// other digits are uniform over their valid range, b is uniform over
/// [1, 99] and c is computed exactly.
inline std::vector<MulSample> gen_dataset(std::size_t n, const SkewSpec& skew, Rng& rng) {
    skew.validate();
    if (n == 0) {
        throw std::domain_error("gen_dataset: n must be positive");
    }
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::uniform_int_distribution<std::uint32_t> low_digit(0, 4);
    std::uniform_int_distribution<std::uint32_t> high_digit(5, 9);
    std::uniform_int_distribution<std::uint32_t> any_digit(0, 9);
    std::uniform_int_distribution<std::uint32_t> nonzero_digit(1, 9);
    std::uniform_int_distribution<std::uint32_t> operand(1, 99);

    std::vector<MulSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t tens =
            uni(rng) < skew.b_level ? low_digit(rng) : high_digit(rng);
        const std::uint32_t ones = tens == 0 ? nonzero_digit(rng) : any_digit(rng);
        MulSample s;
        s.a = tens * 10 + ones;
        s.b = operand(rng);
        s.c = (s.a * s.b) % kModulus;
        s.tokens = render_tokens(s.a, s.b);
        out.push_back(std::move(s));
    }
    return out;
}

namespace detail {

inline Categorical point_mass(TokenId id) {
    std::vector<double> p(kVocab, 0.0);
    p[id] = 1.0;
    return Categorical(std::move(p));
}

// Conditional of the tens digit of an operand drawn uniformly from
// [1, 99]: digit 0 carries 9 of the 99 values.
inline Categorical uniform_tens() {
    std::vector<double> p(kVocab, 0.0);
    p[0] = 9.0 / 99.0;
    for (TokenId d = 1; d <= 9; ++d) {
        p[d] = 10.0 / 99.0;
    }
    return Categorical(std::move(p));
}

// Tens digit under the skew: mass b_level split over {0..4}, the rest
// over {5..9}.
inline Categorical skewed_tens(double b_level) {
    std::vector<double> p(kVocab, 0.0);
    for (TokenId d = 0; d <= 4; ++d) {
        p[d] = b_level / 5.0;
    }
    for (TokenId d = 5; d <= 9; ++d) {
        p[d] = (1.0 - b_level) / 5.0;
    }
    return Categorical(std::move(p));
}

inline Categorical ones_given_tens(TokenId tens) {
    std::vector<double> p(kVocab, 0.0);
    if (tens == 0) {
        for (TokenId d = 1; d <= 9; ++d) {
            p[d] = 1.0 / 9.0;
        }
    } else {
        for (TokenId d = 0; d <= 9; ++d) {
            p[d] = 1.0 / 10.0;
        }
    }
    return Categorical(std::move(p));
}

inline FactorizedSeqDist make_task_dist(Categorical a_tens) {
    auto a_tens_ptr = std::make_shared<Categorical>(std::move(a_tens));
    return FactorizedSeqDist{
        kVocab, kSeqLen, [a_tens_ptr](std::span<const TokenId> ctx) -> Categorical {
            switch (ctx.size()) {
                case 0: return *a_tens_ptr;
                case 1: return ones_given_tens(ctx[0]);
                case 2: return point_mass(kTimes);
                case 3: return uniform_tens();
                case 4: return ones_given_tens(ctx[3]);
                case 5: return point_mass(kEquals);
                case 6:
                case 7: {
                    const std::uint32_t a = std::min<std::uint32_t>(ctx[0], 9) * 10 +
                                            std::min<std::uint32_t>(ctx[1], 9);
                    const std::uint32_t b = std::min<std::uint32_t>(ctx[3], 9) * 10 +
                                            std::min<std::uint32_t>(ctx[4], 9);
                    const std::uint32_t c = (a * b) % kModulus;
                    return point_mass(ctx.size() == 6 ? c / 10 : c % 10);
                }
                default:
                    throw std::domain_error("modmul conditional: context too long");
            }
        }};
}

}  // namespace detail

/// Exact reference distribution: operands uniform over [1, 99], result
/// deterministic.
inline FactorizedSeqDist reference_dist() {
    return detail::make_task_dist(detail::uniform_tens());
}

/// Distribution the skewed training data is drawn from.
inline FactorizedSeqDist train_dist(const SkewSpec& skew) {
    skew.validate();
    return detail::make_task_dist(detail::skewed_tens(skew.b_level));
}

struct EvalReport {
    std::size_t n_samples = 0;
    std::size_t n_wellformed = 0;
    std::size_t n_correct = 0;
    std::size_t n_unique = 0;
    double precision = 0.0;
    double recall = 0.0;
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

/// Draws n full sequences from the model and scores them: precision is
/// the fraction of arithmetically correct generations, recall the number
/// of distinct correct (a, b) pairs over the 99 x 99 pair space. Samples
/// fan out across independent seeded streams, so the aggregate is
/// independent of the thread count.
template <typename S>
EvalReport eval_pr(const nn::Model<S>& model, std::size_t n, double t, nn::Decoding decoding,
                   std::uint64_t seed, std::size_t n_threads = 0,
                   std::size_t recall_denominator = kPairSpace) {
    if (model.cfg.vocab_size != kVocab || model.cfg.seq_len != kSeqLen) {
        throw std::domain_error("eval_pr: model shape does not match the task");
    }
    if (n == 0) {
        throw std::domain_error("eval_pr: n must be positive");
    }
    std::size_t threads = n_threads != 0 ? n_threads : std::thread::hardware_concurrency();
    threads = std::max<std::size_t>(1, std::min<std::size_t>(threads, 16));

    struct Shard {
        std::size_t wellformed = 0;
        std::size_t correct = 0;
        std::set<std::pair<std::uint32_t, std::uint32_t>> unique;
    };
    std::vector<Shard> shards(threads);

    auto worker = [&](std::size_t tid) {
        nn::Workspace<S> ws(model.cfg);
        Shard& sh = shards[tid];
        for (std::size_t i = tid; i < n; i += threads) {
            Rng rng(derive_seed(seed, i));
            const TokenSeq sample = nn::generate(model, {}, t, decoding, rng, &ws);
            const ParseResult pr = parse_and_check(sample);
            if (pr.status != ParseStatus::Malformed) {
                ++sh.wellformed;
            }
            if (pr.status == ParseStatus::Correct) {
                ++sh.correct;
                sh.unique.emplace(pr.a, pr.b);
            }
        }
    };
    nn::run_workers(worker, threads);

    EvalReport rep;
    rep.n_samples = n;
    rep.temperature = t;
    rep.seed = seed;
    std::set<std::pair<std::uint32_t, std::uint32_t>> unique;
    for (const Shard& sh : shards) {
        rep.n_wellformed += sh.wellformed;
        rep.n_correct += sh.correct;
        unique.insert(sh.unique.begin(), sh.unique.end());
    }
    rep.n_unique = unique.size();
    rep.precision = static_cast<double>(rep.n_correct) / static_cast<double>(n);
    rep.recall = static_cast<double>(rep.n_unique) / static_cast<double>(recall_denominator);
    return rep;
}

/// eval_pr at each grid temperature with per-point derived seeds.
template <typename S>
std::vector<EvalReport> temperature_sweep(const nn::Model<S>& model,
                                          const std::vector<double>& t_grid, std::size_t n,
                                          nn::Decoding decoding, std::uint64_t seed,
                                          std::size_t n_threads = 0,
                                          std::size_t recall_denominator = kPairSpace) {
    std::vector<EvalReport> out;
    out.reserve(t_grid.size());
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        out.push_back(eval_pr(model, n, t_grid[i], decoding, derive_seed(seed, 1000 + i),
                              n_threads, recall_denominator));
    }
    return out;
}

struct SparsityProbe {
    double geometric_mean = 0.0;  // of the per-sample max support size
    // histogram[l][k] = number of samples whose position-l conditional
    // needs k tokens to cover the mass threshold
    std::vector<std::map<std::size_t, std::size_t>> histogram;
};

/// Per sample and position: minimal number of top tokens covering mass at
/// least p of the conditional; the per-sample maximum is aggregated by
/// geometric mean.
inline SparsityProbe sparsity_probe(const FactorizedSeqDist& dist,
                                    const std::vector<TokenSeq>& samples, double p) {
    if (!(p > 0.0) || !(p < 1.0)) {
        throw std::domain_error("sparsity_probe: p must lie in (0, 1)");
    }
    if (samples.empty()) {
        throw std::domain_error("sparsity_probe: no samples");
    }
    SparsityProbe probe;
    probe.histogram.assign(dist.length, {});
    double log_sum = 0.0;
    std::vector<double> probs;
    for (const TokenSeq& x : samples) {
        if (x.size() != dist.length) {
            throw std::domain_error("sparsity_probe: sample length mismatch");
        }
        std::size_t k_max = 1;
        for (std::size_t l = 0; l < dist.length; ++l) {
            const Categorical cond =
                dist.conditional_checked(std::span<const TokenId>(x.data(), l));
            probs.assign(cond.probs().begin(), cond.probs().end());
            std::sort(probs.begin(), probs.end(), std::greater<>());
            double cum = 0.0;
            std::size_t k = probs.size();
            for (std::size_t i = 0; i < probs.size(); ++i) {
                cum += probs[i];
                // tolerate accumulation noise at exact-coverage boundaries
                if (cum >= p - 1e-12) {
                    k = i + 1;
                    break;
                }
            }
            ++probe.histogram[l][k];
            k_max = std::max(k_max, k);
        }
        log_sum += std::log(static_cast<double>(k_max));
    }
    probe.geometric_mean = std::exp(log_sum / static_cast<double>(samples.size()));
    return probe;
}

}  // namespace prgen::modmul
