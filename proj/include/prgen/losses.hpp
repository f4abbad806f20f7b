#pragma once

// Per-token weight computation for the six reweighted-NLL training
// methods, the rolling quantile machinery that drives the sequence-level
// gates, and the weighted NLL reduction itself. Weights are plain values:
// they never carry gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace prgen::losses {

enum class LossMethod { Nll, Trunc, TruncR, CDiv, TaiLr, LambdaPR };

inline const char* method_name(LossMethod m) {
    switch (m) {
        case LossMethod::Nll: return "nll";
        case LossMethod::Trunc: return "trunc";
        case LossMethod::TruncR: return "truncr";
        case LossMethod::CDiv: return "cdiv";
        case LossMethod::TaiLr: return "tailr";
        case LossMethod::LambdaPR: return "lambda_pr";
    }
    return "?";
}

/// Which method to train with plus its hyperparameters. Only the fields
/// relevant to the method are read.
struct LossSpec {
    LossMethod method = LossMethod::Nll;
    double delta_frac = 0.25;  // Delta, Trunc/TruncR dropped fraction
    double alpha = 0.5;        // c-Div order; 0.5 recovers GOLD, 1 recovers NLL
    double gamma = 1e-5;       // proxy mixing weight
    double lambda = 1.0;       // PR trade-off target, lambda <= 1
    std::size_t seq_len = 0;   // L, for the lambda-PR position discount

    void validate() const {
        switch (method) {
            case LossMethod::Trunc:
            case LossMethod::TruncR:
                if (!(delta_frac > 0.0) || !(delta_frac < 1.0)) {
                    throw std::domain_error("LossSpec: delta_frac must lie in (0, 1)");
                }
                break;
            case LossMethod::CDiv:
                if (!(alpha > 0.0)) {
                    throw std::domain_error("LossSpec: alpha must be positive");
                }
                break;
            case LossMethod::TaiLr:
                if (!(gamma > 0.0) || gamma > 1.0) {
                    throw std::domain_error("LossSpec: gamma must lie in (0, 1]");
                }
                break;
            case LossMethod::LambdaPR:
                if (!(gamma > 0.0) || gamma > 1.0) {
                    throw std::domain_error("LossSpec: gamma must lie in (0, 1]");
                }
                if (!(lambda > 0.0) || lambda > 1.0) {
                    throw std::domain_error("LossSpec: lambda must lie in (0, 1]");
                }
                if (seq_len == 0) {
                    throw std::domain_error("LossSpec: lambda-PR needs seq_len");
                }
                break;
            case LossMethod::Nll:
                break;
        }
    }
};

/// Rolling list of sequence log-likelihoods; at most `capacity` entries,
/// oldest evicted first.
class QuantileBuffer {
public:
    explicit QuantileBuffer(std::size_t capacity = 2048) : capacity_(capacity) {
        if (capacity_ == 0) {
            throw std::invalid_argument("QuantileBuffer: capacity must be positive");
        }
        values_.reserve(capacity_);
    }

    void push(double v) {
        if (values_.size() < capacity_) {
            values_.push_back(v);
        } else {
            values_[head_] = v;
            head_ = (head_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return values_.size(); }
    std::size_t capacity() const { return capacity_; }
    const std::vector<double>& values() const { return values_; }

private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<double> values_;
};

enum class QuantileSide { Highest, Lowest };

/// Order statistic at 1-based index ceil(frac * n) from the requested
/// side, so that a fraction `frac` of the buffered values lies on that
/// side of (and including) the returned threshold.
inline double quantile_threshold(const QuantileBuffer& buf, double frac, QuantileSide side) {
    if (buf.size() == 0) {
        throw std::logic_error("quantile_threshold: empty buffer");
    }
    if (!(frac > 0.0) || !(frac < 1.0)) {
        throw std::domain_error("quantile_threshold: frac must lie in (0, 1)");
    }
    const std::size_t n = buf.size();
    std::size_t idx = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n)));
    idx = std::clamp<std::size_t>(idx, 1, n);
    std::vector<double> work = buf.values();
    if (side == QuantileSide::Highest) {
        std::nth_element(work.begin(), work.begin() + (idx - 1), work.end(), std::greater<>());
    } else {
        std::nth_element(work.begin(), work.begin() + (idx - 1), work.end());
    }
    return work[idx - 1];
}

/// Keep the sequence when its log-likelihood reaches the high-side
/// threshold; boundary included.
inline double weights_trunc(double seq_loglik, double delta_thresh) {
    return seq_loglik >= delta_thresh ? 1.0 : 0.0;
}

/// Mirror gate: keep the sequence when its log-likelihood is at or below
/// the low-side threshold.
inline double weights_truncr(double seq_loglik, double delta_thresh) {
    return seq_loglik <= delta_thresh ? 1.0 : 0.0;
}

constexpr double kTokenProbFloor = 1e-12;

/// q^(1-alpha). alpha = 0.5 is GOLD, alpha = 1 recovers NLL. Probabilities
/// at or below the floor are clamped so alpha > 1 cannot produce an
/// infinite weight.
inline double weights_cdiv(double token_prob, double alpha) {
    if (token_prob <= 0.0 && alpha < 1.0) {
        return 0.0;
    }
    return std::pow(std::max(token_prob, kTokenProbFloor), 1.0 - alpha);
}

/// q / (gamma + (1-gamma) q), strictly increasing in q.
inline double weights_tailr(double token_prob, double gamma) {
    return token_prob / (gamma + (1.0 - gamma) * token_prob);
}

/// Gate threshold for lambda-PR at per-position rate r = lambda^(1/L).
inline double lambda_pr_gate(double lambda_root, double gamma) {
    const double denom = 1.0 - (1.0 - gamma) * lambda_root;
    // Cannot be <= 0 for lambda <= 1 and gamma > 0.
    if (!(denom > 0.0)) {
        throw std::logic_error("lambda_pr_gate: nonpositive denominator");
    }
    return lambda_root * gamma / denom;
}

/// lambda^((l-1)/L) * 1{q <= delta} * q / (gamma + (1-gamma) q) with
/// delta = lambda^(1/L) gamma / (1 - (1-gamma) lambda^(1/L)).
/// Position l is 1-based. At lambda = 1 this is exactly the TaiLr weight.
inline double weights_lambda_pr(double token_prob, double gamma, double lambda, std::size_t l,
                                std::size_t seq_len) {
    if (l < 1 || l > seq_len) {
        throw std::domain_error("weights_lambda_pr: position out of range");
    }
    const double root = std::pow(lambda, 1.0 / static_cast<double>(seq_len));
    const double delta = lambda_pr_gate(root, gamma);
    if (token_prob > delta) {
        return 0.0;
    }
    const double discount =
        std::pow(lambda, static_cast<double>(l - 1) / static_cast<double>(seq_len));
    return discount * weights_tailr(token_prob, gamma);
}

/// Per (sequence, position) table; used for both log-probabilities and
/// weights.
struct TokenTable {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    TokenTable() = default;
    TokenTable(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

using TokenWeights = TokenTable;

/// -mean over sequences of sum_l w(x, l) * log Q_{<l}(x_l).
inline double weighted_nll(const TokenTable& logprobs, const TokenWeights& weights) {
    if (logprobs.rows != weights.rows || logprobs.cols != weights.cols) {
        throw std::domain_error("weighted_nll: shape mismatch");
    }
    if (logprobs.rows == 0) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t r = 0; r < logprobs.rows; ++r) {
        double seq = 0.0;
        for (std::size_t c = 0; c < logprobs.cols; ++c) {
            seq += weights.at(r, c) * logprobs.at(r, c);
        }
        total += seq;
    }
    return -total / static_cast<double>(logprobs.rows);
}

struct WeightStats {
    double mean_weight = 0.0;
    double kept_fraction = 1.0;  // fraction of tokens with nonzero weight
    std::size_t floor_hits = 0;  // c-Div probabilities clamped at the floor
    bool gating_active = false;  // Trunc/TruncR quantile gate engaged
};

/// One step of the weighted-NLL algorithm's weight pass. Sequence
/// log-likelihoods enter the rolling buffer before the threshold is read,
/// and the gate only engages after the warm-up fill (weight 1 until then).
inline TokenWeights compute_token_weights(const LossSpec& spec, const TokenTable& logprobs,
                                          QuantileBuffer& buffer, WeightStats* stats_out = nullptr,
                                          std::size_t warmup_min_fill = 0) {
    spec.validate();
    const std::size_t b = logprobs.rows;
    const std::size_t len = logprobs.cols;
    TokenWeights w(b, len, 1.0);
    WeightStats stats;

    switch (spec.method) {
        case LossMethod::Nll:
            break;
        case LossMethod::Trunc:
        case LossMethod::TruncR: {
            std::vector<double> seq_loglik(b, 0.0);
            for (std::size_t r = 0; r < b; ++r) {
                for (std::size_t c = 0; c < len; ++c) {
                    seq_loglik[r] += logprobs.at(r, c);
                }
                buffer.push(seq_loglik[r]);
            }
            const std::size_t min_fill = warmup_min_fill > 0 ? warmup_min_fill
                                                             : (buffer.capacity() + 3) / 4;
            if (buffer.size() >= min_fill) {
                stats.gating_active = true;
                const double keep = 1.0 - spec.delta_frac;
                if (spec.method == LossMethod::Trunc) {
                    const double thresh = quantile_threshold(buffer, keep, QuantileSide::Highest);
                    for (std::size_t r = 0; r < b; ++r) {
                        const double g = weights_trunc(seq_loglik[r], thresh);
                        for (std::size_t c = 0; c < len; ++c) w.at(r, c) = g;
                    }
                } else {
                    const double thresh = quantile_threshold(buffer, keep, QuantileSide::Lowest);
                    for (std::size_t r = 0; r < b; ++r) {
                        const double g = weights_truncr(seq_loglik[r], thresh);
                        for (std::size_t c = 0; c < len; ++c) w.at(r, c) = g;
                    }
                }
            }
            break;
        }
        case LossMethod::CDiv:
            for (std::size_t r = 0; r < b; ++r) {
                for (std::size_t c = 0; c < len; ++c) {
                    const double q = std::exp(logprobs.at(r, c));
                    if (q <= kTokenProbFloor && spec.alpha > 1.0) {
                        ++stats.floor_hits;
                    }
                    w.at(r, c) = weights_cdiv(q, spec.alpha);
                }
            }
            break;
        case LossMethod::TaiLr:
            for (std::size_t r = 0; r < b; ++r) {
                for (std::size_t c = 0; c < len; ++c) {
                    w.at(r, c) = weights_tailr(std::exp(logprobs.at(r, c)), spec.gamma);
                }
            }
            break;
        case LossMethod::LambdaPR:
            if (spec.seq_len != len) {
                throw std::domain_error("compute_token_weights: LossSpec seq_len mismatch");
            }
            for (std::size_t r = 0; r < b; ++r) {
                for (std::size_t c = 0; c < len; ++c) {
                    w.at(r, c) = weights_lambda_pr(std::exp(logprobs.at(r, c)), spec.gamma,
                                                   spec.lambda, c + 1, len);
                }
            }
            break;
    }

    double sum = 0.0;
    std::size_t nonzero = 0;
    for (double v : w.data) {
        sum += v;
        nonzero += v != 0.0 ? 1 : 0;
    }
    stats.mean_weight = w.data.empty() ? 0.0 : sum / static_cast<double>(w.data.size());
    stats.kept_fraction = w.data.empty() ? 1.0 : static_cast<double>(nonzero) / static_cast<double>(w.data.size());
    if (stats_out != nullptr) {
        *stats_out = stats;
    }
    return w;
}

}  // namespace prgen::losses
