#pragma once

// Weighted-NLL training: Adam with decoupled weight decay, the rolling
// quantile gate for the truncation losses, and a deterministic fan-out of
// the batch across worker threads. Gradients are reduced over a fixed set
// of virtual chunks in chunk order, so results are bit-stable for any
// thread count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <thread>
#include <vector>

#include "prgen/losses.hpp"
#include "prgen/transformer.hpp"

namespace prgen::nn {

struct TrainConfig {
    double learning_rate = 0.001;
    double weight_decay = 1.0;
    std::size_t epochs = 500;
    std::size_t batch_size = 512;
    std::size_t dataset_size = 25000;
    losses::LossSpec loss;
    std::uint64_t seed = 0;
    std::size_t warmup_epochs = 0;  // plain NLL epochs before the chosen method
    std::size_t quantile_capacity = 2048;
    std::size_t n_threads = 0;  // 0 = hardware concurrency

    void validate() const {
        if (!(learning_rate > 0.0) || weight_decay < 0.0 || batch_size == 0 ||
            quantile_capacity == 0) {
            throw std::domain_error("TrainConfig: nonpositive setting");
        }
        loss.validate();
    }
};

template <typename S>
struct AdamState {
    std::vector<S> m;
    std::vector<S> v;
    std::uint64_t step = 0;
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    static AdamState zeros_like(const Model<S>& model) {
        AdamState st;
        st.m.assign(model.params.size(), S(0));
        st.v.assign(model.params.size(), S(0));
        return st;
    }
};

/// One Adam update with multiplicative decoupled weight decay,
/// theta <- theta (1 - lr wd) - lr mhat / (sqrt(vhat) + eps).
template <typename S>
void adam_step(Model<S>& model, const std::vector<S>& grad, AdamState<S>& st, double lr,
               double weight_decay) {
    if (grad.size() != model.params.size() || st.m.size() != model.params.size()) {
        throw std::domain_error("adam_step: shape mismatch");
    }
    ++st.step;
    const S b1 = S(AdamState<S>::beta1);
    const S b2 = S(AdamState<S>::beta2);
    const S corr1 = S(1) - S(std::pow(AdamState<S>::beta1, static_cast<double>(st.step)));
    const S corr2 = S(1) - S(std::pow(AdamState<S>::beta2, static_cast<double>(st.step)));
    const S decay = S(1) - S(lr) * S(weight_decay);
    const S eta = S(lr);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const S g = grad[i];
        st.m[i] = b1 * st.m[i] + (S(1) - b1) * g;
        st.v[i] = b2 * st.v[i] + (S(1) - b2) * g * g;
        const S mhat = st.m[i] / corr1;
        const S vhat = st.v[i] / corr2;
        model.params[i] = model.params[i] * decay - eta * mhat / (std::sqrt(vhat) + S(AdamState<S>::eps));
    }
}

struct TrainingError : std::runtime_error {
    std::size_t batch_index;
    TrainingError(const std::string& msg, std::size_t idx)
        : std::runtime_error(msg), batch_index(idx) {}
};

struct DivergenceError : std::runtime_error {
    std::size_t epoch;
    double loss;
    double initial_loss;
    DivergenceError(std::size_t ep, double l, double init)
        : std::runtime_error("training diverged at epoch " + std::to_string(ep) + ": loss " +
                             std::to_string(l) + " exceeds 10x initial " + std::to_string(init) +
                             " for 3 consecutive epochs"),
          epoch(ep),
          loss(l),
          initial_loss(init) {}
};

namespace detail {

// Gradient contribution of one sequence: dlogits = (w_l / inv_scale)
// (probs - onehot) per position, pushed through the reverse pass.
template <typename S>
void sequence_backward(const Model<S>& m, Workspace<S>& ws, std::span<const TokenId> targets,
                       const double* weights, double inv_batch, std::vector<S>& dlogits_buf,
                       std::vector<S>& grad) {
    const std::size_t nv = m.cfg.vocab_size;
    const std::size_t n = targets.size();
    dlogits_buf.assign(m.cfg.seq_len * nv, S(0));
    for (std::size_t l = 0; l < n; ++l) {
        const S w = S(weights[l] * inv_batch);
        const S* pr = ws.probs.data() + l * nv;
        S* dz = dlogits_buf.data() + l * nv;
        for (std::size_t t = 0; t < nv; ++t) {
            dz[t] = w * pr[t];
        }
        dz[targets[l]] -= w;
    }
    backward_from_dlogits(m, ws, dlogits_buf.data(), grad);
}

}  // namespace detail

/// Loss and exact gradient of the weighted NLL over a batch; the mean is
/// over sequences, matching losses::weighted_nll.
template <typename S>
double loss_and_grads(const Model<S>& m, const std::vector<TokenSeq>& batch,
                      const losses::TokenWeights& weights, std::vector<S>& grad_out) {
    if (batch.empty()) {
        grad_out.assign(m.params.size(), S(0));
        return 0.0;
    }
    if (weights.rows != batch.size()) {
        throw std::domain_error("loss_and_grads: weights shape mismatch");
    }
    grad_out.assign(m.params.size(), S(0));
    Workspace<S> ws(m.cfg);
    std::vector<S> dlogits;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (std::size_t r = 0; r < batch.size(); ++r) {
        const TokenSeq& x = batch[r];
        if (weights.cols != x.size()) {
            throw std::domain_error("loss_and_grads: weights shape mismatch");
        }
        forward_cache(m, x, ws);
        double seq = 0.0;
        for (std::size_t l = 0; l < x.size(); ++l) {
            seq += weights.at(r, l) * static_cast<double>(ws.logprobs[l * m.cfg.vocab_size + x[l]]);
        }
        if (!std::isfinite(seq)) {
            throw TrainingError("loss_and_grads: non-finite loss at batch index " +
                                    std::to_string(r),
                                r);
        }
        loss -= seq * inv_batch;
        detail::sequence_backward(m, ws, x, &weights.data[r * weights.cols], inv_batch, dlogits,
                                  grad_out);
    }
    return loss;
}

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;
    double mean_weight = 0.0;
    double kept_fraction = 1.0;
    std::size_t floor_hits = 0;
};

struct TrainResult {
    std::vector<EpochLog> log;
};

/// Full training loop: shuffle, batch, weight, step. Aborts with
/// DivergenceError when the epoch loss exceeds 10x the first epoch's loss
/// three epochs in a row.
template <typename S>
TrainResult train(Model<S>& model, AdamState<S>& opt, const std::vector<TokenSeq>& dataset,
                  const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) {
        throw std::domain_error("train: empty dataset");
    }
    for (const TokenSeq& x : dataset) {
        if (x.size() != model.cfg.seq_len) {
            throw std::domain_error("train: dataset sequences must have length seq_len");
        }
    }

    std::size_t n_threads = cfg.n_threads != 0 ? cfg.n_threads : std::thread::hardware_concurrency();
    n_threads = std::max<std::size_t>(1, std::min<std::size_t>(n_threads, 16));

    Rng shuffle_rng(cfg.seed);
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    losses::QuantileBuffer buffer(cfg.quantile_capacity);
    losses::LossSpec nll_spec;
    nll_spec.method = losses::LossMethod::Nll;

    // Fixed virtual chunking keeps the reduction order independent of the
    // worker count.
    const std::size_t n_chunks = std::min<std::size_t>(64, cfg.batch_size);
    std::vector<std::vector<S>> chunk_grads(n_chunks, std::vector<S>(model.params.size(), S(0)));
    std::vector<S> grad(model.params.size(), S(0));

    // One cached workspace per batch slot: the forward activations from
    // pass A feed the reverse pass directly.
    std::vector<Workspace<S>> slot_ws;
    slot_ws.reserve(std::min(cfg.batch_size, dataset.size()));
    for (std::size_t i = 0; i < std::min(cfg.batch_size, dataset.size()); ++i) {
        slot_ws.emplace_back(model.cfg);
    }
    std::vector<std::vector<S>> worker_dlogits(n_threads);
    FastWeights<S> fast;

    TrainResult result;
    double initial_loss = 0.0;
    std::size_t over_streak = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const losses::LossSpec& spec = epoch < cfg.warmup_epochs ? nll_spec : cfg.loss;

        double epoch_loss = 0.0;
        double epoch_weight = 0.0;
        double epoch_kept = 0.0;
        std::size_t epoch_floor_hits = 0;
        std::size_t n_seen = 0;

        for (std::size_t start = 0; start < dataset.size(); start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, dataset.size() - start);
            const std::size_t chunks_now = std::min(n_chunks, b);
            build_fast_weights(model, fast);

            // Pass A: forward, caching activations per slot.
            losses::TokenTable logprobs(b, model.cfg.seq_len);
            auto pass_a = [&](std::size_t tid) {
                for (std::size_t chunk = tid; chunk < chunks_now; chunk += n_threads) {
                    const std::size_t lo = chunk * b / chunks_now;
                    const std::size_t hi = (chunk + 1) * b / chunks_now;
                    for (std::size_t r = lo; r < hi; ++r) {
                        const TokenSeq& x = dataset[order[start + r]];
                        forward_cache(model, x, slot_ws[r], &fast);
                        for (std::size_t l = 0; l < x.size(); ++l) {
                            logprobs.at(r, l) = static_cast<double>(
                                slot_ws[r].logprobs[l * model.cfg.vocab_size + x[l]]);
                        }
                    }
                }
            };
            run_workers(pass_a, n_threads);

            losses::WeightStats stats;
            const losses::TokenWeights weights =
                losses::compute_token_weights(spec, logprobs, buffer, &stats);

            const double batch_loss = losses::weighted_nll(logprobs, weights);
            if (!std::isfinite(batch_loss)) {
                throw TrainingError("train: non-finite batch loss at offset " +
                                        std::to_string(start),
                                    start);
            }

            // Pass B: gradients per chunk from the cached activations,
            // reduced in chunk order.
            const double inv_batch = 1.0 / static_cast<double>(b);
            auto pass_b = [&](std::size_t tid) {
                for (std::size_t chunk = tid; chunk < chunks_now; chunk += n_threads) {
                    std::vector<S>& cg = chunk_grads[chunk];
                    std::fill(cg.begin(), cg.end(), S(0));
                    const std::size_t lo = chunk * b / chunks_now;
                    const std::size_t hi = (chunk + 1) * b / chunks_now;
                    for (std::size_t r = lo; r < hi; ++r) {
                        const TokenSeq& x = dataset[order[start + r]];
                        detail::sequence_backward(model, slot_ws[r], x,
                                                  &weights.data[r * weights.cols], inv_batch,
                                                  worker_dlogits[tid], cg);
                    }
                }
            };
            run_workers(pass_b, n_threads);

            std::fill(grad.begin(), grad.end(), S(0));
            for (std::size_t chunk = 0; chunk < chunks_now; ++chunk) {
                const std::vector<S>& cg = chunk_grads[chunk];
                for (std::size_t i = 0; i < grad.size(); ++i) {
                    grad[i] += cg[i];
                }
            }
            adam_step(model, grad, opt, cfg.learning_rate, cfg.weight_decay);

            epoch_loss += batch_loss * static_cast<double>(b);
            epoch_weight += stats.mean_weight * static_cast<double>(b);
            epoch_kept += stats.kept_fraction * static_cast<double>(b);
            epoch_floor_hits += stats.floor_hits;
            n_seen += b;
        }

        EpochLog log;
        log.epoch = epoch;
        log.loss = epoch_loss / static_cast<double>(n_seen);
        log.mean_weight = epoch_weight / static_cast<double>(n_seen);
        log.kept_fraction = epoch_kept / static_cast<double>(n_seen);
        log.floor_hits = epoch_floor_hits;
        result.log.push_back(log);

        if (epoch == 0) {
            initial_loss = log.loss;
        }
        if (log.loss > 10.0 * initial_loss) {
            if (++over_streak >= 3) {
                throw DivergenceError(epoch, log.loss, initial_loss);
            }
        } else {
            over_streak = 0;
        }
    }
    return result;
}

}  // namespace prgen::nn
