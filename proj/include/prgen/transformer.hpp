#pragma once

// Tiny decoder-only autoregressive transformer with exact reverse-mode
// gradients, written directly against flat parameter storage. The default
// block is the Llama recipe (pre-norm RMS, rotary positions, gated feed
// forward); a config switch falls back to learned absolute positions with
// a plain GELU feed forward for debugging.
//
// Position semantics: the input stream is [BOS, x_1, ..., x_{L-1}], so the
// softmax of logits at position l is the model's conditional for x_l given
// the strict prefix. BOS is an internal embedding row (id V); it is not
// part of the vocabulary.

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <thread>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "prgen/categorical.hpp"
#include "prgen/seq_dist.hpp"

namespace prgen::nn {

/// Runs fn(tid) on n_threads workers and joins them.
template <typename Fn>
void run_workers(Fn&& fn, std::size_t n_threads) {
    if (n_threads <= 1) {
        fn(0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t tid = 0; tid < n_threads; ++tid) {
        pool.emplace_back([&fn, tid] { fn(tid); });
    }
    for (std::thread& th : pool) {
        th.join();
    }
}

enum class Arch { Llama, Absolute };

struct ModelConfig {
    std::size_t vocab_size = 12;
    std::size_t seq_len = 8;
    std::size_t n_layers = 4;
    std::size_t d_model = 32;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::uint64_t seed = 1;
    Arch arch = Arch::Llama;

    std::size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (vocab_size == 0 || seq_len == 0 || n_layers == 0 || d_model == 0 || n_heads == 0 ||
            d_ff == 0) {
            throw std::domain_error("ModelConfig: all sizes must be positive");
        }
        if (d_model % n_heads != 0) {
            throw std::domain_error("ModelConfig: d_model must be divisible by n_heads");
        }
        if (arch == Arch::Llama && head_dim() % 2 != 0) {
            throw std::domain_error("ModelConfig: rotary positions need an even head dim");
        }
    }
};

struct ParamGroup {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
};

constexpr double kNormEps = 1e-5;
constexpr double kRopeBase = 1e4;
constexpr double kInitStd = 0.02;

template <typename S>
struct Model {
    ModelConfig cfg;
    std::vector<ParamGroup> groups;
    std::vector<S> params;

    struct LayerOffsets {
        std::size_t norm_attn, wq, wk, wv, wo, norm_ffn, ffn_gate, ffn_up, ffn_out;
    };
    std::size_t tok_emb = 0;
    std::size_t pos_emb = 0;  // Absolute arch only
    std::vector<LayerOffsets> layers;
    std::size_t final_norm = 0;
    std::size_t wout = 0;
    std::vector<S> rope_cos, rope_sin;  // (seq_len, head_dim/2)

    std::span<const S> group(std::string_view name) const {
        for (const ParamGroup& g : groups) {
            if (g.name == name) {
                return {params.data() + g.offset, g.size};
            }
        }
        throw std::invalid_argument("Model: unknown parameter group " + std::string(name));
    }

    static Model init(const ModelConfig& cfg) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        const std::size_t d = cfg.d_model;
        const std::size_t ff = cfg.d_ff;
        const std::size_t v = cfg.vocab_size;

        std::size_t cursor = 0;
        const auto add = [&](const std::string& name, std::size_t size) {
            m.groups.push_back({name, cursor, size});
            const std::size_t off = cursor;
            cursor += size;
            return off;
        };

        m.tok_emb = add("tok_emb", (v + 1) * d);  // row v is BOS
        if (cfg.arch == Arch::Absolute) {
            m.pos_emb = add("pos_emb", cfg.seq_len * d);
        }
        m.layers.resize(cfg.n_layers);
        for (std::size_t k = 0; k < cfg.n_layers; ++k) {
            const std::string p = "layer" + std::to_string(k) + ".";
            LayerOffsets& lo = m.layers[k];
            lo.norm_attn = add(p + "norm_attn", d);
            lo.wq = add(p + "wq", d * d);
            lo.wk = add(p + "wk", d * d);
            lo.wv = add(p + "wv", d * d);
            lo.wo = add(p + "wo", d * d);
            lo.norm_ffn = add(p + "norm_ffn", d);
            if (cfg.arch == Arch::Llama) {
                lo.ffn_gate = add(p + "ffn_gate", ff * d);
                lo.ffn_up = add(p + "ffn_up", ff * d);
            } else {
                lo.ffn_gate = add(p + "ffn_in", ff * d);
                lo.ffn_up = 0;
            }
            lo.ffn_out = add(p + "ffn_out", d * ff);
        }
        m.final_norm = add("final_norm", d);
        m.wout = add("wout", v * d);

        m.params.assign(cursor, S(0));
        Rng rng(cfg.seed);
        std::normal_distribution<double> gauss(0.0, kInitStd);
        for (const ParamGroup& g : m.groups) {
            const bool is_gain = g.name.find("norm") != std::string::npos;
            for (std::size_t i = 0; i < g.size; ++i) {
                m.params[g.offset + i] = is_gain ? S(1) : S(gauss(rng));
            }
        }

        const std::size_t half = cfg.head_dim() / 2;
        m.rope_cos.assign(cfg.seq_len * half, S(1));
        m.rope_sin.assign(cfg.seq_len * half, S(0));
        for (std::size_t p = 0; p < cfg.seq_len; ++p) {
            for (std::size_t i = 0; i < half; ++i) {
                const double freq = std::pow(kRopeBase, -2.0 * static_cast<double>(i) /
                                                            static_cast<double>(cfg.head_dim()));
                const double angle = static_cast<double>(p) * freq;
                m.rope_cos[p * half + i] = S(std::cos(angle));
                m.rope_sin[p * half + i] = S(std::sin(angle));
            }
        }
        return m;
    }
};

namespace detail {

template <typename S>
inline S silu(S x) {
    const S sig = S(1) / (S(1) + std::exp(-x));
    return x * sig;
}

template <typename S>
inline S silu_grad(S x) {
    const S sig = S(1) / (S(1) + std::exp(-x));
    return sig * (S(1) + x * (S(1) - sig));
}

template <typename S>
inline S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x / S(std::sqrt(2.0))));
}

template <typename S>
inline S gelu_grad(S x) {
    const S phi = std::exp(-x * x / S(2)) / S(std::sqrt(2.0 * 3.14159265358979323846));
    return S(0.5) * (S(1) + std::erf(x / S(std::sqrt(2.0)))) + x * phi;
}

// Dot product with sixteen independent accumulators; breaks the serial
// FMA chain so the loop vectorizes, with a fixed summation order.
template <typename S>
inline S dot(const S* __restrict a, const S* __restrict b, std::size_t n) {
    S acc[16] = {};
    std::size_t c = 0;
    for (; c + 16 <= n; c += 16) {
        for (std::size_t k = 0; k < 16; ++k) {
            acc[k] += a[c + k] * b[c + k];
        }
    }
    S tail = 0;
    for (; c < n; ++c) {
        tail += a[c] * b[c];
    }
    for (std::size_t k = 8; k < 16; ++k) {
        acc[k - 8] += acc[k];
    }
    for (std::size_t k = 4; k < 8; ++k) {
        acc[k - 4] += acc[k];
    }
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail;
}

template <std::size_t N, typename S>
inline S dot_fixed(const S* __restrict a, const S* __restrict b) {
    static_assert(N % 16 == 0);
    S acc[16] = {};
    for (std::size_t c = 0; c < N; c += 16) {
        for (std::size_t k = 0; k < 16; ++k) {
            acc[k] += a[c + k] * b[c + k];
        }
    }
    for (std::size_t k = 8; k < 16; ++k) {
        acc[k - 8] += acc[k];
    }
    for (std::size_t k = 4; k < 8; ++k) {
        acc[k - 4] += acc[k];
    }
    return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

// y = W x, W is (rows x cols) row-major.
template <typename S>
inline void matvec(const S* __restrict w, const S* __restrict x, S* __restrict y,
                   std::size_t rows, std::size_t cols) {
    if (cols == 32) {
        for (std::size_t r = 0; r < rows; ++r) {
            y[r] = dot_fixed<32>(w + r * 32, x);
        }
    } else if (cols == 128) {
        for (std::size_t r = 0; r < rows; ++r) {
            y[r] = dot_fixed<128>(w + r * 128, x);
        }
    } else {
        for (std::size_t r = 0; r < rows; ++r) {
            y[r] = dot(w + r * cols, x, cols);
        }
    }
}

// y = W x with W stored transposed, (cols x rows): reduction-free axpy
// accumulation down each stored column.
template <typename S>
inline void matvec_t(const S* __restrict wt, const S* __restrict x, S* __restrict y,
                     std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        y[r] = 0;
    }
    for (std::size_t c = 0; c < cols; ++c) {
        const S xv = x[c];
        const S* col = wt + c * rows;
        for (std::size_t r = 0; r < rows; ++r) {
            y[r] += xv * col[r];
        }
    }
}

// dx += W^T dy and dW += dy x^T.
template <typename S>
inline void matvec_backward(const S* __restrict w, const S* __restrict x, const S* __restrict dy,
                            S* __restrict dw, S* __restrict dx, std::size_t rows,
                            std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const S g = dy[r];
        const S* wr = w + r * cols;
        S* dwr = dw + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            dwr[c] += g * x[c];
            dx[c] += g * wr[c];
        }
    }
}

template <typename S>
inline S rmsnorm_forward(const S* x, const S* gain, S* y, std::size_t d) {
    S ms = 0;
    for (std::size_t i = 0; i < d; ++i) {
        ms += x[i] * x[i];
    }
    const S inv = S(1) / std::sqrt(ms / S(d) + S(kNormEps));
    for (std::size_t i = 0; i < d; ++i) {
        y[i] = gain[i] * x[i] * inv;
    }
    return inv;
}

template <typename S>
inline void rmsnorm_backward(const S* x, const S* gain, S inv, const S* dy, S* dgain, S* dx,
                             std::size_t d) {
    S dot = 0;
    for (std::size_t i = 0; i < d; ++i) {
        dgain[i] += dy[i] * x[i] * inv;
        dot += dy[i] * gain[i] * x[i];
    }
    const S scale = dot * inv * inv * inv / S(d);
    for (std::size_t i = 0; i < d; ++i) {
        dx[i] += gain[i] * inv * dy[i] - x[i] * scale;
    }
}

// In-place rotary rotation of one head-sized slice using a precomputed
// (cos, sin) table row. direction +1 rotates forward, -1 applies the
// transpose.
template <typename S>
inline void rope(S* h, std::size_t head_dim, const S* cos_row, const S* sin_row, int direction) {
    for (std::size_t i = 0; i + 1 < head_dim; i += 2) {
        const S c = cos_row[i / 2];
        const S s = direction > 0 ? sin_row[i / 2] : -sin_row[i / 2];
        const S a = h[i];
        const S b = h[i + 1];
        h[i] = a * c - b * s;
        h[i + 1] = a * s + b * c;
    }
}

}  // namespace detail

/// Transposed copies of the per-layer projection matrices. The training
/// loop rebuilds this after every optimizer step and threads it through
/// the forward pass, where the transposed orientation turns each GEMV into
/// reduction-free accumulation.
template <typename S>
struct FastWeights {
    std::vector<S> wq_t, wk_t, wv_t, wo_t;  // (nl, d, d)
    std::vector<S> gate_t, up_t;            // (nl, d, ff)
    std::vector<S> down_t;                  // (nl, ff, d)
};

template <typename S>
void build_fast_weights(const Model<S>& m, FastWeights<S>& fw) {
    const std::size_t d = m.cfg.d_model, ff = m.cfg.d_ff, nl = m.cfg.n_layers;
    fw.wq_t.resize(nl * d * d);
    fw.wk_t.resize(nl * d * d);
    fw.wv_t.resize(nl * d * d);
    fw.wo_t.resize(nl * d * d);
    fw.gate_t.resize(nl * d * ff);
    fw.up_t.resize(nl * d * ff);
    fw.down_t.resize(nl * ff * d);
    const S* P = m.params.data();
    const auto transpose = [](const S* w, S* wt, std::size_t rows, std::size_t cols) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                wt[c * rows + r] = w[r * cols + c];
            }
        }
    };
    for (std::size_t k = 0; k < nl; ++k) {
        const auto& lo = m.layers[k];
        transpose(P + lo.wq, fw.wq_t.data() + k * d * d, d, d);
        transpose(P + lo.wk, fw.wk_t.data() + k * d * d, d, d);
        transpose(P + lo.wv, fw.wv_t.data() + k * d * d, d, d);
        transpose(P + lo.wo, fw.wo_t.data() + k * d * d, d, d);
        transpose(P + lo.ffn_gate, fw.gate_t.data() + k * d * ff, ff, d);
        if (m.cfg.arch == Arch::Llama) {
            transpose(P + lo.ffn_up, fw.up_t.data() + k * d * ff, ff, d);
        }
        transpose(P + lo.ffn_out, fw.down_t.data() + k * ff * d, d, ff);
    }
}

/// Activation caches for one sequence. Positions are computed one at a
/// time, so the same structure acts as the KV cache during generation.
template <typename S>
struct Workspace {
    ModelConfig cfg;
    std::size_t n_pos = 0;  // positions computed so far
    std::vector<TokenId> inputs;

    // (n_layers+1, L, d): stream entering each layer, plus the final stream
    std::vector<S> xs;
    std::vector<S> ln1, ln2;                 // (nl, L, d)
    std::vector<S> inv_rms1, inv_rms2;       // (nl, L)
    std::vector<S> q, k, v;                  // (nl, L, d); q, k post-rotation
    std::vector<S> attw;                     // (nl, nh, L, L)
    std::vector<S> atto;                     // (nl, L, d)
    std::vector<S> resid_mid;                // (nl, L, d)
    std::vector<S> ffn_a, ffn_b, ffn_act;    // (nl, L, dff)
    std::vector<S> ffn_sig;                  // (nl, L, dff) gate sigmoid cache
    std::vector<S> fin_ln;                   // (L, d)
    std::vector<S> inv_rms_f;                // (L)
    std::vector<S> logits, probs, logprobs;  // (L, V)

    // reverse-pass scratch, sized once so the hot path never allocates
    std::vector<S> bwd_dxs, bwd_dmid;             // (L, d)
    std::vector<S> bwd_dq, bwd_dk, bwd_dv;        // (L, d)
    std::vector<S> bwd_dln, bwd_datto, bwd_dtmp;  // (d)
    std::vector<S> bwd_dfa, bwd_dfb, bwd_dfact;   // (dff)
    std::vector<S> bwd_da;                        // (L)

    explicit Workspace(const ModelConfig& c) : cfg(c) {
        const std::size_t L = c.seq_len, d = c.d_model, ff = c.d_ff, nl = c.n_layers,
                          nv = c.vocab_size;
        inputs.assign(L, 0);
        xs.assign((nl + 1) * L * d, S(0));
        ln1.assign(nl * L * d, S(0));
        ln2.assign(nl * L * d, S(0));
        inv_rms1.assign(nl * L, S(0));
        inv_rms2.assign(nl * L, S(0));
        q.assign(nl * L * d, S(0));
        k.assign(nl * L * d, S(0));
        v.assign(nl * L * d, S(0));
        attw.assign(nl * c.n_heads * L * L, S(0));
        atto.assign(nl * L * d, S(0));
        resid_mid.assign(nl * L * d, S(0));
        ffn_a.assign(nl * L * ff, S(0));
        ffn_b.assign(nl * L * ff, S(0));
        ffn_act.assign(nl * L * ff, S(0));
        ffn_sig.assign(nl * L * ff, S(0));
        fin_ln.assign(L * d, S(0));
        inv_rms_f.assign(L, S(0));
        logits.assign(L * nv, S(0));
        probs.assign(L * nv, S(0));
        logprobs.assign(L * nv, S(0));
        bwd_dxs.assign(L * d, S(0));
        bwd_dmid.assign(L * d, S(0));
        bwd_dq.assign(L * d, S(0));
        bwd_dk.assign(L * d, S(0));
        bwd_dv.assign(L * d, S(0));
        bwd_dln.assign(d, S(0));
        bwd_datto.assign(d, S(0));
        bwd_dtmp.assign(d, S(0));
        bwd_dfa.assign(ff, S(0));
        bwd_dfb.assign(ff, S(0));
        bwd_dfact.assign(ff, S(0));
        bwd_da.assign(L, S(0));
    }

    void reset() { n_pos = 0; }
};

/// Computes one more position of the sequence: feeds `input_id` (a token
/// id, or V for BOS) at position ws.n_pos, attends over everything cached
/// so far and fills logits/probs/logprobs for that position.
template <typename S>
void forward_position(const Model<S>& m, Workspace<S>& ws, TokenId input_id,
                      const FastWeights<S>* fw = nullptr) {
    const ModelConfig& c = m.cfg;
    const std::size_t L = c.seq_len, d = c.d_model, ff = c.d_ff, nh = c.n_heads,
                      dh = c.head_dim(), nv = c.vocab_size;
    const std::size_t pos = ws.n_pos;
    if (pos >= L) {
        throw std::domain_error("forward_position: sequence is already full");
    }
    if (input_id > nv) {  // == nv is BOS
        throw std::domain_error("forward_position: token id out of range");
    }
    ws.inputs[pos] = input_id;
    const S* P = m.params.data();

    // embedding
    S* x0 = ws.xs.data() + pos * d;
    const S* emb = P + m.tok_emb + static_cast<std::size_t>(input_id) * d;
    for (std::size_t i = 0; i < d; ++i) {
        x0[i] = emb[i];
    }
    if (c.arch == Arch::Absolute) {
        const S* pe = P + m.pos_emb + pos * d;
        for (std::size_t i = 0; i < d; ++i) {
            x0[i] += pe[i];
        }
    }

    const S scale = S(1) / std::sqrt(S(dh));
    for (std::size_t layer = 0; layer < c.n_layers; ++layer) {
        const auto& lo = m.layers[layer];
        const S* x = ws.xs.data() + (layer * L + pos) * d;
        S* ln = ws.ln1.data() + (layer * L + pos) * d;
        ws.inv_rms1[layer * L + pos] = detail::rmsnorm_forward(x, P + lo.norm_attn, ln, d);

        S* qp = ws.q.data() + (layer * L + pos) * d;
        S* kp = ws.k.data() + (layer * L + pos) * d;
        S* vp = ws.v.data() + (layer * L + pos) * d;
        if (fw != nullptr) {
            detail::matvec_t(fw->wq_t.data() + layer * d * d, ln, qp, d, d);
            detail::matvec_t(fw->wk_t.data() + layer * d * d, ln, kp, d, d);
            detail::matvec_t(fw->wv_t.data() + layer * d * d, ln, vp, d, d);
        } else {
            detail::matvec(P + lo.wq, ln, qp, d, d);
            detail::matvec(P + lo.wk, ln, kp, d, d);
            detail::matvec(P + lo.wv, ln, vp, d, d);
        }
        if (c.arch == Arch::Llama) {
            const S* cr = m.rope_cos.data() + pos * (dh / 2);
            const S* sr = m.rope_sin.data() + pos * (dh / 2);
            for (std::size_t h = 0; h < nh; ++h) {
                detail::rope(qp + h * dh, dh, cr, sr, +1);
                detail::rope(kp + h * dh, dh, cr, sr, +1);
            }
        }

        S* out = ws.atto.data() + (layer * L + pos) * d;
        for (std::size_t h = 0; h < nh; ++h) {
            S* aw = ws.attw.data() + ((layer * nh + h) * L + pos) * L;
            S mx = -std::numeric_limits<S>::infinity();
            for (std::size_t j = 0; j <= pos; ++j) {
                const S* kj = ws.k.data() + (layer * L + j) * d + h * dh;
                S s = 0;
                for (std::size_t i = 0; i < dh; ++i) {
                    s += qp[h * dh + i] * kj[i];
                }
                aw[j] = s * scale;
                mx = std::max(mx, aw[j]);
            }
            S norm = 0;
            for (std::size_t j = 0; j <= pos; ++j) {
                aw[j] = std::exp(aw[j] - mx);
                norm += aw[j];
            }
            for (std::size_t j = 0; j <= pos; ++j) {
                aw[j] /= norm;
            }
            for (std::size_t i = 0; i < dh; ++i) {
                S acc = 0;
                for (std::size_t j = 0; j <= pos; ++j) {
                    acc += aw[j] * ws.v[(layer * L + j) * d + h * dh + i];
                }
                out[h * dh + i] = acc;
            }
        }

        S* mid = ws.resid_mid.data() + (layer * L + pos) * d;
        if (fw != nullptr) {
            detail::matvec_t(fw->wo_t.data() + layer * d * d, out, mid, d, d);
        } else {
            detail::matvec(P + lo.wo, out, mid, d, d);
        }
        for (std::size_t i = 0; i < d; ++i) {
            mid[i] += x[i];
        }

        S* ln_f = ws.ln2.data() + (layer * L + pos) * d;
        ws.inv_rms2[layer * L + pos] = detail::rmsnorm_forward(mid, P + lo.norm_ffn, ln_f, d);

        S* fa = ws.ffn_a.data() + (layer * L + pos) * ff;
        S* fact = ws.ffn_act.data() + (layer * L + pos) * ff;
        if (c.arch == Arch::Llama) {
            S* fb = ws.ffn_b.data() + (layer * L + pos) * ff;
            S* fsig = ws.ffn_sig.data() + (layer * L + pos) * ff;
            if (fw != nullptr) {
                detail::matvec_t(fw->gate_t.data() + layer * d * ff, ln_f, fa, ff, d);
                detail::matvec_t(fw->up_t.data() + layer * d * ff, ln_f, fb, ff, d);
            } else {
                detail::matvec(P + lo.ffn_gate, ln_f, fa, ff, d);
                detail::matvec(P + lo.ffn_up, ln_f, fb, ff, d);
            }
            for (std::size_t i = 0; i < ff; ++i) {
                fsig[i] = S(1) / (S(1) + std::exp(-fa[i]));
            }
            for (std::size_t i = 0; i < ff; ++i) {
                fact[i] = fa[i] * fsig[i] * fb[i];
            }
        } else {
            if (fw != nullptr) {
                detail::matvec_t(fw->gate_t.data() + layer * d * ff, ln_f, fa, ff, d);
            } else {
                detail::matvec(P + lo.ffn_gate, ln_f, fa, ff, d);
            }
            for (std::size_t i = 0; i < ff; ++i) {
                fact[i] = detail::gelu(fa[i]);
            }
        }

        S* x_next = ws.xs.data() + ((layer + 1) * L + pos) * d;
        if (fw != nullptr) {
            detail::matvec_t(fw->down_t.data() + layer * ff * d, fact, x_next, d, ff);
        } else {
            detail::matvec(P + lo.ffn_out, fact, x_next, d, ff);
        }
        for (std::size_t i = 0; i < d; ++i) {
            x_next[i] += mid[i];
        }
    }

    const S* x_last = ws.xs.data() + (c.n_layers * L + pos) * d;
    S* fl = ws.fin_ln.data() + pos * d;
    ws.inv_rms_f[pos] = detail::rmsnorm_forward(x_last, P + m.final_norm, fl, d);
    S* z = ws.logits.data() + pos * nv;
    detail::matvec(P + m.wout, fl, z, nv, d);

    S mx = z[0];
    for (std::size_t i = 1; i < nv; ++i) {
        mx = std::max(mx, z[i]);
    }
    S norm = 0;
    S* pr = ws.probs.data() + pos * nv;
    for (std::size_t i = 0; i < nv; ++i) {
        pr[i] = std::exp(z[i] - mx);
        norm += pr[i];
    }
    S* lp = ws.logprobs.data() + pos * nv;
    const S log_norm = std::log(norm);
    for (std::size_t i = 0; i < nv; ++i) {
        lp[i] = z[i] - mx - log_norm;
        pr[i] /= norm;
    }
    ++ws.n_pos;
}

/// Runs the causal stream over a full target sequence: inputs are BOS
/// followed by targets[0..L-2]; position l then models targets[l].
template <typename S>
void forward_cache(const Model<S>& m, std::span<const TokenId> targets, Workspace<S>& ws,
                   const FastWeights<S>* fw = nullptr) {
    if (targets.size() > m.cfg.seq_len) {
        throw std::domain_error("forward_cache: sequence longer than seq_len");
    }
    for (TokenId t : targets) {
        if (t >= m.cfg.vocab_size) {
            throw std::domain_error("forward_cache: token id out of range");
        }
    }
    ws.reset();
    const TokenId bos = static_cast<TokenId>(m.cfg.vocab_size);
    for (std::size_t l = 0; l < targets.size(); ++l) {
        forward_position(m, ws, l == 0 ? bos : targets[l - 1], fw);
    }
}

/// Per-position logits over V for a full target sequence.
template <typename S>
std::vector<S> forward_logits(const Model<S>& m, std::span<const TokenId> targets) {
    Workspace<S> ws(m.cfg);
    forward_cache(m, targets, ws);
    return std::vector<S>(ws.logits.begin(),
                          ws.logits.begin() + targets.size() * m.cfg.vocab_size);
}

/// Reverse pass from per-position logit gradients; accumulates into grad,
/// which must mirror the parameter layout. Uses the workspace's scratch
/// buffers; the cached activations themselves are left intact.
template <typename S>
void backward_from_dlogits(const Model<S>& m, Workspace<S>& ws, const S* dlogits,
                           std::vector<S>& grad) {
    const ModelConfig& c = m.cfg;
    const std::size_t L = c.seq_len, d = c.d_model, ff = c.d_ff, nh = c.n_heads,
                      dh = c.head_dim(), nv = c.vocab_size;
    const std::size_t n = ws.n_pos;
    if (grad.size() != m.params.size()) {
        throw std::domain_error("backward_from_dlogits: grad layout mismatch");
    }
    const S* P = m.params.data();
    S* G = grad.data();

    std::vector<S>& dxs = ws.bwd_dxs;  // gradient of the stream entering the final norm
    std::vector<S>& dtmp = ws.bwd_dtmp;
    std::fill(dxs.begin(), dxs.end(), S(0));

    // output head
    for (std::size_t p = 0; p < n; ++p) {
        const S* dz = dlogits + p * nv;
        std::fill(dtmp.begin(), dtmp.end(), S(0));
        detail::matvec_backward(P + m.wout, ws.fin_ln.data() + p * d, dz, G + m.wout, dtmp.data(),
                                nv, d);
        detail::rmsnorm_backward(ws.xs.data() + (c.n_layers * L + p) * d, P + m.final_norm,
                                 ws.inv_rms_f[p], dtmp.data(), G + m.final_norm, dxs.data() + p * d,
                                 d);
    }

    std::vector<S>& d_mid = ws.bwd_dmid;
    std::vector<S>& d_ln = ws.bwd_dln;
    std::vector<S>& d_fa = ws.bwd_dfa;
    std::vector<S>& d_fb = ws.bwd_dfb;
    std::vector<S>& d_fact = ws.bwd_dfact;
    std::vector<S>& dq = ws.bwd_dq;
    std::vector<S>& dk = ws.bwd_dk;
    std::vector<S>& dv = ws.bwd_dv;
    std::vector<S>& datto = ws.bwd_datto;
    std::vector<S>& da = ws.bwd_da;
    const S scale = S(1) / std::sqrt(S(dh));

    for (std::size_t layer = c.n_layers; layer-- > 0;) {
        const auto& lo = m.layers[layer];

        // FFN block: x_next = mid + Wd act(ln2(mid))
        std::fill(d_mid.begin(), d_mid.end(), S(0));
        for (std::size_t p = 0; p < n; ++p) {
            const S* dx_next = dxs.data() + p * d;
            for (std::size_t i = 0; i < d; ++i) {
                d_mid[p * d + i] += dx_next[i];
            }
            std::fill(d_fact.begin(), d_fact.end(), S(0));
            detail::matvec_backward(P + lo.ffn_out, ws.ffn_act.data() + (layer * L + p) * ff,
                                    dx_next, G + lo.ffn_out, d_fact.data(), d, ff);
            const S* fa = ws.ffn_a.data() + (layer * L + p) * ff;
            std::fill(d_ln.begin(), d_ln.end(), S(0));
            if (c.arch == Arch::Llama) {
                const S* fb = ws.ffn_b.data() + (layer * L + p) * ff;
                const S* fsig = ws.ffn_sig.data() + (layer * L + p) * ff;
                for (std::size_t i = 0; i < ff; ++i) {
                    const S sig = fsig[i];
                    d_fa[i] = d_fact[i] * fb[i] * sig * (S(1) + fa[i] * (S(1) - sig));
                    d_fb[i] = d_fact[i] * fa[i] * sig;
                }
                detail::matvec_backward(P + lo.ffn_gate, ws.ln2.data() + (layer * L + p) * d,
                                        d_fa.data(), G + lo.ffn_gate, d_ln.data(), ff, d);
                detail::matvec_backward(P + lo.ffn_up, ws.ln2.data() + (layer * L + p) * d,
                                        d_fb.data(), G + lo.ffn_up, d_ln.data(), ff, d);
            } else {
                for (std::size_t i = 0; i < ff; ++i) {
                    d_fa[i] = d_fact[i] * detail::gelu_grad(fa[i]);
                }
                detail::matvec_backward(P + lo.ffn_gate, ws.ln2.data() + (layer * L + p) * d,
                                        d_fa.data(), G + lo.ffn_gate, d_ln.data(), ff, d);
            }
            detail::rmsnorm_backward(ws.resid_mid.data() + (layer * L + p) * d, P + lo.norm_ffn,
                                     ws.inv_rms2[layer * L + p], d_ln.data(), G + lo.norm_ffn,
                                     d_mid.data() + p * d, d);
        }

        // attention block: mid = x + Wo atto
        std::fill(dxs.begin(), dxs.end(), S(0));
        std::fill(dq.begin(), dq.end(), S(0));
        std::fill(dk.begin(), dk.end(), S(0));
        std::fill(dv.begin(), dv.end(), S(0));
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t i = 0; i < d; ++i) {
                dxs[p * d + i] += d_mid[p * d + i];  // residual path
            }
            std::fill(datto.begin(), datto.end(), S(0));
            detail::matvec_backward(P + lo.wo, ws.atto.data() + (layer * L + p) * d,
                                    d_mid.data() + p * d, G + lo.wo, datto.data(), d, d);
            for (std::size_t h = 0; h < nh; ++h) {
                const S* aw = ws.attw.data() + ((layer * nh + h) * L + p) * L;
                const S* do_h = datto.data() + h * dh;
                // da and the softmax Jacobian
                S dsed = 0;
                for (std::size_t j = 0; j <= p; ++j) {
                    const S* vj = ws.v.data() + (layer * L + j) * d + h * dh;
                    S acc = 0;
                    for (std::size_t i = 0; i < dh; ++i) {
                        acc += do_h[i] * vj[i];
                        dv[j * d + h * dh + i] += aw[j] * do_h[i];
                    }
                    da[j] = acc;
                    dsed += aw[j] * acc;
                }
                const S* qp = ws.q.data() + (layer * L + p) * d + h * dh;
                for (std::size_t j = 0; j <= p; ++j) {
                    const S ds = aw[j] * (da[j] - dsed) * scale;
                    const S* kj = ws.k.data() + (layer * L + j) * d + h * dh;
                    for (std::size_t i = 0; i < dh; ++i) {
                        dq[p * d + h * dh + i] += ds * kj[i];
                        dk[j * d + h * dh + i] += ds * qp[i];
                    }
                }
            }
        }
        for (std::size_t p = 0; p < n; ++p) {
            if (c.arch == Arch::Llama) {
                const S* cr = m.rope_cos.data() + p * (dh / 2);
                const S* sr = m.rope_sin.data() + p * (dh / 2);
                for (std::size_t h = 0; h < nh; ++h) {
                    detail::rope(dq.data() + p * d + h * dh, dh, cr, sr, -1);
                    detail::rope(dk.data() + p * d + h * dh, dh, cr, sr, -1);
                }
            }
            std::fill(d_ln.begin(), d_ln.end(), S(0));
            const S* ln = ws.ln1.data() + (layer * L + p) * d;
            detail::matvec_backward(P + lo.wq, ln, dq.data() + p * d, G + lo.wq, d_ln.data(), d, d);
            detail::matvec_backward(P + lo.wk, ln, dk.data() + p * d, G + lo.wk, d_ln.data(), d, d);
            detail::matvec_backward(P + lo.wv, ln, dv.data() + p * d, G + lo.wv, d_ln.data(), d, d);
            detail::rmsnorm_backward(ws.xs.data() + (layer * L + p) * d, P + lo.norm_attn,
                                     ws.inv_rms1[layer * L + p], d_ln.data(), G + lo.norm_attn,
                                     dxs.data() + p * d, d);
        }
    }

    // embeddings
    for (std::size_t p = 0; p < n; ++p) {
        S* de = G + m.tok_emb + static_cast<std::size_t>(ws.inputs[p]) * d;
        for (std::size_t i = 0; i < d; ++i) {
            de[i] += dxs[p * d + i];
        }
        if (c.arch == Arch::Absolute) {
            S* dp = G + m.pos_emb + p * d;
            for (std::size_t i = 0; i < d; ++i) {
                dp[i] += dxs[p * d + i];
            }
        }
    }
}

struct Decoding {
    enum class Kind { Plain, TopP };
    Kind kind = Kind::Plain;
    double p = 1.0;
};

/// Autoregressive completion: sample each next token from the softmax of
/// the logits, optionally top-p truncated first, then tempered. t = 0 is
/// greedy argmax with lowest-id tie breaking.
template <typename S>
TokenSeq generate(const Model<S>& m, std::span<const TokenId> prompt, double t, Decoding decoding,
                  Rng& rng, Workspace<S>* reuse = nullptr) {
    const ModelConfig& c = m.cfg;
    if (prompt.size() >= c.seq_len + 1) {
        throw std::domain_error("generate: prompt must be shorter than seq_len");
    }
    if (t < 0.0 || !std::isfinite(t)) {
        throw std::domain_error("generate: temperature must be finite and >= 0");
    }
    Workspace<S> local(c);
    Workspace<S>& ws = reuse != nullptr ? *reuse : local;
    ws.reset();

    TokenSeq out(prompt.begin(), prompt.end());
    const TokenId bos = static_cast<TokenId>(c.vocab_size);
    forward_position(m, ws, bos);
    for (std::size_t i = 0; i < prompt.size(); ++i) {
        forward_position(m, ws, prompt[i]);
    }
    while (out.size() < c.seq_len) {
        const std::size_t pos = out.size();
        const S* pr = ws.probs.data() + pos * c.vocab_size;
        std::vector<double> probs(c.vocab_size);
        for (std::size_t i = 0; i < c.vocab_size; ++i) {
            probs[i] = static_cast<double>(pr[i]);
        }
        Categorical dist = Categorical::normalized(std::move(probs));
        if (decoding.kind == Decoding::Kind::TopP) {
            dist = top_p(dist, decoding.p);
        }
        TokenId next;
        if (t == 0.0) {
            next = static_cast<TokenId>(argmax_lowest_id(dist));
        } else {
            next = static_cast<TokenId>(sample(temper(dist, t), rng));
        }
        out.push_back(next);
        if (out.size() < c.seq_len) {
            forward_position(m, ws, next);
        }
    }
    return out;
}

/// Views the model as a factorized sequence distribution (conditionals in
/// double precision), for the exact PR machinery and the sparsity probe.
template <typename S>
FactorizedSeqDist as_seq_dist(const Model<S>& m) {
    auto model_copy = std::make_shared<Model<S>>(m);
    return FactorizedSeqDist{
        m.cfg.vocab_size, m.cfg.seq_len, [model_copy](std::span<const TokenId> ctx) {
            Workspace<S> ws(model_copy->cfg);
            const TokenId bos = static_cast<TokenId>(model_copy->cfg.vocab_size);
            forward_position(*model_copy, ws, bos);
            for (TokenId t : ctx) {
                forward_position(*model_copy, ws, t);
            }
            const std::size_t nv = model_copy->cfg.vocab_size;
            const S* pr = ws.probs.data() + ctx.size() * nv;
            std::vector<double> probs(nv);
            for (std::size_t i = 0; i < nv; ++i) {
                probs[i] = static_cast<double>(pr[i]);
            }
            return Categorical::normalized(std::move(probs));
        }};
}

}  // namespace prgen::nn
