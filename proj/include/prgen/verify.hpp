#pragma once

// The oracle suite behind `prgen verify`: closed forms against exhaustive
// enumeration, the sparsity bound, the epsilon0 trend split, transformer
// gradients against finite differences, loss-family identities, the two
// fixed-point characterizations, and the pass@k estimator against subset
// averaging. Each check is independent and reports pass/fail with a
// one-line detail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "prgen/artificial_case.hpp"
#include "prgen/losses.hpp"
#include "prgen/modmul.hpp"
#include "prgen/pass_at_k.hpp"
#include "prgen/pr_metrics.hpp"
#include "prgen/train.hpp"
#include "prgen/transformer.hpp"

namespace prgen::verify {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

namespace detail {

class Timer {
public:
    Timer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

inline std::vector<artcase::ArtCaseParams> closed_form_grid() {
    using artcase::ArtCaseParams;
    std::vector<ArtCaseParams> sets;
    const auto add = [&](std::size_t v, std::size_t k, std::size_t l, std::size_t l1,
                         std::size_t l2, double rho, double a, double eps) {
        ArtCaseParams p;
        p.vocab_size = v;
        p.supp_size = k;
        p.length = l;
        p.l1 = l1;
        p.l2 = l2;
        p.rho = rho;
        p.a = a;
        p.epsilon = eps;
        p.validate();
        sets.push_back(p);
    };
    add(6, 3, 3, 1, 2, 1.0 / 3.0, 0.5, 0.10);
    add(8, 4, 3, 2, 3, 0.5, 0.80, 0.20);
    add(8, 4, 2, 2, 1, 0.25, 0.60, 0.15);  // l2 before l1
    add(4, 2, 4, 1, 4, 0.5, 0.90, 0.25);
    add(6, 4, 3, 3, 1, 0.5, 0.75, 0.05);
    add(8, 2, 4, 2, 4, 0.5, 0.95, 0.30);
    add(5, 3, 3, 1, 3, 1.0 / 3.0, 0.40, 0.12);
    add(7, 3, 2, 1, 2, 2.0 / 3.0, 0.70, 0.18);
    add(8, 8, 2, 1, 2, 0.5, 0.75, 0.0);  // dense target, no off-support noise
    return sets;
}

inline std::vector<double> simplex_project(std::vector<double> v) {
    // Euclidean projection onto the probability simplex.
    std::vector<double> u = v;
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0;
    double theta = 0.0;
    std::size_t rho = 0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        cum += u[j];
        const double t = (cum - 1.0) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) {
            rho = j + 1;
            theta = t;
        }
    }
    for (double& x : v) {
        x = std::max(0.0, x - theta);
    }
    return v;
}

struct LogitModel {
    std::size_t vocab = 0, len = 0;
    std::vector<std::vector<double>> rows;

    FactorizedSeqDist dist(double t) const {
        auto rows_copy = std::make_shared<std::vector<std::vector<double>>>(rows);
        const std::size_t v = vocab;
        return FactorizedSeqDist{vocab, len, [rows_copy, v, t](std::span<const TokenId> ctx) {
                                     std::size_t idx = 0, offset = 0, p = 1;
                                     for (std::size_t l = 0; l < ctx.size(); ++l) {
                                         idx = idx * v + ctx[l];
                                         offset += p;
                                         p *= v;
                                     }
                                     const auto& row = (*rows_copy)[offset + idx];
                                     double mx = row[0];
                                     for (double z : row) mx = std::max(mx, z);
                                     std::vector<double> w(row.size());
                                     for (std::size_t i = 0; i < row.size(); ++i) {
                                         w[i] = std::exp((row[i] - mx) / t);
                                     }
                                     return Categorical::normalized(std::move(w));
                                 }};
    }
};

inline LogitModel random_logit_model(Rng& rng, std::size_t vocab, std::size_t len) {
    std::size_t n_contexts = 0, p = 1;
    for (std::size_t l = 0; l < len; ++l) {
        n_contexts += p;
        p *= vocab;
    }
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    LogitModel m{vocab, len, {}};
    m.rows.assign(n_contexts, std::vector<double>(vocab));
    for (auto& row : m.rows) {
        for (double& z : row) z = uni(rng);
    }
    return m;
}

inline Categorical random_sparse_categorical(Rng& rng, std::size_t vocab, double zero_frac) {
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

inline FactorizedSeqDist random_sparse_dist(Rng& rng, std::size_t vocab, std::size_t len,
                                            double zero_frac) {
    std::size_t n_contexts = 0, p = 1;
    for (std::size_t l = 0; l < len; ++l) {
        n_contexts += p;
        p *= vocab;
    }
    auto tables = std::make_shared<std::vector<Categorical>>();
    tables->reserve(n_contexts);
    for (std::size_t i = 0; i < n_contexts; ++i) {
        tables->push_back(random_sparse_categorical(rng, vocab, zero_frac));
    }
    return FactorizedSeqDist{vocab, len, [tables, vocab](std::span<const TokenId> ctx) {
                                 std::size_t idx = 0, offset = 0, p = 1;
                                 for (std::size_t l = 0; l < ctx.size(); ++l) {
                                     idx = idx * vocab + ctx[l];
                                     offset += p;
                                     p *= vocab;
                                 }
                                 return (*tables)[offset + idx];
                             }};
}

}  // namespace detail

/// Criterion: closed-form artificial-case PR equals exhaustive enumeration
/// over 225 (params, t, lambda) combinations within 1e-9.
inline CheckResult check_closed_form_vs_enumeration() {
    detail::Timer timer;
    CheckResult res;
    res.name = "closed_form_vs_enumeration";
    const std::vector<double> temps{0.5, 1.0, 2.0, 5.0, 10.0};
    const std::vector<double> lambdas{0.05, 0.3, 1.0, 3.0, 30.0};
    double max_dev = 0.0;
    std::size_t combos = 0;
    for (const artcase::ArtCaseParams& p : detail::closed_form_grid()) {
        const FactorizedSeqDist target = artcase::build_p(p);
        const FactorizedSeqDist model = artcase::build_q(p);
        for (double t : temps) {
            const FactorizedSeqDist tempered = artcase::temper_each(model, t);
            for (double lam : lambdas) {
                const PRPoint exact = pr_point_exact(target, tempered, lam);
                const PRPoint closed = artcase::pr_closed_form(p, t, lam);
                max_dev = std::max(max_dev, std::abs(exact.alpha - closed.alpha));
                max_dev = std::max(max_dev, std::abs(exact.beta - closed.beta));
                ++combos;
            }
        }
    }
    res.seconds = timer.seconds();
    res.passed = combos >= 200 && max_dev <= 1e-9;
    std::ostringstream os;
    os << combos << " combos, max |closed - enum| = " << max_dev;
    res.detail = os.str();
    return res;
}

/// Criterion: alpha_lambda = lambda * beta_lambda within 1e-9 on every
/// computed point, exact and closed form.
inline CheckResult check_pr_identity() {
    detail::Timer timer;
    CheckResult res;
    res.name = "pr_identity_alpha_eq_lambda_beta";
    double max_dev = 0.0;
    std::size_t points = 0;
    Rng rng(20240612);
    const std::vector<double> lambdas{0.05, 0.2, 1.0, 4.0, 25.0};
    for (int it = 0; it < 30; ++it) {
        const std::size_t v = 2 + static_cast<std::size_t>(it) % 6;
        const std::size_t l = 1 + static_cast<std::size_t>(it) % 3;
        const FactorizedSeqDist p = detail::random_sparse_dist(rng, v, l, 0.3);
        const FactorizedSeqDist q = detail::random_sparse_dist(rng, v, l, 0.1);
        const PRCurve curve = pr_curve_exact(p, q, lambdas);
        for (const PRPoint& pt : curve.points) {
            max_dev = std::max(max_dev, std::abs(pt.alpha - pt.lambda * pt.beta));
            ++points;
        }
    }
    for (const artcase::ArtCaseParams& p : detail::closed_form_grid()) {
        for (double t : {0.5, 1.0, 3.0}) {
            for (double lam : lambdas) {
                const PRPoint pt = artcase::pr_closed_form(p, t, lam);
                max_dev = std::max(max_dev, std::abs(pt.alpha - pt.lambda * pt.beta));
                ++points;
            }
        }
    }
    res.seconds = timer.seconds();
    res.passed = max_dev <= 1e-9;
    std::ostringstream os;
    os << points << " points, max |alpha - lambda*beta| = " << max_dev;
    res.detail = os.str();
    return res;
}

/// Criterion: on 100 random logit-parameterized models, enumerated
/// alpha_lambda never exceeds (|Supp(P)|/V^L) e^(ZL/t).
inline CheckResult check_sparsity_bound() {
    detail::Timer timer;
    CheckResult res;
    res.name = "sparsity_bound_never_violated";
    Rng rng(777);
    const std::vector<double> temps{0.3, 0.5, 1.0, 2.0, 5.0, 10.0};
    const std::vector<double> lambdas{0.1, 0.5, 1.0, 2.0, 10.0};
    std::size_t violations = 0;
    std::size_t tested = 0;
    for (int it = 0; it < 100; ++it) {
        const std::size_t v = 2 + static_cast<std::size_t>(it) % 5;
        const std::size_t l = 1 + static_cast<std::size_t>(it) % 3;
        const detail::LogitModel model = detail::random_logit_model(rng, v, l);
        const FactorizedSeqDist p = detail::random_sparse_dist(rng, v, l, 0.4);
        double supp = 0.0;
        enumerate_pair(p, p, [&](double pp, double) { supp += pp > 0.0 ? 1.0 : 0.0; });
        const double z = max_logit_gap(model.rows);
        for (double t : temps) {
            const FactorizedSeqDist q = model.dist(t);
            for (double lam : lambdas) {
                const PRPoint pt = pr_point_exact(p, q, lam);
                const SparsityBound b = sparsity_bound(supp, v, l, z, t, lam);
                violations += pt.alpha > b.alpha_raw + 1e-12 ? 1 : 0;
                violations += pt.beta > b.beta_raw + 1e-12 ? 1 : 0;
                ++tested;
            }
        }
    }
    res.seconds = timer.seconds();
    res.passed = violations == 0;
    std::ostringstream os;
    os << tested << " (model, t, lambda) points, " << violations << " violations";
    res.detail = os.str();
    return res;
}

/// Criterion: the finite-differenced middle-regime factor over t in
/// [1, 100] is eventually decreasing when epsilon < epsilon0 and
/// increasing when epsilon > epsilon0, for 20 parameter sets.
inline CheckResult check_epsilon0_sign() {
    detail::Timer timer;
    CheckResult res;
    res.name = "epsilon0_trend_split";

    struct Family {
        std::size_t v, k;
        double rho, a;
    };
    // Families with epsilon0 around 0.2..0.45 so both sides stay in the
    // admissible range; margins keep the below-side peak inside [1, 100].
    const std::vector<Family> families{
        {100, 50, 0.5, 0.725}, {100, 50, 0.5, 0.8},  {80, 40, 0.5, 0.75},
        {60, 30, 0.5, 0.7},    {100, 40, 0.5, 0.75}, {50, 20, 0.5, 0.7},
        {100, 50, 0.4, 0.7},   {90, 30, 1.0 / 3.0, 0.9}, {40, 20, 0.5, 0.65},
        {120, 60, 0.5, 0.775},
    };

    const auto trend = [](const artcase::ArtCaseParams& p) {
        std::vector<double> vals;
        for (double t = 1.0; t <= 100.0; t += 0.5) {
            vals.push_back(artcase::regime_boundaries(p, t).lambda_min);
        }
        const std::size_t n = vals.size() - 1;
        const std::size_t tail = n / 5;
        bool tail_neg = true, all_pos = true;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = vals[i + 1] - vals[i];
            if (i >= n - tail) {
                tail_neg = tail_neg && d < 0.0;
            }
            all_pos = all_pos && d > 0.0;
        }
        return std::pair<bool, bool>(tail_neg, all_pos);
    };

    std::size_t agreed = 0;
    std::size_t total = 0;
    for (const Family& f : families) {
        artcase::ArtCaseParams p;
        p.vocab_size = f.v;
        p.supp_size = f.k;
        p.length = 2;
        p.l1 = 1;
        p.l2 = 2;
        p.rho = f.rho;
        p.a = f.a;
        p.epsilon = 0.01;
        const double eps0 = artcase::epsilon0(p).value;

        p.epsilon = 0.5 * eps0;  // below: eventually decreasing in t
        ++total;
        agreed += trend(p).first ? 1 : 0;

        p.epsilon = std::min(0.5, 1.3 * eps0);  // above: increasing throughout
        ++total;
        agreed += trend(p).second ? 1 : 0;
    }
    res.seconds = timer.seconds();
    res.passed = total >= 20 && agreed == total;
    std::ostringstream os;
    os << agreed << "/" << total << " parameter sets agree with the epsilon0 prediction";
    res.detail = os.str();
    return res;
}

/// Criterion: all parameter groups of the reduced-width transformer pass
/// central finite differences (step 1e-4) with relative error below 1e-4.
inline CheckResult check_transformer_gradients() {
    detail::Timer timer;
    CheckResult res;
    res.name = "transformer_gradient_check";
    double worst = 0.0;
    std::string worst_group;
    for (nn::Arch arch : {nn::Arch::Llama, nn::Arch::Absolute}) {
        nn::ModelConfig cfg;
        cfg.vocab_size = 5;
        cfg.seq_len = 3;
        cfg.n_layers = 2;
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.d_ff = 16;
        cfg.seed = 7;
        cfg.arch = arch;
        nn::Model<double> model = nn::Model<double>::init(cfg);
        // Wider random point keeps the norm curvature mild for the stencil.
        for (const nn::ParamGroup& g : model.groups) {
            if (g.name.find("norm") != std::string::npos) continue;
            for (std::size_t i = 0; i < g.size; ++i) model.params[g.offset + i] *= 5.0;
        }
        Rng rng(42);
        std::uniform_int_distribution<TokenId> tok(0, 4);
        std::vector<TokenSeq> batch(3, TokenSeq(3));
        for (TokenSeq& x : batch) {
            for (TokenId& t : x) t = tok(rng);
        }
        losses::TokenWeights w(batch.size(), cfg.seq_len, 1.0);
        std::uniform_real_distribution<double> uw(0.3, 1.7);
        for (double& v : w.data) v = uw(rng);

        std::vector<double> grad;
        nn::loss_and_grads(model, batch, w, grad);

        const auto loss_only = [&]() {
            nn::Workspace<double> ws(cfg);
            double loss = 0.0;
            for (std::size_t r = 0; r < batch.size(); ++r) {
                nn::forward_cache(model, batch[r], ws);
                double seq = 0.0;
                for (std::size_t l = 0; l < batch[r].size(); ++l) {
                    seq += w.at(r, l) * ws.logprobs[l * cfg.vocab_size + batch[r][l]];
                }
                loss -= seq / static_cast<double>(batch.size());
            }
            return loss;
        };

        const double h = 1e-4;
        for (const nn::ParamGroup& g : model.groups) {
            for (std::size_t i = 0; i < g.size; ++i) {
                const std::size_t idx = g.offset + i;
                const double keep = model.params[idx];
                model.params[idx] = keep + h;
                const double up = loss_only();
                model.params[idx] = keep - h;
                const double dn = loss_only();
                model.params[idx] = keep;
                const double fd = (up - dn) / (2.0 * h);
                const double err =
                    std::abs(fd - grad[idx]) / std::max({std::abs(fd), std::abs(grad[idx]), 1e-4});
                if (err > worst) {
                    worst = err;
                    worst_group = std::string(arch == nn::Arch::Llama ? "llama/" : "absolute/") +
                                  g.name;
                }
            }
        }
    }
    res.seconds = timer.seconds();
    res.passed = worst < 1e-4 && res.seconds <= 60.0;
    std::ostringstream os;
    os << "worst rel err " << worst << " (" << worst_group << ")";
    res.detail = os.str();
    return res;
}

/// Criterion: c-Div at alpha = 1 walks the NLL parameter trajectory bit
/// for bit, and lambda-PR at lambda = 1 matches TaiLr weights to 1e-12.
inline CheckResult check_loss_family_identities(std::size_t n_threads = 0) {
    detail::Timer timer;
    CheckResult res;
    res.name = "loss_family_identities";

    Rng data_rng(99);
    modmul::SkewSpec skew;
    skew.b_level = 0.5;
    std::vector<TokenSeq> data;
    for (const modmul::MulSample& s : modmul::gen_dataset(2048, skew, data_rng)) {
        data.push_back(s.tokens);
    }
    nn::ModelConfig mcfg;
    mcfg.seed = 11;
    const auto run = [&](losses::LossMethod method, double alpha) {
        nn::Model<float> m = nn::Model<float>::init(mcfg);
        nn::AdamState<float> st = nn::AdamState<float>::zeros_like(m);
        nn::TrainConfig tc;
        tc.epochs = 3;
        tc.batch_size = 512;
        tc.seed = 4;
        tc.n_threads = n_threads;
        tc.loss.method = method;
        tc.loss.alpha = alpha;
        tc.loss.seq_len = mcfg.seq_len;
        nn::train(m, st, data, tc);
        return m.params;
    };
    const std::vector<float> nll = run(losses::LossMethod::Nll, 0.5);
    const std::vector<float> cdiv1 = run(losses::LossMethod::CDiv, 1.0);
    const bool bitwise =
        std::memcmp(nll.data(), cdiv1.data(), nll.size() * sizeof(float)) == 0;

    Rng rng(314159);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double max_dev = 0.0;
    for (int it = 0; it < 10000; ++it) {
        const double q = std::pow(uni(rng), 4.0) * 0.999999;
        const double g = 1e-7 + uni(rng) * (1.0 - 1e-7);
        const std::size_t l = 1 + static_cast<std::size_t>(it) % 8;
        max_dev = std::max(max_dev, std::abs(losses::weights_lambda_pr(q, g, 1.0, l, 8) -
                                             losses::weights_tailr(q, g)));
    }

    res.seconds = timer.seconds();
    res.passed = bitwise && max_dev <= 1e-12;
    std::ostringstream os;
    os << (bitwise ? "NLL == cDiv(1) bitwise; " : "NLL != cDiv(1); ")
       << "max |lambdaPR(1) - TaiLr| = " << max_dev;
    res.detail = os.str();
    return res;
}

/// TaiLr side of criterion 7: projected gradient descent with the TaiLr
/// weight recovers (P(x)(1-gamma+V gamma) - gamma)/(1-gamma) within 1e-4
/// sup-norm for interior instances.
inline CheckResult check_tailr_fixed_point(
    const std::function<double(double, double)>& weight_fn = [](double q, double g) {
        return losses::weights_tailr(q, g);
    }) {
    detail::Timer timer;
    CheckResult res;
    res.name = "fixed_points.tailr";
    Rng rng(1618);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double worst = 0.0;
    for (std::size_t v : {std::size_t{2}, std::size_t{5}}) {
        for (double gamma : {0.05, 0.2}) {
            // interior target: every entry above gamma / (1 - gamma + V gamma)
            const double floor = gamma / (1.0 - gamma + static_cast<double>(v) * gamma);
            std::vector<double> p(v);
            double rest = 0.0;
            for (double& x : p) {
                x = uni(rng);
                rest += x;
            }
            const double base = 1.2 * floor;
            for (double& x : p) {
                x = base + (1.0 - static_cast<double>(v) * base) * (x / rest);
            }

            std::vector<double> q(v, 1.0 / static_cast<double>(v));
            for (int step = 0; step < 200000; ++step) {
                const double eta = 0.02 / (1.0 + step / 20000.0);
                for (std::size_t i = 0; i < v; ++i) {
                    const double qi = std::max(q[i], 1e-12);
                    q[i] += eta * p[i] * weight_fn(qi, gamma) / qi;
                }
                q = detail::simplex_project(std::move(q));
            }
            for (std::size_t i = 0; i < v; ++i) {
                const double opt =
                    (p[i] * (1.0 - gamma + static_cast<double>(v) * gamma) - gamma) / (1.0 - gamma);
                worst = std::max(worst, std::abs(q[i] - opt));
            }
        }
    }
    res.seconds = timer.seconds();
    res.passed = worst <= 1e-4;
    std::ostringstream os;
    os << "sup-norm deviation from the closed optimum = " << worst;
    res.detail = os.str();
    return res;
}

/// Constrained-optimization oracle for the TruncR optimum. The gate's
/// self-consistent kept set S is the bottom-(1-Delta) P-mass; the optimum
/// waterfills Q_i = min(delta, P_i / lambda) on S with the off-S mass
/// parked exactly at the ceiling. Enumerates the clip count and returns
/// the likelihood-maximizing feasible level.
inline std::vector<double> truncr_waterfill_oracle(const std::vector<double>& p, double keep) {
    const std::size_t v = p.size();
    std::vector<std::size_t> order(v);
    for (std::size_t i = 0; i < v; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    double cum = 0.0;
    std::size_t kept_count = v;
    for (std::size_t j = 0; j < v; ++j) {
        cum += p[order[j]];
        if (cum >= keep - 1e-12) {
            kept_count = j + 1;
            break;
        }
    }
    const std::size_t n_capped = v - kept_count;

    double best_g = -std::numeric_limits<double>::infinity();
    std::vector<double> best_q;
    // clip the c highest-P kept coordinates to the shared ceiling
    for (std::size_t c = 0; c < kept_count; ++c) {
        double clipped_mass = 0.0;
        for (std::size_t j = kept_count - c; j < kept_count; ++j) {
            clipped_mass += p[order[j]];
        }
        const double n_at_ceiling = static_cast<double>(c + n_capped);
        double lambda, ceiling;
        if (n_at_ceiling == 0.0) {
            lambda = keep;  // nothing capped: plain renormalization
            ceiling = std::numeric_limits<double>::infinity();
        } else if (c == 0) {
            // ceiling rides on the largest kept coordinate
            const double pmax = p[order[kept_count - 1]];
            lambda = keep + pmax * static_cast<double>(n_capped);
            ceiling = pmax / lambda;
        } else {
            // sum_unclipped P/lambda + n_at_ceiling * ceiling = 1 with
            // ceiling = clipped_mass / (lambda * (c + n_capped))
            const double unclipped = keep - clipped_mass;
            lambda = unclipped + clipped_mass;  // = keep, but kept explicit
            ceiling = clipped_mass / (lambda * n_at_ceiling);
        }
        // feasibility: unclipped stay below the ceiling, clipped above it
        bool ok = true;
        std::vector<double> q(v, ceiling);
        for (std::size_t j = 0; j < kept_count - c; ++j) {
            const double qi = p[order[j]] / lambda;
            if (qi > ceiling * (1.0 + 1e-12)) ok = false;
            q[order[j]] = qi;
        }
        for (std::size_t j = kept_count - c; j < kept_count; ++j) {
            if (p[order[j]] / lambda < ceiling * (1.0 - 1e-12)) ok = false;
        }
        if (!ok) continue;
        double total = 0.0, g = 0.0;
        for (std::size_t i = 0; i < v; ++i) total += q[i];
        if (std::abs(total - 1.0) > 1e-9) continue;
        for (std::size_t j = 0; j < kept_count; ++j) {
            g += p[order[j]] * std::log(q[order[j]]);
        }
        if (g > best_g) {
            best_g = g;
            best_q = q;
        }
    }
    return best_q;
}

/// TruncR side of criterion 7: the production gate machinery (rolling
/// quantile buffer over sampled log-likelihoods) applied to a tabular
/// softmax model settles on the min(delta, gamma P) waterfill.
inline CheckResult check_truncr_fixed_point() {
    detail::Timer timer;
    CheckResult res;
    res.name = "fixed_points.truncr";

    struct Instance {
        std::vector<double> p;
        double keep;  // 1 - Delta, an attainable prefix mass of sorted p
    };
    const std::vector<Instance> instances{
        {{1 / 24.0, 2 / 24.0, 3 / 24.0, 4 / 24.0, 6 / 24.0, 8 / 24.0}, 16 / 24.0},
        {{0.1, 0.2, 0.3, 0.4}, 0.6},
        {{0.05, 0.15, 0.35, 0.45}, 0.55},
    };

    double worst = 0.0;
    double worst_structure = 0.0;
    for (const Instance& inst : instances) {
        const std::size_t v = inst.p.size();
        const std::vector<double>& p = inst.p;
        const std::vector<double> q_opt = truncr_waterfill_oracle(p, inst.keep);

        // one-token sequences: the sampled-batch gate dithers the tie at
        // the ceiling, which is what lets the average settle
        Rng rng(8675309);
        const Categorical pd(p);
        std::vector<double> z(v, 0.0), q(v), avg(v, 0.0), grad(v);
        losses::QuantileBuffer buf(1024);
        const int steps = 60000, batch = 128;
        int avg_n = 0;
        for (int step = 0; step < steps; ++step) {
            double mx = z[0];
            for (double x : z) mx = std::max(mx, x);
            double norm = 0.0;
            for (std::size_t i = 0; i < v; ++i) {
                q[i] = std::exp(z[i] - mx);
                norm += q[i];
            }
            for (double& x : q) x /= norm;
            std::fill(grad.begin(), grad.end(), 0.0);
            std::vector<std::size_t> xs(batch);
            for (int b = 0; b < batch; ++b) {
                xs[b] = sample(pd, rng);
                buf.push(std::log(q[xs[b]]));
            }
            const double thresh =
                buf.size() >= 256
                    ? losses::quantile_threshold(buf, inst.keep, losses::QuantileSide::Lowest)
                    : std::numeric_limits<double>::infinity();
            for (int b = 0; b < batch; ++b) {
                const double w = losses::weights_truncr(std::log(q[xs[b]]), thresh);
                for (std::size_t j = 0; j < v; ++j) {
                    grad[j] += w * (q[j] - (xs[b] == j ? 1.0 : 0.0));
                }
            }
            const double eta = 0.3 / (1.0 + step / 10000.0);
            for (std::size_t j = 0; j < v; ++j) {
                z[j] -= eta * grad[j] / batch;
            }
            if (step >= steps / 2) {
                for (std::size_t j = 0; j < v; ++j) avg[j] += q[j];
                ++avg_n;
            }
        }
        std::vector<double> q_hat(v);
        for (std::size_t j = 0; j < v; ++j) {
            q_hat[j] = avg[j] / avg_n;
        }
        for (std::size_t i = 0; i < v; ++i) {
            worst = std::max(worst, std::abs(q_hat[i] - q_opt[i]));
        }
        // structural fit: gamma from the least-likely coordinate, ceiling
        // from the most likely; q_hat must be min(ceiling, gamma * P)
        std::size_t lo = 0, hi = 0;
        for (std::size_t i = 1; i < v; ++i) {
            if (p[i] < p[lo]) lo = i;
            if (q_hat[i] > q_hat[hi]) hi = i;
        }
        const double gamma_fit = q_hat[lo] / p[lo];
        for (std::size_t i = 0; i < v; ++i) {
            worst_structure = std::max(
                worst_structure, std::abs(q_hat[i] - std::min(q_hat[hi], gamma_fit * p[i])));
        }
    }
    res.seconds = timer.seconds();
    res.passed = worst <= 2e-2 && worst_structure <= 2e-2;
    std::ostringstream os;
    os << "sup dev from waterfill oracle = " << worst << ", from min(delta, gamma P) fit = "
       << worst_structure;
    res.detail = os.str();
    return res;
}

inline CheckResult check_fixed_points() {
    detail::Timer timer;
    CheckResult a = check_tailr_fixed_point();
    CheckResult b = check_truncr_fixed_point();
    CheckResult res;
    res.name = "fixed_points";
    res.passed = a.passed && b.passed;
    res.detail = "tailr: " + a.detail + "; truncr: " + b.detail;
    res.seconds = timer.seconds();
    return res;
}

/// Criterion: pass@k equals exhaustive subset averaging exactly for all
/// n <= 12, including the n=5, c=2, k=2 -> 0.7 case.
inline CheckResult check_pass_at_k() {
    detail::Timer timer;
    CheckResult res;
    res.name = "pass_at_k_exhaustive";
    std::size_t mismatches = 0;
    std::size_t cases = 0;
    for (std::uint64_t n = 1; n <= 12; ++n) {
        for (std::uint64_t c = 0; c <= n; ++c) {
            for (std::uint64_t k = 1; k <= n; ++k) {
                // enumerate k-subsets of {0..n-1}; correct samples are 0..c-1
                std::vector<std::size_t> pick(k);
                for (std::uint64_t i = 0; i < k; ++i) pick[i] = i;
                std::uint64_t total = 0, hit = 0;
                while (true) {
                    ++total;
                    bool any = false;
                    for (std::uint64_t i = 0; i < k; ++i) {
                        any = any || pick[i] < c;
                    }
                    hit += any ? 1 : 0;
                    std::int64_t j = static_cast<std::int64_t>(k) - 1;
                    while (j >= 0 && pick[j] == n - k + static_cast<std::uint64_t>(j)) --j;
                    if (j < 0) break;
                    ++pick[j];
                    for (std::uint64_t i = static_cast<std::uint64_t>(j) + 1; i < k; ++i) {
                        pick[i] = pick[i - 1] + 1;
                    }
                }
                const double oracle = static_cast<double>(hit) / static_cast<double>(total);
                mismatches += pass_at_k(n, c, k) != oracle ? 1 : 0;
                ++cases;
            }
        }
    }
    const bool spot = pass_at_k(5, 2, 2) == 0.7;
    res.seconds = timer.seconds();
    res.passed = mismatches == 0 && spot;
    std::ostringstream os;
    os << cases << " (n,c,k) cases, " << mismatches << " mismatches; pass@2(n=5,c=2) = "
       << pass_at_k(5, 2, 2);
    res.detail = os.str();
    return res;
}

/// The full oracle suite bundled by `prgen verify` (and acceptance
/// criteria 1 through 8).
inline std::vector<CheckResult> run_all(std::size_t n_threads = 0) {
    std::vector<CheckResult> out;
    out.push_back(check_closed_form_vs_enumeration());
    out.push_back(check_pr_identity());
    out.push_back(check_sparsity_bound());
    out.push_back(check_epsilon0_sign());
    out.push_back(check_transformer_gradients());
    out.push_back(check_loss_family_identities(n_threads));
    out.push_back(check_fixed_points());
    out.push_back(check_pass_at_k());
    return out;
}

}  // namespace prgen::verify
