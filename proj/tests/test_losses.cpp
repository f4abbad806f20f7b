#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "prgen/categorical.hpp"
#include "prgen/losses.hpp"

using namespace prgen;
using namespace prgen::losses;
using Catch::Approx;

TEST_CASE("quantile_threshold order statistics") {
    QuantileBuffer buf(16);
    for (double v : {1.0, 2.0, 3.0, 4.0}) buf.push(v);

    CHECK(quantile_threshold(buf, 0.5, QuantileSide::Highest) == 3.0);
    CHECK(quantile_threshold(buf, 0.5, QuantileSide::Lowest) == 2.0);
    CHECK(quantile_threshold(buf, 0.999999, QuantileSide::Highest) == 1.0);  // min kept
    CHECK(quantile_threshold(buf, 0.25, QuantileSide::Highest) == 4.0);

    QuantileBuffer same(8);
    for (int i = 0; i < 5; ++i) same.push(7.5);
    for (double f : {0.1, 0.5, 0.9}) {
        CHECK(quantile_threshold(same, f, QuantileSide::Highest) == 7.5);
        CHECK(quantile_threshold(same, f, QuantileSide::Lowest) == 7.5);
    }

    QuantileBuffer empty(4);
    CHECK_THROWS_AS(quantile_threshold(empty, 0.5, QuantileSide::Highest), std::logic_error);
    CHECK_THROWS_AS(quantile_threshold(buf, 0.0, QuantileSide::Highest), std::domain_error);
}

TEST_CASE("QuantileBuffer evicts oldest first") {
    QuantileBuffer buf(3);
    for (double v : {1.0, 2.0, 3.0, 4.0, 5.0}) buf.push(v);
    CHECK(buf.size() == 3);
    std::vector<double> vals = buf.values();
    std::sort(vals.begin(), vals.end());
    CHECK(vals == std::vector<double>{3.0, 4.0, 5.0});
}

TEST_CASE("trunc and truncr gates include their boundary") {
    CHECK(weights_trunc(-5.0, -5.0) == 1.0);
    CHECK(weights_trunc(-5.0 - 1e-9, -5.0) == 0.0);
    CHECK(weights_truncr(-5.0, -5.0) == 1.0);
    CHECK(weights_truncr(-5.0 + 1e-9, -5.0) == 0.0);
}

TEST_CASE("kept fraction tracks 1 - delta over the buffer") {
    Rng rng(123);
    std::normal_distribution<double> gauss(-20.0, 5.0);
    QuantileBuffer buf(1024);
    for (int i = 0; i < 1000; ++i) buf.push(gauss(rng));
    const double n = static_cast<double>(buf.size());
    for (double delta : {0.1, 0.25, 0.5, 0.75}) {
        const double thresh = quantile_threshold(buf, 1.0 - delta, QuantileSide::Highest);
        double kept = 0.0;
        for (double v : buf.values()) kept += weights_trunc(v, thresh);
        CHECK(std::abs(kept / n - (1.0 - delta)) <= 1.0 / n + 1e-12);

        const double lo = quantile_threshold(buf, 1.0 - delta, QuantileSide::Lowest);
        double kept_lo = 0.0;
        for (double v : buf.values()) kept_lo += weights_truncr(v, lo);
        CHECK(std::abs(kept_lo / n - (1.0 - delta)) <= 1.0 / n + 1e-12);
    }
}

TEST_CASE("trunc and truncr partition clean splits exactly once") {
    Rng rng(321);
    std::uniform_real_distribution<double> uni(-30.0, -1.0);
    for (int it = 0; it < 50; ++it) {
        const std::size_t n = 8 * (1 + it % 4);
        QuantileBuffer buf(n);
        std::vector<double> vals;
        for (std::size_t i = 0; i < n; ++i) {
            double v;
            do {
                v = uni(rng);
            } while (std::count(vals.begin(), vals.end(), v) > 0);
            vals.push_back(v);
            buf.push(v);
        }
        const double delta = 0.25;  // (1-delta)*n integral for n multiple of 8
        const double hi = quantile_threshold(buf, 1.0 - delta, QuantileSide::Highest);
        const double lo = quantile_threshold(buf, delta, QuantileSide::Lowest);
        for (double v : vals) {
            CHECK(weights_trunc(v, hi) + weights_truncr(v, lo) == 1.0);
        }
    }
}

TEST_CASE("cdiv weights: GOLD, NLL and the recall-seeking side") {
    CHECK(weights_cdiv(0.25, 0.5) == Approx(0.5).margin(1e-15));
    CHECK(weights_cdiv(0.25, 1.4) == Approx(std::pow(0.25, -0.4)).margin(1e-15));
    CHECK(std::pow(0.25, -0.4) == Approx(1.7411).margin(1e-4));

    // alpha = 1 is weight 1 bit-for-bit, even at the floor
    for (double q : {0.0, 1e-300, 1e-12, 0.3, 1.0}) {
        CHECK(weights_cdiv(q, 1.0) == 1.0);
    }

    CHECK(weights_cdiv(0.0, 0.5) == 0.0);
    const double capped = weights_cdiv(0.0, 1.4);
    CHECK(std::isfinite(capped));
    CHECK(capped == Approx(std::pow(1e-12, -0.4)));
}

TEST_CASE("cdiv monotonicity flips at alpha = 1") {
    const std::vector<double> qs{0.05, 0.2, 0.5, 0.9};
    for (std::size_t i = 1; i < qs.size(); ++i) {
        CHECK(weights_cdiv(qs[i], 0.5) > weights_cdiv(qs[i - 1], 0.5));
        CHECK(weights_cdiv(qs[i], 1.0) == weights_cdiv(qs[i - 1], 1.0));
        CHECK(weights_cdiv(qs[i], 1.4) < weights_cdiv(qs[i - 1], 1.4));
    }
}

TEST_CASE("tailr weights") {
    CHECK(weights_tailr(0.37, 1.0) == Approx(0.37).margin(1e-15));
    CHECK(weights_tailr(1.0, 0.42) == Approx(1.0).margin(1e-15));
    CHECK(weights_tailr(0.5, 1e-5) == Approx(0.5 / (1e-5 + 0.499995)).margin(1e-12));
    CHECK(weights_tailr(0.5, 1e-5) == Approx(0.99999).margin(1e-5));

    Rng rng(55);
    std::uniform_real_distribution<double> uq(0.0, 1.0);
    for (int it = 0; it < 100; ++it) {
        const double g = 0.01 + 0.99 * uq(rng);
        double q1 = uq(rng), q2 = uq(rng);
        if (q1 > q2) std::swap(q1, q2);
        if (q1 == q2) continue;
        CHECK(weights_tailr(q1, g) < weights_tailr(q2, g));
    }
}

TEST_CASE("lambda-PR weight: gate, discount and the TaiLr limit") {
    // lambda = 0.1, gamma = 1e-5, L = 2, l = 2, q = 1e-6
    const double w = weights_lambda_pr(1e-6, 1e-5, 0.1, 2, 2);
    CHECK(w == Approx(0.0287479).margin(2e-6));

    // above the gate the weight is exactly zero
    const double root = std::sqrt(0.1);
    const double delta = root * 1e-5 / (1.0 - (1.0 - 1e-5) * root);
    CHECK(weights_lambda_pr(delta * 1.01, 1e-5, 0.1, 2, 2) == 0.0);
    CHECK(weights_lambda_pr(delta * 0.99, 1e-5, 0.1, 2, 2) > 0.0);

    // lambda = 1 reproduces TaiLr for random (q, gamma)
    Rng rng(77);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double max_dev = 0.0;
    for (int it = 0; it < 10000; ++it) {
        const double q = std::pow(uni(rng), 4.0) * 0.999999;  // skew toward small q
        const double g = 1e-7 + uni(rng) * (1.0 - 1e-7);
        for (std::size_t l = 1; l <= 4; ++l) {
            max_dev = std::max(max_dev,
                               std::abs(weights_lambda_pr(q, g, 1.0, l, 4) - weights_tailr(q, g)));
        }
    }
    CHECK(max_dev <= 1e-12);
}

TEST_CASE("weighted_nll reductions") {
    TokenTable lp(2, 3);
    TokenTable w(2, 3, 1.0);
    double expect = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
            lp.at(r, c) = -0.1 * static_cast<double>(r * 3 + c + 1);
            expect += lp.at(r, c);
        }
    }
    CHECK(weighted_nll(lp, w) == Approx(-expect / 2.0).margin(1e-15));

    TokenTable zero(2, 3, 0.0);
    CHECK(weighted_nll(lp, zero) == 0.0);

    TokenTable bad(2, 2, 1.0);
    CHECK_THROWS_AS(weighted_nll(lp, bad), std::domain_error);
}

TEST_CASE("compute_token_weights per method") {
    TokenTable lp(4, 2);
    Rng rng(9);
    std::uniform_real_distribution<double> uni(-3.0, -0.1);
    for (double& v : lp.data) v = uni(rng);

    SECTION("nll is all ones") {
        QuantileBuffer buf(8);
        LossSpec spec;
        spec.method = LossMethod::Nll;
        WeightStats st;
        const TokenWeights w = compute_token_weights(spec, lp, buf, &st);
        for (double v : w.data) CHECK(v == 1.0);
        CHECK(st.mean_weight == 1.0);
        CHECK(st.kept_fraction == 1.0);
    }

    SECTION("trunc warm-up leaves weights at one, then gates whole sequences") {
        LossSpec spec;
        spec.method = LossMethod::Trunc;
        spec.delta_frac = 0.5;
        QuantileBuffer buf(64);  // min fill 16
        WeightStats st;
        TokenWeights w = compute_token_weights(spec, lp, buf, &st);
        CHECK_FALSE(st.gating_active);
        for (double v : w.data) CHECK(v == 1.0);

        for (int step = 0; step < 4; ++step) {
            w = compute_token_weights(spec, lp, buf, &st);
        }
        CHECK(st.gating_active);
        for (std::size_t r = 0; r < w.rows; ++r) {
            CHECK(w.at(r, 0) == w.at(r, 1));
            CHECK((w.at(r, 0) == 0.0 || w.at(r, 0) == 1.0));
        }
    }

    SECTION("lambda-PR needs a matching seq_len") {
        LossSpec spec;
        spec.method = LossMethod::LambdaPR;
        spec.gamma = 1e-5;
        spec.lambda = 0.5;
        spec.seq_len = 3;
        QuantileBuffer buf(8);
        CHECK_THROWS_AS(compute_token_weights(spec, lp, buf), std::domain_error);
    }
}

namespace {

// Softmax over logits.
std::vector<double> softmax(const std::vector<double>& z) {
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double sum = 0.0;
    std::vector<double> p(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

// Tsallis surrogate phi(z) = (q_y^(1-alpha) - 1) / (alpha - 1).
double tsallis_surrogate(const std::vector<double>& z, std::size_t y, double alpha) {
    return (std::pow(softmax(z)[y], 1.0 - alpha) - 1.0) / (alpha - 1.0);
}

}  // namespace

TEST_CASE("cdiv weight reproduces the Tsallis alpha-divergence gradient") {
    Rng rng(2024);
    std::uniform_real_distribution<double> uni(-1.5, 1.5);
    for (double alpha : {0.5, 1.4, 2.0}) {
        for (int it = 0; it < 20; ++it) {
            std::vector<double> z(5);
            for (double& v : z) v = uni(rng);
            const std::size_t y = static_cast<std::size_t>(it % 5);
            const std::vector<double> q = softmax(z);

            // analytic: w * d(-log q_y)/dz_j with w = q_y^(1-alpha) detached
            const double w = weights_cdiv(q[y], alpha);
            for (std::size_t j = 0; j < 5; ++j) {
                const double analytic = w * (q[j] - (j == y ? 1.0 : 0.0));
                std::vector<double> zp = z, zm = z;
                zp[j] += 1e-4;
                zm[j] -= 1e-4;
                const double fd =
                    (tsallis_surrogate(zp, y, alpha) - tsallis_surrogate(zm, y, alpha)) / 2e-4;
                CHECK(std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8}) <
                      1e-5);
            }
        }
    }
}
