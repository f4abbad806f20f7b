#pragma once

// Feature-space Precision/Recall estimator: k-NN support balls around each
// sample, exact all-pairs distances. Intended for abstract embedding
// vectors; desk-scale point counts (N up to a few thousand).

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace prgen {

/// Real-valued feature vectors of one common dimension.
struct FeatureSet {
    std::vector<std::vector<double>> vectors;

    void validate() const {
        if (vectors.empty()) {
            throw std::invalid_argument("FeatureSet: empty");
        }
        const std::size_t dim = vectors.front().size();
        for (const auto& v : vectors) {
            if (v.size() != dim || dim == 0) {
                throw std::invalid_argument("FeatureSet: vectors must share a positive dimension");
            }
        }
    }
};

struct KnnPR {
    double precision = 0.0;
    double recall = 0.0;
};

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// Squared radius of each point's k-NN ball within its own set, self excluded.
inline std::vector<double> knn_sq_radii(const FeatureSet& set, std::size_t k) {
    const std::size_t n = set.vectors.size();
    std::vector<double> radii(n);
    std::vector<double> dists;
    dists.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        dists.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                dists.push_back(sq_dist(set.vectors[i], set.vectors[j]));
            }
        }
        std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
        radii[i] = dists[k - 1];
    }
    return radii;
}

// Fraction of query points lying inside at least one reference ball
// (boundary included).
inline double covered_fraction(const FeatureSet& queries, const FeatureSet& refs,
                               const std::vector<double>& ref_sq_radii) {
    std::size_t covered = 0;
    for (const auto& q : queries.vectors) {
        for (std::size_t i = 0; i < refs.vectors.size(); ++i) {
            if (sq_dist(q, refs.vectors[i]) <= ref_sq_radii[i]) {
                ++covered;
                break;
            }
        }
    }
    return static_cast<double>(covered) / static_cast<double>(queries.vectors.size());
}

}  // namespace detail

/// Precision: fraction of fake points inside the union of real k-NN balls.
/// Recall: the same with the roles of real and fake swapped.
inline KnnPR knn_pr(const FeatureSet& real, const FeatureSet& fake, std::size_t k = 4) {
    real.validate();
    fake.validate();
    if (k == 0) {
        throw std::domain_error("knn_pr: k must be positive");
    }
    if (real.vectors.size() < k + 1 || fake.vectors.size() < k + 1) {
        throw std::domain_error("knn_pr: both sets need at least k+1 points");
    }
    if (real.vectors.front().size() != fake.vectors.front().size()) {
        throw std::domain_error("knn_pr: dimension mismatch between sets");
    }
    KnnPR out;
    out.precision = detail::covered_fraction(fake, real, detail::knn_sq_radii(real, k));
    out.recall = detail::covered_fraction(real, fake, detail::knn_sq_radii(fake, k));
    return out;
}

}  // namespace prgen
