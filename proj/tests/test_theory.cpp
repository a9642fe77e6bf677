// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fastmmoe/theory.hpp"
#include "oracles.hpp"

using namespace fastmmoe;

TEST(Stability, EqualNorms) {
    auto s = stability_score(Vector{2.0, 2.0, 2.0});
    EXPECT_EQ(s.cv, 0.0);
    EXPECT_EQ(s.stability, 1.0);
}

TEST(Stability, UnitCvGivesHalf) {
    // mean 1, population stddev 1
    auto s = stability_score(Vector{0.0, 2.0});
    EXPECT_NEAR(s.cv, 1.0, 1e-15);
    EXPECT_NEAR(s.stability, 0.5, 1e-15);
}

TEST(Stability, HandStatistics) {
    auto s = stability_score(Vector{1.0, 2.0, 3.0});
    EXPECT_NEAR(s.mean, 2.0, 1e-15);
    EXPECT_NEAR(s.stddev, std::sqrt(2.0 / 3.0), 1e-12);
    EXPECT_NEAR(s.cv, 0.4082, 1e-4);
    EXPECT_NEAR(s.stability, 0.7101, 1e-4);
}

TEST(Stability, ZeroMeanRejected) {
    EXPECT_THROW(stability_score(Vector{0.0, 0.0}), InvalidInput);
    EXPECT_THROW(stability_score(Vector{}), InvalidInput);
}

TEST(Stability, ScaleInvariant) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    for (int trial = 0; trial < 200; ++trial) {
        Vector n(2 + rng() % 30);
        for (auto& v : n) v = u(rng);
        const double c = u(rng);
        Vector m = n;
        for (auto& v : m) v *= c;
        auto a = stability_score(n);
        auto b = stability_score(m);
        EXPECT_NEAR(a.cv, b.cv, 1e-12);
        EXPECT_NEAR(a.stability, b.stability, 1e-12);
        EXPECT_GT(a.stability, 0.0);
        EXPECT_LE(a.stability, 1.0);
    }
}

TEST(AngularBound, Values) {
    EXPECT_EQ(angular_lower_bound(8, 8), 1.0);
    EXPECT_NEAR(angular_lower_bound(4, 8), 0.70711, 1e-5);
    EXPECT_NEAR(angular_lower_bound(1, 128), 0.08839, 1e-5);
}

TEST(AngularBound, OrthonormalVectors) {
    auto p = orthonormal_vectors(6, 10, 3);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 6; ++j) {
            const double d = dot(p.row(i), p.row(j));
            EXPECT_NEAR(d, i == j ? 1.0 : 0.0, 1e-12);
        }
    }
    EXPECT_THROW(orthonormal_vectors(5, 4, 1), InvalidInput);
}

TEST(AngularBound, UniformWeightsHitEquality) {
    for (std::size_t K : {4u, 8u, 16u}) {
        for (std::size_t m = 1; m < K; ++m) {
            AngularCase c{Vector(K, 1.0 / static_cast<double>(K)), m, orthonormal_vectors(K, K + 3, K * 31 + m)};
            EXPECT_NEAR(reduced_output_cosine(c), angular_lower_bound(m, K), 1e-9);
        }
    }
}

TEST(AngularBound, FullCountIsOne) {
    AngularCase c{Vector{0.5, 0.3, 0.2}, 3, orthonormal_vectors(3, 3, 1)};
    EXPECT_NEAR(reduced_output_cosine(c), 1.0, 1e-12);
}

TEST(AngularBound, VectorMatchesClosedForm) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t K = 2 + rng() % 15;
        const std::size_t m = 1 + rng() % (K - 1);
        Vector w(K);
        double s = 0.0;
        for (auto& v : w) s += (v = u(rng));
        for (auto& v : w) v /= s;
        std::sort(w.begin(), w.end(), std::greater<>());
        AngularCase c{w, m, orthonormal_vectors(K, K, rng())};
        const double v = reduced_output_cosine(c);
        EXPECT_NEAR(v, reduced_output_cosine_closed_form(w, m), 1e-9);
        EXPECT_GE(v, angular_lower_bound(m, K) - 1e-9);
    }
}

TEST(AngularBound, CaseValidation) {
    EXPECT_THROW((AngularCase{Vector{0.3, 0.7}, 1, orthonormal_vectors(2, 2, 1)}.validate()), InvalidInput);
    EXPECT_THROW((AngularCase{Vector{0.7, 0.3}, 1, orthonormal_vectors(2, 2, 1).select_rows(IndexList{0})}.validate()),
                 InvalidInput);
}

TEST(AngularBound, MonteCarloSmall) {
    auto r = verify_angular_bound(8, 3, 500, 4);
    EXPECT_EQ(r.trials, 500u);
    EXPECT_EQ(r.violations, 0u);
    EXPECT_GE(r.min_margin, -1e-9);
    EXPECT_LE(r.max_closed_form_error, 1e-9);
}

namespace {

RoutingDistribution dist_from(const std::vector<Vector>& rows) {
    return RoutingDistribution(Matrix::from_rows(rows));
}

}  // namespace

TEST(AdjacentSimilarity, SharedRowIsOne) {
    std::vector<Vector> rows(7, Vector{0.1, 0.6, 0.3});
    ModalityMask mask{Modality::Vision, Modality::Vision, Modality::Text, Modality::Vision,
                      Modality::Text, Modality::Vision, Modality::Text};
    auto s = adjacent_routing_similarity(dist_from(rows), mask, 2);
    EXPECT_NEAR(*s.vision, 1.0, 1e-15);
    EXPECT_NEAR(*s.text, 1.0, 1e-15);
}

TEST(AdjacentSimilarity, AlternatingOneHotIsZero) {
    std::vector<Vector> rows;
    for (int i = 0; i < 8; ++i) rows.push_back(i % 2 ? Vector{0, 1} : Vector{1, 0});
    auto s = adjacent_routing_similarity(dist_from(rows), ModalityMask(8, Modality::Vision), 2);
    EXPECT_NEAR(*s.vision, 0.0, 1e-15);
    EXPECT_FALSE(s.text.has_value());
}

TEST(AdjacentSimilarity, MatchesPairOracle) {
    std::mt19937_64 rng(3);
    std::vector<Vector> rows;
    ModalityMask mask;
    for (int i = 0; i < 23; ++i) {
        rows.push_back(oracle::random_probs(rng, 6));
        mask.push_back(rng() % 3 ? Modality::Vision : Modality::Text);
    }
    const std::size_t W = 4;
    auto got = adjacent_routing_similarity(dist_from(rows), mask, W);
    for (auto m : {Modality::Vision, Modality::Text}) {
        oracle::Rows sub;
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (mask[i] == m) sub.push_back(rows[i]);
        double total = 0.0;
        std::size_t windows = 0;
        for (std::size_t s = 0; s < sub.size(); s += W) {
            oracle::Rows win(sub.begin() + s, sub.begin() + std::min(sub.size(), s + W));
            total += oracle::pair_similarity(win);
            ++windows;
        }
        const auto v = m == Modality::Vision ? got.vision : got.text;
        ASSERT_TRUE(v.has_value());
        EXPECT_NEAR(*v, total / windows, 1e-12);
    }
}

TEST(TopKSum, Examples) {
    std::vector<Vector> uniform(3, Vector(8, 0.125));
    EXPECT_NEAR(*topk_prob_sum(dist_from(uniform), ModalityMask(3, Modality::Vision), 4).vision, 0.5, 1e-15);
    std::vector<Vector> onehot{{0, 1, 0}, {1, 0, 0}};
    EXPECT_NEAR(*topk_prob_sum(dist_from(onehot), ModalityMask(2, Modality::Text), 1).text, 1.0, 1e-15);
}

TEST(TopKSum, MatchesSortOracle) {
    std::mt19937_64 rng(4);
    std::vector<Vector> rows;
    ModalityMask mask;
    for (int i = 0; i < 30; ++i) {
        rows.push_back(oracle::random_probs(rng, 16));
        mask.push_back(i % 4 == 0 ? Modality::Text : Modality::Vision);
    }
    auto got = topk_prob_sum(dist_from(rows), mask, 3);
    double sv = 0, st = 0;
    int nv = 0, nt = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double v = oracle::top_sum(rows[i], 3);
        if (mask[i] == Modality::Vision) {
            sv += v;
            ++nv;
        } else {
            st += v;
            ++nt;
        }
    }
    EXPECT_NEAR(*got.vision, sv / nv, 1e-12);
    EXPECT_NEAR(*got.text, st / nt, 1e-12);
}

TEST(ExpertSimilarity, IdenticalVectors) {
    auto s = expert_output_similarity(Matrix::from_rows({{1, 2}, {1, 2}, {1, 2}}));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_NEAR(s.cosine(i, j), 1.0, 1e-15);
            EXPECT_EQ(s.euclidean(i, j), 1.0);
        }
}

TEST(ExpertSimilarity, Orthonormal) {
    auto s = expert_output_similarity(orthonormal_vectors(4, 4, 9));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_NEAR(s.cosine(i, j), i == j ? 1.0 : 0.0, 1e-12);
            EXPECT_NEAR(s.euclidean(i, j), i == j ? 1.0 : 0.4142, 1e-4);
        }
}

TEST(ExpertSimilarity, MatchesPairOracle) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    oracle::Rows v(6, std::vector<double>(5));
    for (auto& r : v)
        for (auto& x : r) x = g(rng);
    std::vector<Vector> rows(v.begin(), v.end());
    auto s = expert_output_similarity(Matrix::from_rows(rows));
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            double d = 0.0;
            for (std::size_t k = 0; k < 5; ++k) d += (v[i][k] - v[j][k]) * (v[i][k] - v[j][k]);
            EXPECT_NEAR(s.cosine(i, j), oracle::cos(v[i], v[j]), 1e-12);
            EXPECT_NEAR(s.euclidean(i, j), 1.0 / (1.0 + std::sqrt(d)), 1e-12);
            EXPECT_EQ(s.cosine(i, j), s.cosine(j, i));
        }
}

TEST(MergeBound, Values) {
    EXPECT_EQ(gamma_upper_bound(1.0, 5), 0.0);
    EXPECT_NEAR(gamma_upper_bound(0.91, 5), 0.0247, 1e-4);
    EXPECT_NEAR(gamma_upper_bound(0.63, 5), 0.1468, 1e-4);
    EXPECT_NEAR(gamma_upper_bound(0.79, 5), 0.0665, 5e-4);
}

TEST(MergeBound, DecreasingInBetaAndWindow) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        double a = u(rng), b = u(rng);
        if (a > b) std::swap(a, b);
        const std::size_t w = 2 + rng() % 10;
        EXPECT_GE(gamma_upper_bound(a, w), gamma_upper_bound(b, w));
        EXPECT_GE(gamma_upper_bound(a, w), gamma_upper_bound(a, w + 1));
    }
}

TEST(StageBeta, Values) {
    EXPECT_EQ(stage_beta(1.0, 3), 1.0);
    EXPECT_NEAR(stage_beta(0.75, 3), 0.9086, 1e-4);
    EXPECT_NEAR(stage_beta(0.25, 3), 0.62996, 1e-5);
    EXPECT_THROW(stage_beta(0.0, 3), InvalidInput);
    EXPECT_THROW(stage_beta(0.5, 0), InvalidInput);
}
