// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "fastmmoe/expert_reduction.hpp"
#include "oracles.hpp"

using namespace fastmmoe;

namespace {

RoutingDistribution random_dist(std::mt19937_64& rng, std::size_t n, std::size_t e) {
    std::vector<Vector> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back(oracle::random_probs(rng, e));
    return RoutingDistribution(Matrix::from_rows(rows));
}

ModalityMask alternating(std::size_t n) {
    ModalityMask m;
    for (std::size_t i = 0; i < n; ++i) m.push_back(i % 3 == 2 ? Modality::Text : Modality::Vision);
    return m;
}

ReductionPolicy policy(std::size_t lv, std::size_t kv, SelectionStrategy s, TargetModality t) {
    ReductionPolicy p;
    p.start_layer = lv;
    p.reduced_count = kv;
    p.strategy = s;
    p.target = t;
    return p;
}

}  // namespace

TEST(ResolveReducedCount, Examples) {
    EXPECT_EQ(resolve_reduced_count(8, 0.5), 4u);
    EXPECT_EQ(resolve_reduced_count(8, 1.0), 8u);
    EXPECT_EQ(resolve_reduced_count(6, 0.0), 0u);
    EXPECT_EQ(resolve_reduced_count(6, 0.25), 2u);  // 1.5 rounds up
    EXPECT_THROW(resolve_reduced_count(8, 1.1), InvalidInput);
    EXPECT_THROW(resolve_reduced_count(8, -0.1), InvalidInput);
}

TEST(ReductionPolicy, Validation) {
    ReductionPolicy p;
    p.reduced_count = 4;
    EXPECT_NO_THROW(p.validate(8, 0, 10));
    p.activation_ratio = 0.5;
    EXPECT_THROW(p.validate(8, 0, 10), InvalidInput);  // both given
    p.activation_ratio.reset();
    p.reduced_count = 9;
    EXPECT_THROW(p.validate(8, 0, 10), InvalidInput);
    p.reduced_count = 4;
    p.start_layer = 10;
    EXPECT_THROW(p.validate(8, 0, 10), InvalidInput);
    p.start_layer = 0;
    p.reduced_count = 0;
    EXPECT_THROW(p.validate(8, 0, 10), InvalidInput);
    EXPECT_NO_THROW(p.validate(8, 2, 10));
}

TEST(SelectReduced, StrategiesOnKnownPool) {
    Vector probs{0.1, 0.4, 0.05, 0.3, 0.2, 0.0};
    const IndexList pool{1, 3, 4, 0};  // probs 0.4, 0.3, 0.2, 0.1
    std::mt19937_64 rng(1);
    auto top = select_reduced(probs, pool, 2, SelectionStrategy::TopK, rng, 0);
    EXPECT_EQ(std::set<std::size_t>(top.begin(), top.end()), (std::set<std::size_t>{1, 3}));
    auto low = select_reduced(probs, pool, 2, SelectionStrategy::MinK, rng, 0);
    EXPECT_EQ(std::set<std::size_t>(low.begin(), low.end()), (std::set<std::size_t>{0, 4}));
}

TEST(SelectReduced, FullCountReturnsPool) {
    Vector probs{0.1, 0.4, 0.2, 0.3};
    const IndexList pool{1, 3, 2, 0};
    for (auto s : {SelectionStrategy::TopK, SelectionStrategy::MinK, SelectionStrategy::RandomK}) {
        std::mt19937_64 rng(9);
        auto got = select_reduced(probs, pool, 4, s, rng, 0);
        EXPECT_EQ(std::set<std::size_t>(got.begin(), got.end()), std::set<std::size_t>(pool.begin(), pool.end()));
    }
}

TEST(SelectReduced, ZeroCountNeedsSharedExperts) {
    Vector probs{0.5, 0.5};
    std::mt19937_64 rng(1);
    EXPECT_THROW(select_reduced(probs, {0, 1}, 0, SelectionStrategy::TopK, rng, 0), InvalidInput);
    EXPECT_TRUE(select_reduced(probs, {0, 1}, 0, SelectionStrategy::TopK, rng, 2).empty());
}

TEST(ApplyReduction, InactiveBeforeStartLayer) {
    std::mt19937_64 rng(2);
    auto dist = random_dist(rng, 9, 16);
    auto mask = alternating(9);
    auto plan = apply_reduction(dist, mask, 2, policy(3, 2, SelectionStrategy::TopK, TargetModality::All), 8);
    for (const auto& row : plan.rows) EXPECT_EQ(row.selected.size(), 8u);
    EXPECT_EQ(plan.reduced_tokens(), 0u);
}

TEST(ApplyReduction, VisionTargetOnAllTextIsBaseline) {
    std::mt19937_64 rng(3);
    auto dist = random_dist(rng, 6, 16);
    ModalityMask mask(6, Modality::Text);
    auto plan = apply_reduction(dist, mask, 5, policy(0, 2, SelectionStrategy::TopK, TargetModality::Vision), 8);
    auto base = baseline_gating(dist, 8);
    EXPECT_EQ(plan.rows, base.rows);
}

TEST(ApplyReduction, AllTargetMatchesDenseOracle) {
    std::mt19937_64 rng(4);
    auto dist = random_dist(rng, 10, 16);
    auto mask = alternating(10);
    auto plan = apply_reduction(dist, mask, 0, policy(0, 4, SelectionStrategy::TopK, TargetModality::All), 8);
    for (std::size_t t = 0; t < 10; ++t) {
        auto p = dist.row(t);
        IndexList order(16);
        for (std::size_t i = 0; i < 16; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] > p[b]; });
        double mass = 0.0;
        for (std::size_t i = 0; i < 4; ++i) mass += p[order[i]];
        const auto& row = plan.rows[t];
        ASSERT_EQ(row.selected.size(), 4u);
        for (std::size_t i = 0; i < 4; ++i) {
            auto it = std::find(row.selected.begin(), row.selected.end(), order[i]);
            ASSERT_NE(it, row.selected.end());
            EXPECT_NEAR(row.weights[it - row.selected.begin()], p[order[i]] / mass, 1e-12);
        }
    }
}

TEST(ApplyReduction, ModalityCounts) {
    std::mt19937_64 rng(5);
    auto dist = random_dist(rng, 12, 16);
    auto mask = alternating(12);
    auto plan = apply_reduction(dist, mask, 4, policy(1, 3, SelectionStrategy::MinK, TargetModality::Vision), 6);
    for (std::size_t t = 0; t < 12; ++t) {
        EXPECT_EQ(plan.rows[t].selected.size(), mask[t] == Modality::Vision ? 3u : 6u);
        EXPECT_EQ(plan.reduced[t], mask[t] == Modality::Vision);
    }
}

TEST(ApplyReduction, GateWeightsSumToOneFuzz) {
    std::mt19937_64 rng(6);
    const SelectionStrategy strategies[] = {SelectionStrategy::TopK, SelectionStrategy::MinK, SelectionStrategy::RandomK};
    const TargetModality targets[] = {TargetModality::Vision, TargetModality::Text, TargetModality::All};
    std::size_t tokens = 0;
    for (auto s : strategies) {
        for (auto tg : targets) {
            for (int trial = 0; trial < 12; ++trial) {
                const std::size_t E = 4 + rng() % 60, K = 1 + rng() % std::min<std::size_t>(E, 8);
                const std::size_t kv = 1 + rng() % K;
                auto dist = random_dist(rng, 10, E);
                auto p = policy(0, kv, s, tg);
                p.seed = rng();
                auto plan = apply_reduction(dist, alternating(10), 0, p, K);
                for (const auto& row : plan.rows) {
                    double sum = 0.0;
                    for (double w : row.weights) sum += w;
                    EXPECT_NEAR(sum, 1.0, 1e-9);
                    ++tokens;
                }
            }
        }
    }
    EXPECT_GE(tokens, 1000u);
}

TEST(ApplyReduction, TopKFullCountIsBitwiseNoop) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto dist = random_dist(rng, 8, 32);
        for (auto tg : {TargetModality::Vision, TargetModality::Text, TargetModality::All}) {
            auto plan = apply_reduction(dist, alternating(8), 0, policy(0, 6, SelectionStrategy::TopK, tg), 6, 2);
            auto base = baseline_gating(dist, 6, 2);
            EXPECT_EQ(plan.rows, base.rows);
            EXPECT_EQ(plan.active_shared, base.active_shared);
            EXPECT_EQ(plan.reduced_tokens(), 0u);
        }
    }
}

TEST(ApplyReduction, TopKContainment) {
    std::mt19937_64 rng(8);
    auto dist = random_dist(rng, 20, 32);
    ModalityMask mask(20, Modality::Vision);
    for (std::size_t kv = 1; kv < 8; ++kv) {
        auto small = apply_reduction(dist, mask, 0, policy(0, kv, SelectionStrategy::TopK, TargetModality::All), 8);
        auto big = apply_reduction(dist, mask, 0, policy(0, kv + 1, SelectionStrategy::TopK, TargetModality::All), 8);
        for (std::size_t t = 0; t < 20; ++t) {
            for (auto e : small.rows[t].selected) {
                EXPECT_NE(std::find(big.rows[t].selected.begin(), big.rows[t].selected.end(), e),
                          big.rows[t].selected.end());
            }
        }
    }
}

TEST(ApplyReduction, RandomKReproducibleAndSeedSensitive) {
    std::mt19937_64 rng(9);
    auto dist = random_dist(rng, 100, 8);
    ModalityMask mask(100, Modality::Vision);
    auto p = policy(0, 2, SelectionStrategy::RandomK, TargetModality::Vision);
    p.seed = 1;
    auto a = apply_reduction(dist, mask, 0, p, 4);
    auto b = apply_reduction(dist, mask, 0, p, 4);
    EXPECT_EQ(a.rows, b.rows);
    p.seed = 2;
    auto c = apply_reduction(dist, mask, 0, p, 4);
    EXPECT_NE(a.rows, c.rows);
}

TEST(ApplyReduction, SharedExpertsUntouchedUnlessRequested) {
    std::mt19937_64 rng(10);
    auto dist = random_dist(rng, 9, 16);
    auto mask = alternating(9);
    auto base = baseline_gating(dist, 6, 2);
    for (auto s : {SelectionStrategy::TopK, SelectionStrategy::MinK, SelectionStrategy::RandomK}) {
        auto p = policy(0, 0, s, TargetModality::All);
        auto plan = apply_reduction(dist, mask, 0, p, 6, 2);
        EXPECT_EQ(plan.shared_activations(), base.shared_activations());
        EXPECT_EQ(plan.routed_activations(), 0u);
    }
    auto p = policy(0, 3, SelectionStrategy::TopK, TargetModality::Vision);
    p.reduce_shared = true;
    auto plan = apply_reduction(dist, mask, 0, p, 6, 2);
    for (std::size_t t = 0; t < 9; ++t) EXPECT_EQ(plan.active_shared[t], mask[t] == Modality::Vision ? 1u : 2u);
}

TEST(ApplyReduction, TokenSeedIndependentOfOrder) {
    EXPECT_EQ(token_seed(5, 2, 7), token_seed(5, 2, 7));
    EXPECT_NE(token_seed(5, 2, 7), token_seed(5, 2, 8));
    EXPECT_NE(token_seed(5, 2, 7), token_seed(5, 3, 7));
}

TEST(Strategies, ParseRoundTrip) {
    for (auto s : {SelectionStrategy::TopK, SelectionStrategy::MinK, SelectionStrategy::RandomK})
        EXPECT_EQ(parse_strategy(to_string(s)), s);
    for (auto t : {TargetModality::Vision, TargetModality::Text, TargetModality::All})
        EXPECT_EQ(parse_target(to_string(t)), t);
    EXPECT_THROW(parse_strategy("best"), InvalidInput);
}
