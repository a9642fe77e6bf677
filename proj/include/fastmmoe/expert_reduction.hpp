// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fastmmoe/common.hpp"
#include "fastmmoe/moe_core.hpp"

namespace fastmmoe {

enum class SelectionStrategy : std::uint8_t { TopK, RandomK, MinK };
enum class TargetModality : std::uint8_t { Vision, Text, All };

std::string to_string(SelectionStrategy s);
std::string to_string(TargetModality t);
SelectionStrategy parse_strategy(const std::string& name);
TargetModality parse_target(const std::string& name);

/// Which tokens activate fewer experts, from which layer on, and how the survivors are picked.
struct ReductionPolicy {
    std::size_t start_layer = 0;                  // l_v, 0-based, inclusive
    std::optional<std::size_t> reduced_count;     // K_v
    std::optional<double> activation_ratio;       // p, resolved as round(p * K)
    SelectionStrategy strategy = SelectionStrategy::TopK;
    TargetModality target = TargetModality::Vision;
    bool reduce_shared = false;                   // halve shared experts on reduced tokens
    std::uint64_t seed = 0;

    /// K_v for a model with K routed experts per token.
    std::size_t resolved_count(std::size_t top_k) const;
    /// Validates against the model; num_layers bounds start_layer.
    void validate(std::size_t top_k, std::size_t num_shared, std::size_t num_layers) const;
    /// Whether a token of this modality at this layer is reduced.
    bool applies_to(Modality m, std::size_t layer) const;
};

/// Gate rows for every token of one layer.
struct LayerGatePlan {
    std::vector<GateRow> rows;
    std::vector<bool> reduced;
    /// Shared experts that run for each token.
    std::vector<std::size_t> active_shared;

    std::size_t routed_activations() const;
    std::size_t shared_activations() const;
    std::size_t reduced_tokens() const;
};

std::size_t resolve_reduced_count(std::size_t top_k, double ratio);

/// Picks K_v experts out of the baseline top-K pool.
IndexList select_reduced(std::span<const double> probs,
                         const IndexList& baseline_pool,
                         std::size_t reduced_count,
                         SelectionStrategy strategy,
                         std::mt19937_64& rng,
                         std::size_t num_shared);

/// Per-token rng seed for RandomK, independent of evaluation order.
std::uint64_t token_seed(std::uint64_t seed, std::size_t layer, std::size_t token);

LayerGatePlan apply_reduction(const RoutingDistribution& dist,
                              const ModalityMask& mask,
                              std::size_t layer,
                              const ReductionPolicy& policy,
                              std::size_t top_k,
                              std::size_t num_shared = 0);

/// Gate plan with every token on its baseline top-K.
LayerGatePlan baseline_gating(const RoutingDistribution& dist, std::size_t top_k, std::size_t num_shared = 0);

}  // namespace fastmmoe
