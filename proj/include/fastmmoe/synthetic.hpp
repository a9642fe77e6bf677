// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "fastmmoe/trace.hpp"

namespace fastmmoe {

/// A run of vision tokens (positions within the vision subsequence) whose routing rows are kept close.
struct PlantedBlock {
    std::size_t start = 0;
    std::size_t length = 0;
};

/// Parameters of a small random MoE model whose baseline forward pass is recorded as a trace.
/// Vision tokens come first, then text; the last text token provides the attention row.
struct SyntheticSpec {
    std::uint64_t seed = 0;
    std::size_t num_vision = 64;
    std::size_t num_text = 8;
    std::size_t num_experts = 16;
    std::size_t top_k = 4;
    std::size_t num_shared = 0;
    std::size_t hidden_dim = 32;
    std::size_t expert_hidden = 16;
    std::size_t num_layers = 8;
    std::vector<PlantedBlock> blocks;
    /// Minimum cosine between routing rows inside a planted block, at every layer. 1.0 plants identical tokens.
    double block_similarity = 1.0;
    double router_scale = 3.0;
    bool record_hidden = true;
    bool record_norms = true;

    void validate() const;
};

/// Deterministic per seed. Within every planted block, adjacent routing rows have cosine at least
/// `block_similarity` and the mean pairwise cosine is at least `block_similarity`, at every layer.
Trace generate_synthetic(const SyntheticSpec& spec);
Trace generate_synthetic(SyntheticSpec spec, std::uint64_t seed);

struct BlockSimilarity {
    double min_adjacent = 1.0;
    double mean_pairwise = 1.0;
};

/// Worst-case routing similarity inside the planted blocks over all layers of a trace.
BlockSimilarity measure_block_similarity(const Trace& trace, const std::vector<PlantedBlock>& blocks);

}  // namespace fastmmoe
