// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fastmmoe/common.hpp"
#include "fastmmoe/matrix.hpp"
#include "fastmmoe/moe_core.hpp"

namespace fastmmoe {

enum class SimilarityMode : std::uint8_t { Exact, Approx };
enum class MergeMode : std::uint8_t { Mean, Mlerp };

std::string to_string(SimilarityMode m);
std::string to_string(MergeMode m);
SimilarityMode parse_similarity_mode(const std::string& name);
MergeMode parse_merge_mode(const std::string& name);

/// Multi-stage pruning configuration.
struct PruneSchedule {
    IndexList prune_layers;
    double stage_beta = 1.0;   // per-stage retention
    std::size_t window = 5;    // W
    double alpha = 0.5;        // similarity vs attention trade-off
    double gamma = 0.0;        // merge rate
    SimilarityMode similarity = SimilarityMode::Exact;
    MergeMode merge = MergeMode::Mlerp;

    void validate() const;
    /// Non-fatal problems, e.g. gamma above its feasibility bound.
    std::vector<std::string> warnings() const;
    bool prunes_at(std::size_t layer) const;
};

/// Contiguous partition of the vision subsequence into windows.
struct WindowView {
    std::size_t window_size = 0;
    std::vector<IndexList> windows;

    std::size_t count() const { return windows.size(); }
};

struct WindowAttention {
    Vector normalized;
    bool all_zero = false;
};

struct WindowScores {
    Vector similarity;   // S_i
    Vector attention;    // normalized window attention
    Vector redundancy;   // C_i
    bool zero_attention = false;
};

/// Per-layer pruning decision. Positions index the vision subsequence.
struct PrunePlan {
    std::size_t input_count = 0;
    std::size_t target = 0;
    IndexList merge_windows;
    IndexList merged_position;
    std::vector<IndexList> merge_members;
    IndexList drop_windows;
    IndexList dropped_window_positions;
    IndexList residual_drop_positions;
    IndexList kept_positions;
    std::vector<std::string> log;

    /// Tokens folded into a merged representative (not counting the representative).
    std::size_t absorbed() const;
    /// Tokens discarded outright, window drops plus residual drops.
    std::size_t dropped() const;
    bool is_identity() const { return input_count == kept_positions.size(); }
};

struct VisionSlice {
    Matrix routing;      // N_v x E
    Vector attention;    // N_v
    IndexList positions; // global index of each vision token
};

/// Routing rows and last-text-token attention restricted to vision tokens, in order.
VisionSlice extract_vision(const RoutingDistribution& dist, std::span<const double> attention, const ModalityMask& mask);

WindowView window_partition(std::size_t num_vision, std::size_t window);

/// Mean pairwise cosine over the window's rows; 1.0 for a singleton window.
double window_similarity_exact(const Matrix& rows);
double window_similarity_exact(const Matrix& rows, const IndexList& members);

/// Mean cosine of each row against the window centroid.
double window_similarity_approx(const Matrix& rows);
double window_similarity_approx(const Matrix& rows, const IndexList& members);

/// Per-window attention sums divided by the largest window sum.
WindowAttention window_attention(std::span<const double> attention, const WindowView& view);

Vector redundancy_scores(std::span<const double> similarity, std::span<const double> attention, double alpha);

WindowScores score_windows(const Matrix& vision_routing,
                           std::span<const double> vision_attention,
                           const WindowView& view,
                           double alpha,
                           SimilarityMode mode);

/// Chooses merges, whole-window drops and residual token drops so exactly `target` vision tokens survive.
PrunePlan plan_pruning(std::size_t num_vision,
                       std::size_t target,
                       const PruneSchedule& schedule,
                       std::span<const double> redundancy,
                       std::span<const double> window_attn,
                       std::span<const double> token_attention,
                       const WindowView& view);

Vector merge_mean(const Matrix& tokens);
Vector merge_mlerp(const Matrix& tokens);

struct PrunedSequence {
    HiddenState hidden;
    ModalityMask mask;
    /// Global input index of each output row (the window's first position for merged rows).
    IndexList origin;
};

/// Rebuilds the sequence per the plan. Text tokens keep their relative order;
/// a merged token takes its window's first position.
PrunedSequence apply_plan(const HiddenState& hidden, const ModalityMask& mask, const PrunePlan& plan, MergeMode mode);

/// Per-stage vision target, rounded half up.
std::size_t stage_target(std::size_t num_vision, double beta);

}  // namespace fastmmoe
