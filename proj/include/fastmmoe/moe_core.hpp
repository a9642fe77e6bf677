// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fastmmoe/common.hpp"
#include "fastmmoe/matrix.hpp"

namespace fastmmoe {

/// Token hidden states, one row per token.
using HiddenState = Matrix;

/// Router centroid matrix, one row per routed expert (E x H).
struct RouterWeights {
    Matrix centroids;

    std::size_t num_experts() const { return centroids.rows(); }
    std::size_t hidden_dim() const { return centroids.cols(); }
};

/// Row-stochastic N x E routing probabilities. Construction validates the rows.
class RoutingDistribution {
public:
    static constexpr double kRowTolerance = 1e-9;

    RoutingDistribution() = default;
    explicit RoutingDistribution(Matrix probs, double tolerance = kRowTolerance);

    std::size_t num_tokens() const { return m_probs.rows(); }
    std::size_t num_experts() const { return m_probs.cols(); }
    std::span<const double> row(std::size_t i) const { return m_probs.row(i); }
    const Matrix& probs() const { return m_probs; }

private:
    Matrix m_probs;
};

/// Selected experts for one token and their re-normalized gate weights.
/// An empty row means the token runs through shared experts only.
struct GateRow {
    IndexList selected;
    Vector weights;

    bool operator==(const GateRow&) const = default;
};

struct MoEConfig {
    std::size_t num_experts = 1;     // E
    std::size_t top_k = 1;           // K
    std::size_t num_shared = 0;      // N_s
    std::size_t hidden_dim = 1;      // H
    std::size_t expert_hidden = 1;   // S_m
    std::size_t num_layers = 1;

    void validate() const;
};

/// Two-layer feed-forward expert: down * act(up * x). An expert without weights is the identity map.
struct FeedForward {
    Matrix up;    // S_m x H
    Matrix down;  // H x S_m

    bool is_identity() const { return up.empty(); }
    Vector apply(std::span<const double> x) const;
};

/// Elementwise expert nonlinearity, x * sigmoid(x).
double silu(double x);

class ExpertBank {
public:
    ExpertBank(std::vector<FeedForward> shared, std::vector<FeedForward> routed);

    /// Randomly initialised bank, deterministic per seed.
    static ExpertBank random(const MoEConfig& config, std::uint64_t seed, double scale = 1.0);
    /// Every expert is the identity map.
    static ExpertBank identity(const MoEConfig& config);

    const FeedForward& shared(std::size_t i) const { return m_shared.at(i); }
    const FeedForward& routed(std::size_t j) const { return m_routed.at(j); }
    std::size_t num_shared() const { return m_shared.size(); }
    std::size_t num_routed() const { return m_routed.size(); }

private:
    std::vector<FeedForward> m_shared;
    std::vector<FeedForward> m_routed;
};

struct MoEOutput {
    Vector output;
    std::size_t expert_evaluations = 0;
};

Vector route_logits(std::span<const double> token, const RouterWeights& router);

/// Numerically stable softmax.
Vector routing_probs(std::span<const double> logits);

/// Indices of the k largest probabilities, descending; ties go to the smaller index.
IndexList top_k_select(std::span<const double> probs, std::size_t k);

/// Restricts probabilities to the selected experts and renormalizes them to sum to one.
GateRow gate_weights(std::span<const double> probs, const IndexList& selected);

/// Shared-expert sum plus gate-weighted routed-expert sum. Only the first
/// `active_shared` shared experts run; by default all of them do. Routed
/// experts outside the gate row are never evaluated.
MoEOutput moe_forward(std::span<const double> token,
                      const GateRow& gates,
                      const ExpertBank& bank,
                      const MoEConfig& config,
                      std::size_t active_shared = static_cast<std::size_t>(-1));

RoutingDistribution layer_routing(const HiddenState& hidden, const RouterWeights& router);

}  // namespace fastmmoe
