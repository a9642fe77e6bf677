// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fastmmoe/common.hpp"
#include "fastmmoe/matrix.hpp"
#include "fastmmoe/moe_core.hpp"

namespace fastmmoe {

struct StabilityScore {
    double mean = 0.0;
    double stddev = 0.0;  // population
    double cv = 0.0;
    double stability = 1.0;
};

/// Coefficient of variation of expert-output norms and the score 1 / (1 + CV).
StabilityScore stability_score(std::span<const double> norms);

struct LayerStability {
    std::size_t layer = 0;
    std::optional<StabilityScore> vision;
    std::optional<StabilityScore> text;
    /// vision.stability - text.stability, when both modalities are present.
    std::optional<double> delta;
};

struct StabilityReport {
    std::vector<LayerStability> layers;
};

/// Worst-case cosine between full and top-m reduced outputs under orthonormal experts.
double angular_lower_bound(std::size_t reduced, std::size_t total);

/// Top-K expert weights (sorted non-increasing, positive, summing to one), kept count m and expert outputs.
struct AngularCase {
    Vector weights;
    std::size_t reduced = 0;
    Matrix outputs;  // K x d

    void validate() const;
};

/// Cosine between the full mixture and the top-m renormalized mixture, from the vectors themselves.
double reduced_output_cosine(const AngularCase& c);

/// Closed form valid for orthonormal outputs: sqrt(sum_{i<m} a_i^2 / sum_i a_i^2).
double reduced_output_cosine_closed_form(std::span<const double> weights, std::size_t reduced);

/// `count` orthonormal vectors of dimension `dim` (count <= dim), by modified Gram-Schmidt on seeded Gaussians.
Matrix orthonormal_vectors(std::size_t count, std::size_t dim, std::uint64_t seed);

struct BoundCheck {
    std::size_t trials = 0;
    std::size_t violations = 0;
    double min_margin = 0.0;  // min over trials of cos - bound
    double max_closed_form_error = 0.0;
};

/// Monte-Carlo check of the angular bound over random sorted weight vectors.
BoundCheck verify_angular_bound(std::size_t total, std::size_t reduced, std::size_t trials, std::uint64_t seed,
                                double tolerance = 1e-9);

struct ModalityValue {
    std::optional<double> vision;
    std::optional<double> text;
};

/// Mean exact window similarity over each modality's subsequence.
ModalityValue adjacent_routing_similarity(const RoutingDistribution& dist, const ModalityMask& mask, std::size_t window);

/// Per-modality mean of the sum of each token's k largest probabilities.
ModalityValue topk_prob_sum(const RoutingDistribution& dist, const ModalityMask& mask, std::size_t k);

struct ExpertSimilarity {
    Matrix cosine;
    Matrix euclidean;  // 1 / (1 + distance)
};

ExpertSimilarity expert_output_similarity(const Matrix& outputs);

/// Largest feasible merge rate for per-stage retention beta and window W.
double gamma_upper_bound(double beta, std::size_t window);

/// Per-stage retention that reaches overall retention r after `stages` stages.
double stage_beta(double overall, std::size_t stages);

}  // namespace fastmmoe
