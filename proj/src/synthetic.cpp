// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastmmoe/synthetic.hpp"

#include <algorithm>
#include <random>

#include "fastmmoe/expert_reduction.hpp"
#include "fastmmoe/token_pruning.hpp"

namespace fastmmoe {

void SyntheticSpec::validate() const {
    FASTMMOE_CHECK(num_text >= 1, "synthetic spec: need at least one text token to source attention");
    FASTMMOE_CHECK(num_experts >= 1 && top_k >= 1 && top_k <= num_experts, "synthetic spec: need 1 <= K <= E");
    FASTMMOE_CHECK(hidden_dim >= 1 && expert_hidden >= 1 && num_layers >= 1, "synthetic spec: dims must be >= 1");
    FASTMMOE_CHECK(block_similarity >= 0.0 && block_similarity <= 1.0, "synthetic spec: block similarity must lie in [0, 1]");
    FASTMMOE_CHECK(router_scale > 0.0, "synthetic spec: router scale must be positive");
    IndexList covered(num_vision, 0);
    for (const auto& b : blocks) {
        FASTMMOE_CHECK(b.length >= 2, "synthetic spec: planted blocks need at least two tokens");
        FASTMMOE_CHECK(b.start + b.length <= num_vision, "synthetic spec: planted block runs past the vision tokens");
        for (std::size_t i = b.start; i < b.start + b.length; ++i) {
            FASTMMOE_CHECK(!covered[i], "synthetic spec: planted blocks overlap");
            covered[i] = 1;
        }
    }
}

namespace {

void normalize_rows(Matrix& m) {
    const double target = std::sqrt(static_cast<double>(m.cols()));
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const double n = l2_norm(row);
        if (n > 0.0) {
            for (auto& x : row) {
                x *= target / n;
            }
        }
    }
}

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (auto& x : m.row(r)) {
            x = dist(rng);
        }
    }
    return m;
}

struct LayerModel {
    RouterWeights router;
    ExpertBank bank;
    Matrix attention_proj;  // H x H bilinear form for last-token attention
};

Trace run_model(const SyntheticSpec& spec, double block_noise) {
    std::mt19937_64 rng(mix_seed(spec.seed));
    const std::size_t n = spec.num_vision + spec.num_text;
    const std::size_t h = spec.hidden_dim;
    const MoEConfig cfg{spec.num_experts, spec.top_k, spec.num_shared, h, spec.expert_hidden, spec.num_layers};

    std::vector<LayerModel> model;
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
        const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));
        RouterWeights router{gaussian(spec.num_experts, h, spec.router_scale * inv_sqrt_h, rng)};
        Matrix proj = gaussian(h, h, inv_sqrt_h, rng);
        model.push_back({std::move(router), ExpertBank::random(cfg, mix_seed(spec.seed, l + 1)), std::move(proj)});
    }

    // Initial tokens; planted blocks share an anchor plus scaled per-token noise.
    Matrix hidden = gaussian(n, h, 1.0, rng);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (const auto& b : spec.blocks) {
        const Vector anchor(hidden.row(b.start).begin(), hidden.row(b.start).end());
        for (std::size_t i = b.start; i < b.start + b.length; ++i) {
            auto row = hidden.row(i);
            for (std::size_t c = 0; c < h; ++c) {
                row[c] = anchor[c] + block_noise * unit(rng);
            }
        }
    }
    normalize_rows(hidden);

    Trace trace;
    trace.meta = {"synthetic", spec.num_layers, spec.num_experts, spec.top_k, spec.num_shared, h, spec.expert_hidden,
                  "post_softmax_single_head"};
    trace.mask.assign(spec.num_vision, Modality::Vision);
    trace.mask.insert(trace.mask.end(), spec.num_text, Modality::Text);

    for (std::size_t l = 0; l < spec.num_layers; ++l) {
        const auto& lm = model[l];
        TraceLayer layer;
        layer.routing_kind = RoutingKind::Probs;
        const RoutingDistribution dist = layer_routing(hidden, lm.router);
        layer.routing = dist.probs();

        // Softmax attention of the last text token over the whole sequence, restricted to vision tokens.
        const Vector query = lm.attention_proj.multiply(hidden.row(n - 1));
        Vector scores(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = dot(query, hidden.row(i)) / std::sqrt(static_cast<double>(h));
        }
        const Vector weights = routing_probs(scores);
        layer.attention.assign(weights.begin(), weights.begin() + static_cast<std::ptrdiff_t>(spec.num_vision));

        if (spec.record_hidden) {
            layer.hidden = hidden;
        }
        const LayerGatePlan gates = baseline_gating(dist, spec.top_k, spec.num_shared);
        Matrix norms(n, spec.top_k);
        Matrix next(n, h);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& row = gates.rows[i];
            for (std::size_t s = 0; s < row.selected.size(); ++s) {
                norms(i, s) = l2_norm(lm.bank.routed(row.selected[s]).apply(hidden.row(i)));
            }
            const MoEOutput out = moe_forward(hidden.row(i), row, lm.bank, cfg);
            for (std::size_t c = 0; c < h; ++c) {
                next(i, c) = hidden(i, c) + out.output[c];
            }
        }
        if (spec.record_norms) {
            layer.expert_norms = std::move(norms);
        }
        normalize_rows(next);
        hidden = std::move(next);
        trace.layers.push_back(std::move(layer));
    }
    return trace;
}

bool blocks_satisfied(const Trace& trace, const SyntheticSpec& spec) {
    if (spec.blocks.empty()) {
        return true;
    }
    const auto s = measure_block_similarity(trace, spec.blocks);
    return s.min_adjacent >= spec.block_similarity && s.mean_pairwise >= spec.block_similarity;
}

}  // namespace

BlockSimilarity measure_block_similarity(const Trace& trace, const std::vector<PlantedBlock>& blocks) {
    BlockSimilarity out;
    IndexList vision;
    for (std::size_t i = 0; i < trace.mask.size(); ++i) {
        if (trace.mask[i] == Modality::Vision) {
            vision.push_back(i);
        }
    }
    for (const auto& layer : trace.layers) {
        const Matrix& rows = layer.routing;
        for (const auto& b : blocks) {
            IndexList members;
            for (std::size_t i = b.start; i < b.start + b.length; ++i) {
                members.push_back(vision.at(i));
            }
            for (std::size_t i = 1; i < members.size(); ++i) {
                out.min_adjacent = std::min(out.min_adjacent, cosine(rows.row(members[i - 1]), rows.row(members[i])));
            }
            out.mean_pairwise = std::min(out.mean_pairwise, window_similarity_exact(rows, members));
        }
    }
    return out;
}

Trace generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    if (spec.block_similarity >= 1.0) {
        return run_model(spec, 0.0);
    }
    // Shrink the within-block noise until every layer meets the requested similarity; zero noise always does.
    double noise = 1.0;
    for (int attempt = 0; attempt < 60; ++attempt, noise *= 0.5) {
        Trace t = run_model(spec, noise);
        if (blocks_satisfied(t, spec)) {
            return t;
        }
    }
    return run_model(spec, 0.0);
}

Trace generate_synthetic(SyntheticSpec spec, std::uint64_t seed) {
    spec.seed = seed;
    return generate_synthetic(spec);
}

}  // namespace fastmmoe
