// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastmmoe/expert_reduction.hpp"

#include <algorithm>

namespace fastmmoe {

std::string to_string(SelectionStrategy s) {
    switch (s) {
        case SelectionStrategy::TopK:
            return "topk";
        case SelectionStrategy::RandomK:
            return "randomk";
        case SelectionStrategy::MinK:
            return "mink";
    }
    return "topk";
}

std::string to_string(TargetModality t) {
    switch (t) {
        case TargetModality::Vision:
            return "vision";
        case TargetModality::Text:
            return "text";
        case TargetModality::All:
            return "all";
    }
    return "vision";
}

SelectionStrategy parse_strategy(const std::string& name) {
    if (name == "topk") return SelectionStrategy::TopK;
    if (name == "randomk") return SelectionStrategy::RandomK;
    if (name == "mink") return SelectionStrategy::MinK;
    throw InvalidInput("unknown selection strategy '" + name + "' (expected topk, randomk or mink)");
}

TargetModality parse_target(const std::string& name) {
    if (name == "vision") return TargetModality::Vision;
    if (name == "text") return TargetModality::Text;
    if (name == "all") return TargetModality::All;
    throw InvalidInput("unknown target modality '" + name + "' (expected vision, text or all)");
}

std::size_t resolve_reduced_count(std::size_t top_k, double ratio) {
    FASTMMOE_CHECK(ratio >= 0.0 && ratio <= 1.0, "activation ratio must lie in [0, 1]");
    return round_half_up(ratio * static_cast<double>(top_k));
}

std::size_t ReductionPolicy::resolved_count(std::size_t top_k) const {
    if (reduced_count) {
        return *reduced_count;
    }
    if (activation_ratio) {
        return resolve_reduced_count(top_k, *activation_ratio);
    }
    return top_k;
}

void ReductionPolicy::validate(std::size_t top_k, std::size_t num_shared, std::size_t num_layers) const {
    FASTMMOE_CHECK(!(reduced_count && activation_ratio),
                   "reduction policy: give either reduced_count or activation_ratio, not both");
    FASTMMOE_CHECK(start_layer < num_layers, "reduction policy: start_layer must be below num_layers");
    const std::size_t kv = resolved_count(top_k);
    FASTMMOE_CHECK(kv <= top_k, "reduction policy: reduced count exceeds K");
    const std::size_t shared_left = reduce_shared ? num_shared / 2 : num_shared;
    FASTMMOE_CHECK(kv > 0 || shared_left > 0, "reduction policy: K_v = 0 leaves reduced tokens with no expert");
}

bool ReductionPolicy::applies_to(Modality m, std::size_t layer) const {
    if (layer < start_layer) {
        return false;
    }
    switch (target) {
        case TargetModality::Vision:
            return m == Modality::Vision;
        case TargetModality::Text:
            return m == Modality::Text;
        case TargetModality::All:
            return true;
    }
    return false;
}

std::size_t LayerGatePlan::routed_activations() const {
    std::size_t n = 0;
    for (const auto& r : rows) {
        n += r.selected.size();
    }
    return n;
}

std::size_t LayerGatePlan::shared_activations() const {
    std::size_t n = 0;
    for (auto s : active_shared) {
        n += s;
    }
    return n;
}

std::size_t LayerGatePlan::reduced_tokens() const {
    return static_cast<std::size_t>(std::count(reduced.begin(), reduced.end(), true));
}

IndexList select_reduced(std::span<const double> probs,
                         const IndexList& baseline_pool,
                         std::size_t reduced_count,
                         SelectionStrategy strategy,
                         std::mt19937_64& rng,
                         std::size_t num_shared) {
    FASTMMOE_CHECK(reduced_count <= baseline_pool.size(), "reduced count exceeds the baseline pool");
    FASTMMOE_CHECK(reduced_count > 0 || num_shared > 0, "K_v = 0 without shared experts leaves no compute path");
    for (auto j : baseline_pool) {
        FASTMMOE_CHECK(j < probs.size(), "pool index out of range");
    }
    if (reduced_count == 0) {
        return {};
    }

    // Pool ordered by probability descending, smaller index first on ties.
    IndexList pool = baseline_pool;
    std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
        return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
    });

    // Every strategy returns its picks in pool order (probability descending).
    IndexList out;
    switch (strategy) {
        case SelectionStrategy::TopK:
            out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(reduced_count));
            break;
        case SelectionStrategy::MinK:
            out.assign(pool.end() - static_cast<std::ptrdiff_t>(reduced_count), pool.end());
            break;
        case SelectionStrategy::RandomK: {
            // Partial Fisher-Yates over the sorted pool; the subset is uniform.
            IndexList work = pool;
            for (std::size_t i = 0; i < reduced_count; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, work.size() - 1);
                std::swap(work[i], work[pick(rng)]);
            }
            out.assign(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(reduced_count));
            std::sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) {
                return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
            });
            break;
        }
    }
    return out;
}

std::uint64_t token_seed(std::uint64_t seed, std::size_t layer, std::size_t token) {
    return mix_seed(mix_seed(seed, layer), token);
}

LayerGatePlan apply_reduction(const RoutingDistribution& dist,
                              const ModalityMask& mask,
                              std::size_t layer,
                              const ReductionPolicy& policy,
                              std::size_t top_k,
                              std::size_t num_shared) {
    FASTMMOE_CHECK(mask.size() == dist.num_tokens(), "modality mask length does not match routing rows");
    const std::size_t kv = policy.resolved_count(top_k);
    FASTMMOE_CHECK(kv <= top_k, "reduced count exceeds K");

    LayerGatePlan plan;
    plan.rows.reserve(dist.num_tokens());
    for (std::size_t i = 0; i < dist.num_tokens(); ++i) {
        const auto probs = dist.row(i);
        IndexList pool = top_k_select(probs, top_k);
        if (!policy.applies_to(mask[i], layer)) {
            plan.rows.push_back(gate_weights(probs, pool));
            plan.reduced.push_back(false);
            plan.active_shared.push_back(num_shared);
            continue;
        }
        const std::size_t shared = policy.reduce_shared ? num_shared / 2 : num_shared;
        std::mt19937_64 rng(token_seed(policy.seed, layer, i));
        IndexList chosen = select_reduced(probs, pool, kv, policy.strategy, rng, shared);
        plan.rows.push_back(chosen.empty() ? GateRow{} : gate_weights(probs, chosen));
        plan.reduced.push_back(kv < top_k || shared < num_shared);
        plan.active_shared.push_back(shared);
    }
    return plan;
}

LayerGatePlan baseline_gating(const RoutingDistribution& dist, std::size_t top_k, std::size_t num_shared) {
    LayerGatePlan plan;
    for (std::size_t i = 0; i < dist.num_tokens(); ++i) {
        plan.rows.push_back(gate_weights(dist.row(i), top_k_select(dist.row(i), top_k)));
        plan.reduced.push_back(false);
        plan.active_shared.push_back(num_shared);
    }
    return plan;
}

}  // namespace fastmmoe
