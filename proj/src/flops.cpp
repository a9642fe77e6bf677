// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastmmoe/flops.hpp"

#include <algorithm>
#include <cmath>

namespace fastmmoe {

std::string to_string(FlopsSchedule s) {
    switch (s) {
        case FlopsSchedule::DeepSeek30:
            return "deepseek30";
        case FlopsSchedule::InternVL48:
            return "internvl48";
        case FlopsSchedule::Custom:
            return "custom";
    }
    return "custom";
}

FlopsSchedule parse_flops_schedule(const std::string& name) {
    if (name == "deepseek30") return FlopsSchedule::DeepSeek30;
    if (name == "internvl48") return FlopsSchedule::InternVL48;
    if (name == "custom") return FlopsSchedule::Custom;
    throw InvalidInput("unknown FLOPs schedule '" + name + "' (expected deepseek30, internvl48 or custom)");
}

std::string to_string(FlopsVariant v) {
    return v == FlopsVariant::VisionOnly ? "vision_only" : "whole_sequence";
}

void FlopsConfig::validate() const {
    FASTMMOE_CHECK(batch > 0.0, "flops config: batch must be positive");
    FASTMMOE_CHECK(vision_tokens > 0.0, "flops config: vision token count must be positive");
    FASTMMOE_CHECK(total_tokens >= vision_tokens, "flops config: total tokens must include the vision tokens");
    FASTMMOE_CHECK(hidden > 0.0 && heads > 0.0 && head_dim > 0.0, "flops config: H, A and d must be positive");
    FASTMMOE_CHECK(std::abs(heads * head_dim - hidden) < 1e-9, "flops config: H must equal A * d");
    FASTMMOE_CHECK(expert_intermediate > 0.0 && num_experts >= 1.0, "flops config: S_m and E must be positive");
    FASTMMOE_CHECK(dense_layers == 0 || dense_intermediate > 0.0, "flops config: dense layers need S > 0");
    FASTMMOE_CHECK(top_k >= 0.0 && top_k <= num_experts, "flops config: K must lie in [0, E]");
    FASTMMOE_CHECK(reduced_k >= 0.0 && reduced_k <= top_k, "flops config: K_v must lie in [0, K]");
    FASTMMOE_CHECK(top_k + num_shared > 0.0, "flops config: tokens need at least one active expert");
    FASTMMOE_CHECK(num_layers >= 1 && dense_layers < num_layers, "flops config: need at least one MoE layer");
    FASTMMOE_CHECK(std::is_sorted(prune_layers.begin(), prune_layers.end()) &&
                       std::adjacent_find(prune_layers.begin(), prune_layers.end()) == prune_layers.end(),
                   "flops config: prune layers must be strictly increasing");
    FASTMMOE_CHECK(prune_layers.empty() || prune_layers.back() < num_layers,
                   "flops config: prune layers must lie inside the layer stack");
    FASTMMOE_CHECK(beta > 0.0 && beta <= 1.0, "flops config: beta must lie in (0, 1]");
}

void FlopsConfig::check_schedule(FlopsSchedule schedule) const {
    validate();
    switch (schedule) {
        case FlopsSchedule::DeepSeek30:
            FASTMMOE_CHECK(num_layers == 30 && dense_layers == 1 && prune_layers == IndexList({2, 5, 8}),
                           "deepseek30 schedule needs 30 layers, 1 dense layer and prune layers {2,5,8}");
            break;
        case FlopsSchedule::InternVL48:
            FASTMMOE_CHECK(num_layers == 48 && dense_layers == 0 && prune_layers == IndexList({5, 8, 12}),
                           "internvl48 schedule needs 48 MoE layers and prune layers {5,8,12}");
            break;
        case FlopsSchedule::Custom:
            break;
    }
}

FlopsConfig flops_preset(const std::string& name) {
    FlopsConfig c;
    if (name == "deepseek30") {
        // Language backbone dims of the public release; token counts are assumptions (see README).
        c.vision_tokens = 1200;
        c.total_tokens = 1200 + 64;
        c.hidden = 2560;
        c.heads = 20;
        c.head_dim = 128;
        c.dense_intermediate = 12288;
        c.expert_intermediate = 1536;
        c.num_experts = 72;
        c.top_k = 6;
        c.num_shared = 2;
        c.reduced_k = 6;
        c.num_layers = 30;
        c.dense_layers = 1;
        c.prune_layers = {2, 5, 8};
        return c;
    }
    if (name == "internvl48") {
        c.vision_tokens = 2048;
        c.total_tokens = 2048 + 64;
        c.hidden = 2048;
        c.heads = 16;
        c.head_dim = 128;
        c.dense_intermediate = 6144;
        c.expert_intermediate = 768;
        c.num_experts = 128;
        c.top_k = 8;
        c.num_shared = 0;
        c.reduced_k = 8;
        c.num_layers = 48;
        c.dense_layers = 0;
        c.prune_layers = {5, 8, 12};
        return c;
    }
    throw InvalidInput("unknown FLOPs preset '" + name + "' (expected deepseek30 or internvl48)");
}

std::vector<std::string> flops_preset_names() {
    return {"deepseek30", "internvl48"};
}

double attn_flops(double batch, double tokens, double hidden) {
    return 4.0 * batch * tokens * tokens * hidden + 8.0 * batch * tokens * hidden * hidden;
}

double mlp_flops(double batch, double tokens, double hidden, double intermediate) {
    return 6.0 * batch * tokens * hidden * intermediate;
}

double moe_flops(double batch, double tokens, double hidden, double experts, double expert_intermediate, double active) {
    return 2.0 * batch * tokens * hidden * experts + 6.0 * batch * tokens * hidden * expert_intermediate * active;
}

double moe_layer_cost(const FlopsConfig& c, FlopsVariant variant, double vision, double vision_active) {
    const double vision_moe = moe_flops(c.batch, vision, c.hidden, c.num_experts, c.expert_intermediate, vision_active);
    if (variant == FlopsVariant::VisionOnly) {
        return attn_flops(c.batch, vision, c.hidden) + vision_moe;
    }
    const double text = c.text_tokens();
    return attn_flops(c.batch, vision + text, c.hidden) + vision_moe +
           moe_flops(c.batch, text, c.hidden, c.num_experts, c.expert_intermediate, c.top_k + c.num_shared);
}

double dense_layer_cost(const FlopsConfig& c, FlopsVariant variant, double vision) {
    if (variant == FlopsVariant::VisionOnly) {
        // The vision-only closed forms charge leading dense layers for their MLP only.
        return mlp_flops(c.batch, vision, c.hidden, c.dense_intermediate);
    }
    const double live = vision + c.text_tokens();
    return attn_flops(c.batch, live, c.hidden) + mlp_flops(c.batch, live, c.hidden, c.dense_intermediate);
}

std::vector<FlopsStage> flops_stages(const FlopsConfig& c, FlopsVariant variant, bool prune, bool reduce) {
    c.validate();
    const std::size_t stage_count = prune ? c.prune_layers.size() + 1 : 1;
    std::vector<FlopsStage> stages(stage_count);
    for (std::size_t s = 0; s < stage_count; ++s) {
        auto& st = stages[s];
        st.first_layer = s == 0 ? 0 : c.prune_layers[s - 1] + 1;
        st.last_layer = s + 1 < stage_count ? c.prune_layers[s] : c.num_layers - 1;
        st.vision_tokens = c.vision_tokens * std::pow(c.beta, static_cast<double>(s));
        for (std::size_t layer = st.first_layer; layer <= st.last_layer && layer < c.num_layers; ++layer) {
            if (layer < c.dense_layers) {
                ++st.dense_layers;
                continue;
            }
            ++st.moe_layers;
            if (reduce && layer >= c.reduce_start) {
                ++st.reduced_layers;
            }
        }
        const double full = c.top_k + c.num_shared;
        const double reduced = (reduce ? c.reduced_k : c.top_k) + c.num_shared;
        st.moe_cost = moe_layer_cost(c, variant, st.vision_tokens, full);
        st.reduced_moe_cost = moe_layer_cost(c, variant, st.vision_tokens, reduced);
    }
    return stages;
}

namespace {

double baseline_total(const FlopsConfig& c, FlopsVariant variant) {
    const double moe = static_cast<double>(c.num_layers - c.dense_layers);
    return static_cast<double>(c.dense_layers) * dense_layer_cost(c, variant, c.vision_tokens) +
           moe * moe_layer_cost(c, variant, c.vision_tokens, c.top_k + c.num_shared);
}

// Baseline plus per-stage adjustments, so an unpruned, unreduced stack reproduces the baseline bit for bit.
double stage_sum(const FlopsConfig& c, FlopsVariant variant, const std::vector<FlopsStage>& stages) {
    const double dense0 = dense_layer_cost(c, variant, c.vision_tokens);
    const double moe0 = moe_layer_cost(c, variant, c.vision_tokens, c.top_k + c.num_shared);
    double total = baseline_total(c, variant);
    for (const auto& st : stages) {
        total += static_cast<double>(st.dense_layers) * (dense_layer_cost(c, variant, st.vision_tokens) - dense0);
        total += static_cast<double>(st.moe_layers) * (st.moe_cost - moe0);
        total += static_cast<double>(st.reduced_layers) * st.delta();
    }
    return total;
}

/// MoE layers at index >= l_v.
std::size_t reduced_moe_layers(const FlopsConfig& c) {
    const std::size_t first = std::max(c.reduce_start, c.dense_layers);
    return first >= c.num_layers ? 0 : c.num_layers - first;
}

FlopsReport finish(const std::string& name, FlopsVariant variant, double base, double optimized,
                   std::vector<FlopsStage> stages) {
    FlopsReport r;
    r.name = name;
    r.variant = variant;
    r.baseline_total = base;
    r.optimized_total = optimized;
    r.ratio = optimized / base;
    r.savings = 1.0 - r.ratio;
    r.stages = std::move(stages);
    return r;
}

struct Fraction {
    double numerator;
    double denominator;
};

// Closed forms with the fixed stage sizes of each layout: deepseek30 runs one dense
// layer then MoE stages of (2, 3, 3, 21) layers; internvl48 runs MoE stages of (6, 3, 4, 35).
// Numerators are expanded as denominator + N_s (C_s - C_0) so identity configs give exactly 1.
Fraction closed_form_prune(const FlopsConfig& c, FlopsSchedule schedule, FlopsVariant v) {
    auto C = [&](int t) { return moe_layer_cost(c, v, c.vision_tokens * std::pow(c.beta, t), c.top_k + c.num_shared); };
    const double C0 = C(0);
    if (schedule == FlopsSchedule::DeepSeek30) {
        const double den = dense_layer_cost(c, v, c.vision_tokens) + 29 * C0;
        return {den + 3 * (C(1) - C0) + 3 * (C(2) - C0) + 21 * (C(3) - C0), den};
    }
    const double den = 48 * C0;
    return {den + 3 * (C(1) - C0) + 4 * (C(2) - C0) + 35 * (C(3) - C0), den};
}

Fraction closed_form_act(const FlopsConfig& c, FlopsSchedule schedule, FlopsVariant v) {
    const double C0 = moe_layer_cost(c, v, c.vision_tokens, c.top_k + c.num_shared);
    const double C1 = moe_layer_cost(c, v, c.vision_tokens, c.reduced_k + c.num_shared);
    const double reduced = static_cast<double>(reduced_moe_layers(c));
    const double den = schedule == FlopsSchedule::DeepSeek30 ? dense_layer_cost(c, v, c.vision_tokens) + 29 * C0
                                                             : 48 * C0;
    return {den + reduced * (C1 - C0), den};
}

}  // namespace

FlopsReport ratio_prune(const FlopsConfig& c, FlopsSchedule schedule, FlopsVariant variant) {
    c.check_schedule(schedule);
    auto stages = flops_stages(c, variant, true, false);
    const double base = baseline_total(c, variant);
    if (schedule != FlopsSchedule::Custom && variant == FlopsVariant::VisionOnly) {
        const auto f = closed_form_prune(c, schedule, variant);
        return finish("prune", variant, f.denominator, f.numerator, std::move(stages));
    }
    const double total = stage_sum(c, variant, stages);
    return finish("prune", variant, base, total, std::move(stages));
}

FlopsReport ratio_act(const FlopsConfig& c, FlopsSchedule schedule, FlopsVariant variant) {
    c.check_schedule(schedule);
    auto stages = flops_stages(c, variant, false, true);
    const double base = baseline_total(c, variant);
    if (schedule != FlopsSchedule::Custom && variant == FlopsVariant::VisionOnly) {
        const auto f = closed_form_act(c, schedule, variant);
        return finish("act", variant, f.denominator, f.numerator, std::move(stages));
    }
    const double total = stage_sum(c, variant, stages);
    return finish("act", variant, base, total, std::move(stages));
}

FlopsReport ratio_combined(const FlopsConfig& c, FlopsSchedule schedule, FlopsVariant variant) {
    c.check_schedule(schedule);
    auto stages = flops_stages(c, variant, true, true);
    const double base = baseline_total(c, variant);
    const double total = stage_sum(c, variant, stages);
    return finish("combined", variant, base, total, std::move(stages));
}

Matrix savings_heatmap(const FlopsConfig& c, FlopsSchedule schedule, const IndexList& starts,
                       const std::vector<double>& counts, FlopsVariant variant) {
    Matrix out(starts.size(), counts.size());
    FlopsConfig cell = c;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        for (std::size_t j = 0; j < counts.size(); ++j) {
            cell.reduce_start = starts[i];
            cell.reduced_k = counts[j];
            out(i, j) = ratio_act(cell, schedule, variant).savings;
        }
    }
    return out;
}

}  // namespace fastmmoe
