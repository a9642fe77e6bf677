// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "fastmmoe/common.hpp"
#include "fastmmoe/matrix.hpp"

namespace fastmmoe {

/// deepseek30 and internvl48 pin fixed layer layouts; custom derives stages from prune_layers.
enum class FlopsSchedule : std::uint8_t { DeepSeek30, InternVL48, Custom };

std::string to_string(FlopsSchedule s);
FlopsSchedule parse_flops_schedule(const std::string& name);

/// How text tokens enter the count.
///  VisionOnly: per-layer cost of the vision subsequence alone, as in the closed forms.
///  WholeSequence: vision plus a fixed text segment, attention over the live total length.
enum class FlopsVariant : std::uint8_t { VisionOnly, WholeSequence };

std::string to_string(FlopsVariant v);

struct FlopsConfig {
    double batch = 1.0;
    double total_tokens = 0.0;        // L
    double vision_tokens = 0.0;       // L_v
    double hidden = 1.0;              // H
    double heads = 1.0;               // A
    double head_dim = 1.0;            // d
    double dense_intermediate = 0.0;  // S
    double expert_intermediate = 0.0; // S_m
    double num_experts = 1.0;         // E, routed
    double top_k = 1.0;               // K, routed experts per token
    double num_shared = 0.0;          // always-on shared experts
    double reduced_k = 1.0;           // K_v, routed experts per reduced vision token
    std::size_t reduce_start = 0;     // l_v, absolute layer index
    std::size_t num_layers = 1;
    std::size_t dense_layers = 0;     // leading dense-MLP layers
    IndexList prune_layers;
    double beta = 1.0;

    double text_tokens() const { return total_tokens - vision_tokens; }
    void validate() const;
    /// Rejects a config whose layout does not match a named schedule.
    void check_schedule(FlopsSchedule schedule) const;
};

/// Named presets: "deepseek30" and "internvl48".
FlopsConfig flops_preset(const std::string& name);
std::vector<std::string> flops_preset_names();

double attn_flops(double batch, double tokens, double hidden);
double mlp_flops(double batch, double tokens, double hidden, double intermediate);
double moe_flops(double batch, double tokens, double hidden, double experts, double expert_intermediate, double active);

/// Layers sharing one live vision-token count.
struct FlopsStage {
    std::size_t first_layer = 0;
    std::size_t last_layer = 0;
    std::size_t moe_layers = 0;      // N_s
    std::size_t dense_layers = 0;
    double vision_tokens = 0.0;
    double moe_cost = 0.0;           // C_s
    double reduced_moe_cost = 0.0;   // C'_s
    std::size_t reduced_layers = 0;  // m_s
    double delta() const { return reduced_moe_cost - moe_cost; }
};

struct FlopsReport {
    std::string name;
    FlopsVariant variant = FlopsVariant::VisionOnly;
    double baseline_total = 0.0;
    double optimized_total = 0.0;
    double ratio = 1.0;
    double savings = 0.0;
    std::vector<FlopsStage> stages;
};

/// Per-layer cost of a layer with `vision` live vision tokens and `vision_active` experts per vision token.
double moe_layer_cost(const FlopsConfig& c, FlopsVariant variant, double vision, double vision_active);
double dense_layer_cost(const FlopsConfig& c, FlopsVariant variant, double vision);

/// Stage decomposition of the layer stack for the config's prune layers and l_v.
std::vector<FlopsStage> flops_stages(const FlopsConfig& c, FlopsVariant variant, bool prune, bool reduce);

FlopsReport ratio_prune(const FlopsConfig& c, FlopsSchedule schedule, FlopsVariant variant = FlopsVariant::VisionOnly);
FlopsReport ratio_act(const FlopsConfig& c, FlopsSchedule schedule, FlopsVariant variant = FlopsVariant::VisionOnly);
FlopsReport ratio_combined(const FlopsConfig& c, FlopsSchedule schedule,
                           FlopsVariant variant = FlopsVariant::VisionOnly);

/// Entry (i, j) is the activation-reduction-only savings with l_v = starts[i] and K_v = counts[j].
Matrix savings_heatmap(const FlopsConfig& c, FlopsSchedule schedule, const IndexList& starts,
                       const std::vector<double>& counts, FlopsVariant variant = FlopsVariant::VisionOnly);

}  // namespace fastmmoe
