// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fastmmoe/expert_reduction.hpp"
#include "fastmmoe/flops.hpp"
#include "fastmmoe/synthetic.hpp"
#include "fastmmoe/theory.hpp"
#include "fastmmoe/token_pruning.hpp"
#include "fastmmoe/trace.hpp"

namespace fastmmoe {

inline constexpr const char* kReportSchemaVersion = "1.0";

struct RunConfig {
    std::optional<std::string> trace_path;
    std::optional<SyntheticSpec> synthetic;
    ReductionPolicy reduction;
    PruneSchedule pruning;
    /// When set, stage beta is derived as overall^(1/stages).
    std::optional<double> overall_retention;
    std::string flops_preset = "internvl48";
    nlohmann::json flops_overrides = nlohmann::json::object();
    std::optional<std::string> json_out;
    std::optional<std::string> csv_dir;

    /// Resolves derived fields (stage beta) and checks consistency against the trace model.
    void validate(const TraceMetadata& model) const;
    double resolved_stage_beta() const;
};

/// Parses a JSON config document. Unknown keys are rejected.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);
nlohmann::ordered_json run_config_to_json(const RunConfig& config);

/// Applies `overrides` (FLOPs field names as keys) on top of a preset.
FlopsConfig apply_flops_overrides(FlopsConfig base, const nlohmann::json& overrides);

struct LayerRecord {
    std::size_t layer = 0;
    std::size_t live_vision = 0;
    std::size_t live_text = 0;
    std::size_t routed_activations = 0;
    std::size_t baseline_routed_activations = 0;
    std::size_t shared_activations = 0;
    std::size_t baseline_shared_activations = 0;
    std::size_t reduced_tokens = 0;
};

struct StageRecord {
    std::size_t layer = 0;
    std::size_t vision_before = 0;
    std::size_t target = 0;
    WindowScores scores;
    PrunePlan plan;
    std::size_t kept = 0;
    std::size_t dropped = 0;
    std::size_t absorbed = 0;
    /// Norms of merged tokens, when the trace carries hidden states.
    Vector merged_norms;
    /// Global trace positions of the vision tokens in this stage, in order.
    IndexList vision_origins;
};

struct LayerAnalysis {
    std::size_t layer = 0;
    ModalityValue adjacent_similarity;
    ModalityValue topk_sum;
};

struct MergeBoundRow {
    double overall_retention = 0.0;
    double beta = 0.0;
    std::size_t window = 0;
    double bound = 0.0;
    std::optional<double> reference;
    bool discrepancy = false;
};

struct Report {
    TraceMetadata model;
    std::size_t num_vision = 0;
    std::size_t num_text = 0;
    double stage_beta = 1.0;
    std::size_t reduced_count = 0;
    std::vector<LayerRecord> layers;
    std::vector<StageRecord> stages;
    std::vector<FlopsReport> flops;
    std::optional<FlopsReport> simulated_flops;
    std::optional<StabilityReport> stability;
    std::vector<LayerAnalysis> analysis;
    std::vector<MergeBoundRow> merge_bounds;
    std::vector<std::string> warnings;
    nlohmann::ordered_json config;
};

/// Runs reduction and staged pruning layer by layer over a trace. Later layers read the trace rows of
/// the surviving tokens; a merged token continues with the rows of its window's first position.
Report run_pipeline(const Trace& trace, const RunConfig& config);
/// Loads or generates the configured trace, then runs it.
Report run_pipeline(const RunConfig& config);

/// Trace-level statistics: adjacent routing similarity and top-(K/2) probability mass per layer.
std::vector<LayerAnalysis> analyze_trace(const Trace& trace, std::size_t window);
std::optional<StabilityReport> trace_stability(const Trace& trace);

/// Feasible merge-rate bounds for the standard 75/50/25% three-stage settings with window 5, plus the run's own.
std::vector<MergeBoundRow> merge_bound_table(std::optional<double> run_beta = std::nullopt,
                                             std::optional<std::size_t> run_window = std::nullopt);

nlohmann::ordered_json report_to_json(const Report& report);
std::string per_layer_csv(const Report& report);
std::string stages_csv(const Report& report);
std::string heatmap_csv(const Matrix& heatmap, const IndexList& starts, const std::vector<double>& counts);

/// Writes the JSON report and, when a directory is given, the CSV tables.
void emit_report(const Report& report, const std::optional<std::string>& json_path,
                 const std::optional<std::string>& csv_dir);

}  // namespace fastmmoe
