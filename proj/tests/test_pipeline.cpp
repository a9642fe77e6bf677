// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fastmmoe/pipeline.hpp"
#include "oracles.hpp"

using namespace fastmmoe;
using json = nlohmann::json;

namespace {

RunConfig synthetic_config(std::size_t nv, std::size_t layers) {
    RunConfig c;
    SyntheticSpec s;
    s.seed = 17;
    s.num_vision = nv;
    s.num_text = 6;
    s.num_layers = layers;
    s.hidden_dim = 16;
    s.expert_hidden = 8;
    c.synthetic = s;
    c.reduction.reduced_count = s.top_k;
    return c;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const std::string& s) {
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST(RunConfig, ParsesAndRejectsUnknownKeys) {
    auto doc = json::parse(R"({
        "trace": {"synthetic": {"seed": 3, "num_vision": 20}},
        "reduction": {"start_layer": 2, "activation_ratio": 0.5, "strategy": "mink", "target": "all"},
        "pruning": {"layers": [1, 3], "overall_retention": 0.25, "window": 4, "alpha": 0.7, "gamma": 0.05,
                    "similarity": "approx", "merge": "mean"},
        "flops": {"preset": "deepseek30", "overrides": {"vision_tokens": 600}},
        "output": {"json": "r.json"}
    })");
    auto c = parse_run_config(doc);
    EXPECT_EQ(c.synthetic->num_vision, 20u);
    EXPECT_EQ(c.reduction.strategy, SelectionStrategy::MinK);
    EXPECT_EQ(c.reduction.target, TargetModality::All);
    EXPECT_EQ(c.pruning.similarity, SimilarityMode::Approx);
    EXPECT_EQ(c.pruning.merge, MergeMode::Mean);
    EXPECT_NEAR(c.resolved_stage_beta(), stage_beta(0.25, 2), 1e-15);
    EXPECT_EQ(*c.json_out, "r.json");

    auto back = parse_run_config(json::parse(run_config_to_json(c).dump()));
    EXPECT_EQ(run_config_to_json(back), run_config_to_json(c));

    doc["pruning"]["windw"] = 3;
    EXPECT_THROW(parse_run_config(doc), InvalidInput);
    doc["pruning"].erase("windw");
    doc["pruning"]["stage_beta"] = 0.5;
    EXPECT_THROW(parse_run_config(doc), InvalidInput);
}

TEST(RunConfig, OverridesApply) {
    auto c = apply_flops_overrides(flops_preset("internvl48"), json{{"vision_tokens", 1000}, {"beta", 0.5}});
    EXPECT_EQ(c.vision_tokens, 1000.0);
    EXPECT_EQ(c.total_tokens, 1064.0);
    EXPECT_EQ(c.beta, 0.5);
    EXPECT_THROW(apply_flops_overrides(c, json{{"layers", 3}}), InvalidInput);
}

TEST(RunConfig, ValidatesAgainstModel) {
    auto c = synthetic_config(20, 4);
    c.pruning.prune_layers = {5};
    c.pruning.stage_beta = 0.5;
    EXPECT_THROW(run_pipeline(c), InvalidInput);
    c.pruning.prune_layers = {1};
    c.reduction.reduced_count = 99;
    EXPECT_THROW(run_pipeline(c), InvalidInput);
}

TEST(Pipeline, NoOpMatchesBaseline) {
    auto c = synthetic_config(40, 6);
    c.pruning.prune_layers = {1, 3};
    c.pruning.stage_beta = 1.0;
    auto trace = generate_synthetic(*c.synthetic);
    auto r = run_pipeline(trace, c);
    for (const auto& l : r.layers) {
        EXPECT_EQ(l.live_vision, 40u);
        EXPECT_EQ(l.routed_activations, l.baseline_routed_activations);
        EXPECT_EQ(l.shared_activations, l.baseline_shared_activations);
        EXPECT_EQ(l.reduced_tokens, 0u);
    }
    ASSERT_EQ(r.stages.size(), 2u);
    for (const auto& s : r.stages) {
        EXPECT_TRUE(s.plan.is_identity());
        auto out = apply_plan(*trace.layers[s.layer].hidden, trace.mask, s.plan, MergeMode::Mlerp);
        EXPECT_EQ(out.hidden, *trace.layers[s.layer].hidden);
    }
    for (const auto& f : r.flops) EXPECT_EQ(f.ratio, 1.0);
    EXPECT_EQ(r.simulated_flops->ratio, 1.0);
}

TEST(Pipeline, ThreeStageCountsFollowPerStageRounding) {
    auto c = synthetic_config(300, 6);
    c.synthetic->hidden_dim = 8;
    c.pruning.prune_layers = {0, 2, 4};
    c.overall_retention = 0.25;
    c.pruning.window = 5;
    c.pruning.gamma = 0.05;
    auto r = run_pipeline(c);
    const auto expect = oracle::staged_counts(300, stage_beta(0.25, 3), 3);
    ASSERT_EQ(expect, (std::vector<std::size_t>{300, 189, 119, 75}));
    ASSERT_EQ(r.stages.size(), 3u);
    for (std::size_t s = 0; s < 3; ++s) {
        EXPECT_EQ(r.stages[s].vision_before, expect[s]);
        EXPECT_EQ(r.stages[s].kept, expect[s + 1]);
        EXPECT_EQ(r.stages[s].kept + r.stages[s].dropped + r.stages[s].absorbed, r.stages[s].vision_before);
    }
    EXPECT_EQ(r.layers.back().live_vision, 75u);
    EXPECT_EQ(r.layers.back().live_text, 6u);
}

TEST(Pipeline, PlantedBlockIsMergedUnderPureSimilarity) {
    auto c = synthetic_config(64, 4);
    c.synthetic->blocks = {{10, 10}};
    c.synthetic->block_similarity = 1.0;
    c.pruning.prune_layers = {1};
    c.pruning.stage_beta = 0.5;
    c.pruning.window = 5;
    c.pruning.alpha = 1.0;
    c.pruning.gamma = 0.1;
    auto r = run_pipeline(c);
    ASSERT_EQ(r.stages.size(), 1u);
    const auto& plan = r.stages[0].plan;
    ASSERT_GE(plan.merge_windows.size(), 2u);
    EXPECT_EQ(plan.merge_windows[0], 2u);
    EXPECT_EQ(plan.merge_windows[1], 3u);
    EXPECT_EQ(r.stages[0].merged_norms.size(), plan.merge_windows.size());
}

TEST(Pipeline, ReductionCountsPerLayer) {
    auto c = synthetic_config(30, 5);
    c.reduction.start_layer = 2;
    c.reduction.reduced_count = 1;
    auto r = run_pipeline(c);
    for (const auto& l : r.layers) {
        const std::size_t k = c.synthetic->top_k;
        if (l.layer < 2) {
            EXPECT_EQ(l.routed_activations, (30 + 6) * k);
        } else {
            EXPECT_EQ(l.routed_activations, 30 * 1 + 6 * k);
            EXPECT_EQ(l.reduced_tokens, 30u);
        }
    }
}

TEST(Pipeline, DeterministicJson) {
    auto c = synthetic_config(50, 5);
    c.pruning.prune_layers = {1, 3};
    c.overall_retention = 0.5;
    c.pruning.gamma = 0.05;
    c.reduction.strategy = SelectionStrategy::RandomK;
    c.reduction.reduced_count = 2;
    c.reduction.seed = 99;
    EXPECT_EQ(report_to_json(run_pipeline(c)).dump(), report_to_json(run_pipeline(c)).dump());
}

TEST(Pipeline, StabilityOnlyWithNorms) {
    auto c = synthetic_config(20, 3);
    EXPECT_TRUE(run_pipeline(c).stability.has_value());
    c.synthetic->record_norms = false;
    EXPECT_FALSE(run_pipeline(c).stability.has_value());
}

TEST(Pipeline, MergeBoundDiscrepancyFlagged) {
    auto rows = merge_bound_table();
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_FALSE(rows[0].discrepancy);
    EXPECT_TRUE(rows[1].discrepancy);
    EXPECT_NEAR(rows[1].bound, 0.0665, 5e-4);
    EXPECT_FALSE(rows[2].discrepancy);
    auto doc = report_to_json(run_pipeline(synthetic_config(20, 2)));
    EXPECT_EQ(doc["merge_bounds"][1]["beta"], 0.79);
    EXPECT_EQ(doc["merge_bounds"][1]["reference"], 0.05);
    EXPECT_EQ(doc["merge_bounds"][1]["discrepancy"], true);
}

TEST(Report, EmitJsonAndCsv) {
    auto c = synthetic_config(25, 4);
    c.pruning.prune_layers = {1};
    c.pruning.stage_beta = 0.6;
    auto r = run_pipeline(c);
    const auto dir = std::filesystem::temp_directory_path() / "fastmmoe_report_test";
    std::filesystem::remove_all(dir);
    emit_report(r, (dir / "report.json").string(), (dir / "csv").string());
    auto doc = json::parse(read_file(dir / "report.json"));
    EXPECT_EQ(doc["schema_version"], kReportSchemaVersion);
    EXPECT_EQ(doc["layers"].size(), 4u);
    EXPECT_EQ(doc["stages"][0]["kept"], r.stages[0].kept);
    auto ordered = report_to_json(r);
    EXPECT_EQ(ordered.begin().key(), "schema_version");
    EXPECT_EQ(line_count(read_file(dir / "csv" / "per_layer.csv")), 1u + 4u);
    EXPECT_EQ(line_count(read_file(dir / "csv" / "stages.csv")), 1u + 1u);
    EXPECT_EQ(line_count(read_file(dir / "csv" / "flops.csv")), 1u + r.flops.size());
    std::filesystem::remove_all(dir);
}

TEST(Report, EmptyReportIsValid) {
    Report empty;
    auto text = report_to_json(empty).dump();
    auto doc = json::parse(text);
    EXPECT_EQ(doc["schema_version"], kReportSchemaVersion);
    EXPECT_TRUE(doc["layers"].empty());
    EXPECT_EQ(line_count(per_layer_csv(empty)), 1u);
}

TEST(Report, HeatmapCsv) {
    Matrix h = Matrix::from_rows({{0.5, 0.25}, {0.1, 0.0}});
    auto csv = heatmap_csv(h, {0, 1}, {1, 2});
    EXPECT_EQ(csv, "start_layer,k_1,k_2\n0,0.5,0.25\n1,0.1,0\n");
    EXPECT_THROW(heatmap_csv(h, {0}, {1, 2}), InvalidInput);
}

TEST(Analysis, MatchesTraceLayers) {
    auto c = synthetic_config(20, 3);
    auto t = generate_synthetic(*c.synthetic);
    auto a = analyze_trace(t, 5);
    ASSERT_EQ(a.size(), 3u);
    EXPECT_TRUE(a[0].adjacent_similarity.vision.has_value());
    EXPECT_TRUE(a[0].topk_sum.text.has_value());
}
