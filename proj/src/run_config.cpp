// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <set>

#include "fastmmoe/pipeline.hpp"

namespace fastmmoe {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    FASTMMOE_CHECK(obj.is_object(), where + ": expected an object");
    for (const auto& [key, _] : obj.items()) {
        FASTMMOE_CHECK(allowed.count(key) > 0, where + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) {
        return;
    }
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InvalidInput(where + "." + key + ": " + e.what());
    }
}

SyntheticSpec parse_synthetic(const json& j) {
    const std::string where = "trace.synthetic";
    reject_unknown(j,
                   {"seed", "num_vision", "num_text", "num_experts", "top_k", "num_shared", "hidden_dim",
                    "expert_hidden", "num_layers", "blocks", "block_similarity", "router_scale", "record_hidden",
                    "record_norms"},
                   where);
    SyntheticSpec s;
    read(j, "seed", s.seed, where);
    read(j, "num_vision", s.num_vision, where);
    read(j, "num_text", s.num_text, where);
    read(j, "num_experts", s.num_experts, where);
    read(j, "top_k", s.top_k, where);
    read(j, "num_shared", s.num_shared, where);
    read(j, "hidden_dim", s.hidden_dim, where);
    read(j, "expert_hidden", s.expert_hidden, where);
    read(j, "num_layers", s.num_layers, where);
    read(j, "block_similarity", s.block_similarity, where);
    read(j, "router_scale", s.router_scale, where);
    read(j, "record_hidden", s.record_hidden, where);
    read(j, "record_norms", s.record_norms, where);
    if (j.contains("blocks")) {
        for (const auto& b : j.at("blocks")) {
            reject_unknown(b, {"start", "length"}, where + ".blocks[]");
            PlantedBlock block;
            read(b, "start", block.start, where + ".blocks[]");
            read(b, "length", block.length, where + ".blocks[]");
            s.blocks.push_back(block);
        }
    }
    return s;
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
    reject_unknown(doc, {"trace", "reduction", "pruning", "flops", "output"}, "config");
    RunConfig c;
    if (doc.contains("trace")) {
        const auto& t = doc.at("trace");
        reject_unknown(t, {"path", "synthetic"}, "trace");
        FASTMMOE_CHECK(!(t.contains("path") && t.contains("synthetic")), "trace: give either path or synthetic");
        if (t.contains("path")) {
            c.trace_path = t.at("path").get<std::string>();
        }
        if (t.contains("synthetic")) {
            c.synthetic = parse_synthetic(t.at("synthetic"));
        }
    }
    if (doc.contains("reduction")) {
        const auto& r = doc.at("reduction");
        const std::string where = "reduction";
        reject_unknown(r, {"start_layer", "reduced_count", "activation_ratio", "strategy", "target", "reduce_shared", "seed"},
                       where);
        read(r, "start_layer", c.reduction.start_layer, where);
        if (r.contains("reduced_count")) c.reduction.reduced_count = r.at("reduced_count").get<std::size_t>();
        if (r.contains("activation_ratio")) c.reduction.activation_ratio = r.at("activation_ratio").get<double>();
        if (r.contains("strategy")) c.reduction.strategy = parse_strategy(r.at("strategy").get<std::string>());
        if (r.contains("target")) c.reduction.target = parse_target(r.at("target").get<std::string>());
        read(r, "reduce_shared", c.reduction.reduce_shared, where);
        read(r, "seed", c.reduction.seed, where);
    }
    if (doc.contains("pruning")) {
        const auto& p = doc.at("pruning");
        const std::string where = "pruning";
        reject_unknown(p, {"layers", "stage_beta", "overall_retention", "window", "alpha", "gamma", "similarity", "merge"},
                       where);
        read(p, "layers", c.pruning.prune_layers, where);
        read(p, "stage_beta", c.pruning.stage_beta, where);
        if (p.contains("overall_retention")) c.overall_retention = p.at("overall_retention").get<double>();
        FASTMMOE_CHECK(!(p.contains("stage_beta") && p.contains("overall_retention")),
                       "pruning: give either stage_beta or overall_retention");
        read(p, "window", c.pruning.window, where);
        read(p, "alpha", c.pruning.alpha, where);
        read(p, "gamma", c.pruning.gamma, where);
        if (p.contains("similarity")) c.pruning.similarity = parse_similarity_mode(p.at("similarity").get<std::string>());
        if (p.contains("merge")) c.pruning.merge = parse_merge_mode(p.at("merge").get<std::string>());
    }
    if (doc.contains("flops")) {
        const auto& f = doc.at("flops");
        reject_unknown(f, {"preset", "overrides"}, "flops");
        read(f, "preset", c.flops_preset, "flops");
        if (f.contains("overrides")) c.flops_overrides = f.at("overrides");
    }
    if (doc.contains("output")) {
        const auto& o = doc.at("output");
        reject_unknown(o, {"json", "csv_dir"}, "output");
        if (o.contains("json")) c.json_out = o.at("json").get<std::string>();
        if (o.contains("csv_dir")) c.csv_dir = o.at("csv_dir").get<std::string>();
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    FASTMMOE_CHECK(static_cast<bool>(in), "cannot open config file " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw InvalidInput("config " + path + " is not valid JSON: " + e.what());
    }
    return parse_run_config(doc);
}

ordered_json run_config_to_json(const RunConfig& c) {
    ordered_json doc;
    if (c.trace_path) {
        doc["trace"]["path"] = *c.trace_path;
    }
    if (c.synthetic) {
        const auto& s = *c.synthetic;
        ordered_json j;
        j["seed"] = s.seed;
        j["num_vision"] = s.num_vision;
        j["num_text"] = s.num_text;
        j["num_experts"] = s.num_experts;
        j["top_k"] = s.top_k;
        j["num_shared"] = s.num_shared;
        j["hidden_dim"] = s.hidden_dim;
        j["expert_hidden"] = s.expert_hidden;
        j["num_layers"] = s.num_layers;
        ordered_json blocks = ordered_json::array();
        for (const auto& b : s.blocks) {
            blocks.push_back({{"start", b.start}, {"length", b.length}});
        }
        j["blocks"] = blocks;
        j["block_similarity"] = s.block_similarity;
        j["router_scale"] = s.router_scale;
        j["record_hidden"] = s.record_hidden;
        j["record_norms"] = s.record_norms;
        doc["trace"]["synthetic"] = j;
    }
    ordered_json r;
    r["start_layer"] = c.reduction.start_layer;
    if (c.reduction.reduced_count) r["reduced_count"] = *c.reduction.reduced_count;
    if (c.reduction.activation_ratio) r["activation_ratio"] = *c.reduction.activation_ratio;
    r["strategy"] = to_string(c.reduction.strategy);
    r["target"] = to_string(c.reduction.target);
    r["reduce_shared"] = c.reduction.reduce_shared;
    r["seed"] = c.reduction.seed;
    doc["reduction"] = r;
    ordered_json p;
    p["layers"] = c.pruning.prune_layers;
    if (c.overall_retention) {
        p["overall_retention"] = *c.overall_retention;
    } else {
        p["stage_beta"] = c.pruning.stage_beta;
    }
    p["window"] = c.pruning.window;
    p["alpha"] = c.pruning.alpha;
    p["gamma"] = c.pruning.gamma;
    p["similarity"] = to_string(c.pruning.similarity);
    p["merge"] = to_string(c.pruning.merge);
    doc["pruning"] = p;
    doc["flops"]["preset"] = c.flops_preset;
    doc["flops"]["overrides"] = ordered_json::parse(c.flops_overrides.dump());
    return doc;
}

double RunConfig::resolved_stage_beta() const {
    if (!overall_retention) {
        return pruning.stage_beta;
    }
    FASTMMOE_CHECK(!pruning.prune_layers.empty(), "overall retention needs at least one prune layer");
    return stage_beta(*overall_retention, pruning.prune_layers.size());
}

void RunConfig::validate(const TraceMetadata& model) const {
    reduction.validate(model.top_k, model.num_shared, model.num_layers);
    PruneSchedule resolved = pruning;
    resolved.stage_beta = resolved_stage_beta();
    resolved.validate();
    FASTMMOE_CHECK(pruning.prune_layers.empty() || pruning.prune_layers.back() < model.num_layers,
                   "pruning: prune layer beyond the trace's layer count");
}

FlopsConfig apply_flops_overrides(FlopsConfig c, const json& overrides) {
    reject_unknown(overrides,
                   {"vision_tokens", "total_tokens", "hidden", "heads", "head_dim", "dense_intermediate",
                    "expert_intermediate", "num_experts", "top_k", "num_shared", "reduced_k", "reduce_start",
                    "num_layers", "dense_layers", "prune_layers", "beta"},
                   "flops.overrides");
    const std::string where = "flops.overrides";
    read(overrides, "vision_tokens", c.vision_tokens, where);
    read(overrides, "total_tokens", c.total_tokens, where);
    read(overrides, "hidden", c.hidden, where);
    read(overrides, "heads", c.heads, where);
    read(overrides, "head_dim", c.head_dim, where);
    read(overrides, "dense_intermediate", c.dense_intermediate, where);
    read(overrides, "expert_intermediate", c.expert_intermediate, where);
    read(overrides, "num_experts", c.num_experts, where);
    read(overrides, "top_k", c.top_k, where);
    read(overrides, "num_shared", c.num_shared, where);
    read(overrides, "reduced_k", c.reduced_k, where);
    read(overrides, "reduce_start", c.reduce_start, where);
    read(overrides, "num_layers", c.num_layers, where);
    read(overrides, "dense_layers", c.dense_layers, where);
    read(overrides, "prune_layers", c.prune_layers, where);
    read(overrides, "beta", c.beta, where);
    if (overrides.contains("vision_tokens") && !overrides.contains("total_tokens")) {
        c.total_tokens = c.vision_tokens + 64;
    }
    return c;
}

}  // namespace fastmmoe
