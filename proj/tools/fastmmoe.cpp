// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Exit codes: 0 ok, 1 invalid input, 2 runtime error.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fastmmoe/pipeline.hpp"

using fastmmoe::InvalidInput;
using json = nlohmann::json;

namespace {

/// Flags shared by `simulate` and `prune`. Each one, when given, overwrites the matching config key.
struct RunFlags {
    std::string config_path;
    std::optional<std::size_t> start_layer;
    std::optional<std::size_t> reduced_count;
    std::optional<double> activation_ratio;
    std::optional<std::string> strategy;
    std::optional<std::string> target;
    bool reduce_shared = false;
    std::optional<std::uint64_t> reduction_seed;
    std::optional<std::vector<std::size_t>> prune_layers;
    std::optional<double> stage_beta;
    std::optional<double> retention;
    std::optional<std::size_t> window;
    std::optional<double> alpha;
    std::optional<double> gamma;
    std::optional<std::string> similarity;
    std::optional<std::string> merge;
    std::optional<std::string> flops_preset;
    std::optional<std::string> json_out;
    std::optional<std::string> csv_dir;

    void add_to(CLI::App* app) {
        app->add_option("-c,--config", config_path, "JSON config file; flags override its values");
        app->add_option("--start-layer", start_layer, "first reduced layer (0-based)");
        app->add_option("--reduced-count", reduced_count, "experts kept per reduced token");
        app->add_option("--activation-ratio", activation_ratio, "fraction of K kept per reduced token");
        app->add_option("--strategy", strategy, "topk, mink or randomk");
        app->add_option("--target", target, "vision, text or all");
        app->add_flag("--reduce-shared", reduce_shared, "halve shared experts on reduced tokens");
        app->add_option("--reduction-seed", reduction_seed, "seed for randomk");
        app->add_option("--prune-layers", prune_layers, "layers after which vision tokens are pruned");
        app->add_option("--stage-beta", stage_beta, "per-stage retention");
        app->add_option("--retention", retention, "overall retention, split evenly across stages");
        app->add_option("--window", window, "window size");
        app->add_option("--alpha", alpha, "similarity weight in the redundancy score");
        app->add_option("--gamma", gamma, "merge rate");
        app->add_option("--similarity", similarity, "exact or approx");
        app->add_option("--merge", merge, "mean or mlerp");
        app->add_option("--flops-preset", flops_preset, "deepseek30 or internvl48");
        app->add_option("-o,--json", json_out, "report JSON path");
        app->add_option("--csv-dir", csv_dir, "directory for CSV tables");
    }

    json document() const {
        json doc = json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            FASTMMOE_CHECK(static_cast<bool>(in), "cannot open config file " + config_path);
            try {
                doc = json::parse(in);
            } catch (const json::parse_error& e) {
                throw InvalidInput("config " + config_path + " is not valid JSON: " + e.what());
            }
        }
        auto& r = doc["reduction"];
        if (start_layer) r["start_layer"] = *start_layer;
        if (reduced_count) {
            r["reduced_count"] = *reduced_count;
            r.erase("activation_ratio");
        }
        if (activation_ratio) {
            r["activation_ratio"] = *activation_ratio;
            r.erase("reduced_count");
        }
        if (strategy) r["strategy"] = *strategy;
        if (target) r["target"] = *target;
        if (reduce_shared) r["reduce_shared"] = true;
        if (reduction_seed) r["seed"] = *reduction_seed;
        if (r.is_null()) doc.erase("reduction");
        auto& p = doc["pruning"];
        if (prune_layers) p["layers"] = *prune_layers;
        if (stage_beta) {
            p["stage_beta"] = *stage_beta;
            p.erase("overall_retention");
        }
        if (retention) {
            p["overall_retention"] = *retention;
            p.erase("stage_beta");
        }
        if (window) p["window"] = *window;
        if (alpha) p["alpha"] = *alpha;
        if (gamma) p["gamma"] = *gamma;
        if (similarity) p["similarity"] = *similarity;
        if (merge) p["merge"] = *merge;
        if (p.is_null()) doc.erase("pruning");
        if (flops_preset) doc["flops"]["preset"] = *flops_preset;
        if (json_out) doc["output"]["json"] = *json_out;
        if (csv_dir) doc["output"]["csv_dir"] = *csv_dir;
        return doc;
    }
};

struct SyntheticFlags {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> num_vision;
    std::optional<std::size_t> num_text;
    std::optional<std::size_t> experts;
    std::optional<std::size_t> top_k;
    std::optional<std::size_t> shared;
    std::optional<std::size_t> hidden;
    std::optional<std::size_t> layers;
    std::vector<std::string> blocks;
    std::optional<double> block_similarity;
    std::optional<std::string> save_trace;

    void add_to(CLI::App* app) {
        app->add_option("--seed", seed, "generator seed");
        app->add_option("--num-vision", num_vision, "vision tokens");
        app->add_option("--num-text", num_text, "text tokens");
        app->add_option("--experts", experts, "routed experts");
        app->add_option("--top-k", top_k, "routed experts per token");
        app->add_option("--shared", shared, "shared experts");
        app->add_option("--hidden", hidden, "hidden size");
        app->add_option("--layers", layers, "layer count");
        app->add_option("--block", blocks, "planted block START:LENGTH in vision positions (repeatable)");
        app->add_option("--block-similarity", block_similarity, "minimum routing cosine inside planted blocks");
        app->add_option("--save-trace", save_trace, "also write the generated trace here");
    }

    void merge_into(json& doc) const {
        auto& s = doc["trace"]["synthetic"];
        if (s.is_null()) s = json::object();
        if (seed) s["seed"] = *seed;
        if (num_vision) s["num_vision"] = *num_vision;
        if (num_text) s["num_text"] = *num_text;
        if (experts) s["num_experts"] = *experts;
        if (top_k) s["top_k"] = *top_k;
        if (shared) s["num_shared"] = *shared;
        if (hidden) s["hidden_dim"] = *hidden;
        if (layers) s["num_layers"] = *layers;
        if (block_similarity) s["block_similarity"] = *block_similarity;
        if (!blocks.empty()) {
            json list = json::array();
            for (const auto& b : blocks) {
                const auto colon = b.find(':');
                FASTMMOE_CHECK(colon != std::string::npos, "--block expects START:LENGTH, got " + b);
                try {
                    list.push_back({{"start", std::stoul(b.substr(0, colon))}, {"length", std::stoul(b.substr(colon + 1))}});
                } catch (const std::logic_error&) {
                    throw InvalidInput("--block expects START:LENGTH, got " + b);
                }
            }
            s["blocks"] = list;
        }
    }
};

void print_summary(const fastmmoe::Report& r) {
    std::cout << "model " << r.model.model << ": " << r.num_vision << " vision, " << r.num_text << " text tokens, "
              << r.layers.size() << " layers\n";
    std::cout << "stage beta " << std::setprecision(6) << r.stage_beta << ", reduced count " << r.reduced_count << "\n";
    for (const auto& s : r.stages) {
        std::cout << "  layer " << s.layer << ": " << s.vision_before << " -> " << s.kept << " (dropped " << s.dropped
                  << ", absorbed " << s.absorbed << ")\n";
    }
    for (const auto& f : r.flops) {
        std::cout << "  flops " << f.name << " [" << fastmmoe::to_string(f.variant) << "] savings " << std::fixed
                  << std::setprecision(2) << 100.0 * f.savings << "%\n"
                  << std::defaultfloat;
    }
    for (const auto& w : r.warnings) {
        std::cerr << "warning: " << w << "\n";
    }
}

int finish_run(const json& doc, const std::optional<fastmmoe::Trace>& trace) {
    const auto config = fastmmoe::parse_run_config(doc);
    const auto report = trace ? fastmmoe::run_pipeline(*trace, config) : fastmmoe::run_pipeline(config);
    fastmmoe::emit_report(report, config.json_out, config.csv_dir);
    if (!config.json_out && !config.csv_dir) {
        std::cout << fastmmoe::report_to_json(report).dump(2) << "\n";
    } else {
        print_summary(report);
    }
    return 0;
}

std::vector<double> parse_doubles(const std::vector<std::string>& raw) {
    std::vector<double> out;
    for (const auto& s : raw) {
        try {
            out.push_back(std::stod(s));
        } catch (const std::logic_error&) {
            throw InvalidInput("not a number: " + s);
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Expert activation reduction and routing-aware token pruning simulator"};
    app.require_subcommand(1);

    RunFlags sim_flags;
    SyntheticFlags synth;
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic trace and run the pipeline on it");
    sim_flags.add_to(simulate);
    synth.add_to(simulate);

    RunFlags prune_flags;
    std::string prune_trace;
    auto* prune = app.add_subcommand("prune", "run the pipeline on a captured trace");
    prune_flags.add_to(prune);
    prune->add_option("-t,--trace", prune_trace, "trace JSON (overrides the config's trace path)");

    std::string flops_preset = "internvl48";
    std::vector<double> retentions{0.75, 0.5, 0.25};
    std::optional<std::size_t> flops_start;
    std::optional<double> flops_k;
    std::string flops_variant = "both";
    std::string heatmap_path;
    std::vector<std::size_t> heatmap_starts;
    std::vector<std::string> heatmap_counts;
    std::string flops_overrides;
    auto* flops = app.add_subcommand("flops", "analytical FLOPs ratios for a preset");
    flops->add_option("-p,--preset", flops_preset, "deepseek30 or internvl48");
    flops->add_option("--retention", retentions, "overall retentions to tabulate");
    flops->add_option("--start-layer", flops_start, "reduction start layer");
    flops->add_option("--reduced-k", flops_k, "routed experts per reduced vision token");
    flops->add_option("--variant", flops_variant, "vision_only, whole_sequence or both");
    flops->add_option("--overrides", flops_overrides, "JSON object of FLOPs field overrides");
    flops->add_option("--heatmap", heatmap_path, "write the activation-reduction savings heatmap CSV here");
    flops->add_option("--heatmap-starts", heatmap_starts, "start layers for the heatmap (default: all)");
    flops->add_option("--heatmap-counts", heatmap_counts, "reduced counts for the heatmap (default: 1..K)");

    std::string analyze_trace_path;
    std::size_t analyze_window = 5;
    std::string analyze_out;
    auto* analyze = app.add_subcommand("analyze", "routing similarity, top-k mass and stability of a trace");
    analyze->add_option("-t,--trace", analyze_trace_path, "trace JSON")->required();
    analyze->add_option("--window", analyze_window, "window for adjacent similarity");
    analyze->add_option("-o,--json", analyze_out, "write the analysis here instead of stdout");

    std::string validate_path;
    auto* validate = app.add_subcommand("validate", "check a trace file");
    validate->add_option("trace", validate_path, "trace JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (simulate->parsed()) {
            json doc = sim_flags.document();
            synth.merge_into(doc);
            if (doc["trace"].contains("path")) doc["trace"].erase("path");
            if (synth.save_trace) {
                const auto config = fastmmoe::parse_run_config(doc);
                const auto trace = fastmmoe::generate_synthetic(*config.synthetic);
                fastmmoe::save_trace(trace, *synth.save_trace);
                return finish_run(doc, trace);
            }
            return finish_run(doc, std::nullopt);
        }
        if (prune->parsed()) {
            json doc = prune_flags.document();
            if (!prune_trace.empty()) doc["trace"] = {{"path", prune_trace}};
            FASTMMOE_CHECK(doc.contains("trace") && doc["trace"].contains("path"), "prune needs a trace path");
            return finish_run(doc, std::nullopt);
        }
        if (flops->parsed()) {
            fastmmoe::FlopsConfig base = fastmmoe::flops_preset(flops_preset);
            if (!flops_overrides.empty()) {
                json ov;
                try {
                    ov = json::parse(flops_overrides);
                } catch (const json::parse_error& e) {
                    throw InvalidInput(std::string("--overrides is not valid JSON: ") + e.what());
                }
                base = fastmmoe::apply_flops_overrides(base, ov);
            }
            if (flops_start) base.reduce_start = *flops_start;
            if (flops_k) base.reduced_k = *flops_k;
            FASTMMOE_CHECK(flops_variant == "both" || flops_variant == "vision_only" || flops_variant == "whole_sequence",
                           "--variant must be vision_only, whole_sequence or both");
            std::vector<fastmmoe::FlopsVariant> variants;
            if (flops_variant != "whole_sequence") variants.push_back(fastmmoe::FlopsVariant::VisionOnly);
            if (flops_variant != "vision_only") variants.push_back(fastmmoe::FlopsVariant::WholeSequence);
            fastmmoe::FlopsSchedule schedule = fastmmoe::FlopsSchedule::Custom;
            try {
                schedule = fastmmoe::parse_flops_schedule(flops_preset);
                base.check_schedule(schedule);
            } catch (const InvalidInput&) {
                schedule = fastmmoe::FlopsSchedule::Custom;
            }
            std::cout << "retention,variant,stage_beta,prune_savings,act_savings,combined_savings\n";
            for (double r : retentions) {
                auto c = base;
                c.beta = fastmmoe::stage_beta(r, c.prune_layers.size());
                for (auto v : variants) {
                    std::cout << r << ',' << fastmmoe::to_string(v) << ',' << std::setprecision(6) << c.beta << ','
                              << fastmmoe::ratio_prune(c, schedule, v).savings << ','
                              << fastmmoe::ratio_act(c, schedule, v).savings << ','
                              << fastmmoe::ratio_combined(c, schedule, v).savings << '\n';
                }
            }
            if (!heatmap_path.empty()) {
                fastmmoe::IndexList starts(heatmap_starts.begin(), heatmap_starts.end());
                if (starts.empty()) {
                    for (std::size_t l = 0; l < base.num_layers; ++l) starts.push_back(l);
                }
                auto counts = parse_doubles(heatmap_counts);
                if (counts.empty()) {
                    for (double k = 1; k <= base.top_k; ++k) counts.push_back(k);
                }
                const auto heat = fastmmoe::savings_heatmap(base, schedule, starts, counts, variants.front());
                std::ofstream out(heatmap_path);
                if (!out) throw std::runtime_error("cannot write " + heatmap_path);
                out << fastmmoe::heatmap_csv(heat, starts, counts);
            }
            return 0;
        }
        if (analyze->parsed()) {
            const auto trace = fastmmoe::load_trace(analyze_trace_path);
            fastmmoe::Report r;
            r.model = trace.meta;
            r.analysis = fastmmoe::analyze_trace(trace, analyze_window);
            r.stability = fastmmoe::trace_stability(trace);
            const auto full = fastmmoe::report_to_json(r);
            nlohmann::ordered_json out;
            out["schema_version"] = full["schema_version"];
            out["model"] = full["model"];
            out["analysis"] = full["analysis"];
            out["stability"] = full["stability"];
            const std::string text = out.dump(2) + "\n";
            if (analyze_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream f(analyze_out);
                if (!f) throw std::runtime_error("cannot write " + analyze_out);
                f << text;
            }
            return 0;
        }
        if (validate->parsed()) {
            const auto trace = fastmmoe::load_trace(validate_path);
            std::cout << "ok: " << trace.num_tokens() << " tokens (" << trace.num_vision() << " vision), "
                      << trace.layers.size() << " layers\n";
            return 0;
        }
    } catch (const InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
