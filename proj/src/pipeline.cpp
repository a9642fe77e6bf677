// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastmmoe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fastmmoe {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr double kMergeBoundTolerance = 0.005;

Matrix gather_rows(const Matrix& m, const IndexList& rows) {
    return m.select_rows(rows);
}

ModalityMask gather_mask(const ModalityMask& mask, const IndexList& rows) {
    ModalityMask out;
    out.reserve(rows.size());
    for (auto r : rows) {
        out.push_back(mask[r]);
    }
    return out;
}

FlopsSchedule schedule_for(const FlopsConfig& c, const std::string& preset) {
    FlopsSchedule named = FlopsSchedule::Custom;
    try {
        named = parse_flops_schedule(preset);
    } catch (const InvalidInput&) {
        return FlopsSchedule::Custom;
    }
    try {
        c.check_schedule(named);
    } catch (const InvalidInput&) {
        return FlopsSchedule::Custom;
    }
    return named;
}

// Cost of the run itself, from the live token counts and the activations the gate plans made.
FlopsReport simulated_flops(const Trace& trace, const std::vector<LayerRecord>& layers) {
    const double h = static_cast<double>(trace.meta.hidden_dim);
    const double sm = trace.meta.expert_hidden > 0 ? static_cast<double>(trace.meta.expert_hidden) : h;
    const double e = static_cast<double>(trace.meta.num_experts);
    const double full_tokens = static_cast<double>(trace.num_tokens());
    double base = 0.0;
    double opt = 0.0;
    for (const auto& l : layers) {
        const double live = static_cast<double>(l.live_vision + l.live_text);
        const double base_act = static_cast<double>(l.baseline_routed_activations + l.baseline_shared_activations);
        const double act = static_cast<double>(l.routed_activations + l.shared_activations);
        // Baseline activations are counted on the live set; rescale to the unpruned sequence.
        const double per_token_base = live > 0 ? base_act / live : 0.0;
        base += attn_flops(1.0, full_tokens, h) + 2.0 * full_tokens * h * e + 6.0 * h * sm * per_token_base * full_tokens;
        opt += attn_flops(1.0, live, h) + 2.0 * live * h * e + 6.0 * h * sm * act;
    }
    FlopsReport r;
    r.name = "simulated";
    r.variant = FlopsVariant::WholeSequence;
    r.baseline_total = base;
    r.optimized_total = opt;
    r.ratio = base > 0 ? opt / base : 1.0;
    r.savings = 1.0 - r.ratio;
    return r;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

std::string fmt(const std::optional<double>& v) {
    return v ? fmt(*v) : std::string();
}

ordered_json opt_json(const std::optional<double>& v) {
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json flops_json(const FlopsReport& r) {
    ordered_json j;
    j["name"] = r.name;
    j["variant"] = to_string(r.variant);
    j["baseline_total"] = r.baseline_total;
    j["optimized_total"] = r.optimized_total;
    j["ratio"] = r.ratio;
    j["savings"] = r.savings;
    ordered_json stages = ordered_json::array();
    for (const auto& s : r.stages) {
        stages.push_back({{"first_layer", s.first_layer},
                          {"last_layer", s.last_layer},
                          {"moe_layers", s.moe_layers},
                          {"dense_layers", s.dense_layers},
                          {"vision_tokens", s.vision_tokens},
                          {"moe_cost", s.moe_cost},
                          {"reduced_moe_cost", s.reduced_moe_cost},
                          {"reduced_layers", s.reduced_layers}});
    }
    j["stages"] = stages;
    return j;
}

ordered_json score_json(const StabilityScore& s) {
    return {{"mean", s.mean}, {"stddev", s.stddev}, {"cv", s.cv}, {"stability", s.stability}};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

}  // namespace

std::vector<LayerAnalysis> analyze_trace(const Trace& trace, std::size_t window) {
    std::vector<LayerAnalysis> out;
    const std::size_t k = std::max<std::size_t>(1, trace.meta.top_k / 2);
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
        const auto dist = trace.layers[l].probabilities();
        LayerAnalysis a;
        a.layer = l;
        a.adjacent_similarity = adjacent_routing_similarity(dist, trace.mask, window);
        a.topk_sum = topk_prob_sum(dist, trace.mask, k);
        out.push_back(a);
    }
    return out;
}

std::optional<StabilityReport> trace_stability(const Trace& trace) {
    StabilityReport report;
    bool any = false;
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
        const auto& norms = trace.layers[l].expert_norms;
        if (!norms) {
            continue;
        }
        Vector vision;
        Vector text;
        for (std::size_t t = 0; t < norms->rows(); ++t) {
            auto row = norms->row(t);
            auto& dst = trace.mask[t] == Modality::Vision ? vision : text;
            dst.insert(dst.end(), row.begin(), row.end());
        }
        LayerStability ls;
        ls.layer = l;
        if (!vision.empty()) ls.vision = stability_score(vision);
        if (!text.empty()) ls.text = stability_score(text);
        if (ls.vision && ls.text) ls.delta = ls.vision->stability - ls.text->stability;
        report.layers.push_back(ls);
        any = true;
    }
    if (!any) {
        return std::nullopt;
    }
    return report;
}

std::vector<MergeBoundRow> merge_bound_table(std::optional<double> run_beta, std::optional<std::size_t> run_window) {
    struct Ref {
        double retention;
        double beta;
        double gamma;
    };
    // Stage retentions as commonly tabulated, two decimals.
    const Ref refs[] = {{0.75, 0.91, 0.025}, {0.50, 0.79, 0.05}, {0.25, 0.63, 0.15}};
    std::vector<MergeBoundRow> rows;
    for (const auto& r : refs) {
        MergeBoundRow row;
        row.overall_retention = r.retention;
        row.beta = r.beta;
        row.window = 5;
        row.bound = gamma_upper_bound(r.beta, 5);
        row.reference = r.gamma;
        row.discrepancy = std::abs(row.bound - r.gamma) > kMergeBoundTolerance;
        rows.push_back(row);
    }
    if (run_beta && run_window) {
        MergeBoundRow row;
        row.overall_retention = std::pow(*run_beta, 3.0);
        row.beta = *run_beta;
        row.window = *run_window;
        row.bound = *run_beta < 1.0 ? gamma_upper_bound(*run_beta, *run_window) : 0.0;
        rows.push_back(row);
    }
    return rows;
}

Report run_pipeline(const Trace& trace, const RunConfig& config) {
    trace.validate();
    config.validate(trace.meta);

    Report report;
    report.model = trace.meta;
    report.num_vision = trace.num_vision();
    report.num_text = trace.num_tokens() - report.num_vision;
    report.stage_beta = config.resolved_stage_beta();
    report.reduced_count = config.reduction.resolved_count(trace.meta.top_k);
    report.config = run_config_to_json(config);

    PruneSchedule schedule = config.pruning;
    schedule.stage_beta = report.stage_beta;
    for (const auto& w : schedule.warnings()) {
        report.warnings.push_back(w);
    }

    // Vision ordinal of each global position, for indexing the attention rows.
    IndexList vision_ordinal(trace.num_tokens(), 0);
    for (std::size_t t = 0, v = 0; t < trace.num_tokens(); ++t) {
        if (trace.mask[t] == Modality::Vision) vision_ordinal[t] = v++;
    }

    IndexList live(trace.num_tokens());
    for (std::size_t t = 0; t < live.size(); ++t) live[t] = t;

    const std::size_t K = trace.meta.top_k;
    const std::size_t Ns = trace.meta.num_shared;
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
        try {
            const auto& layer = trace.layers[l];
            const ModalityMask live_mask = gather_mask(trace.mask, live);
            const RoutingDistribution full = layer.probabilities();
            const RoutingDistribution dist(gather_rows(full.probs(), live), kTraceRowTolerance);

            const auto gates = apply_reduction(dist, live_mask, l, config.reduction, K, Ns);
            const auto base = baseline_gating(dist, K, Ns);
            LayerRecord rec;
            rec.layer = l;
            rec.live_vision = count_modality(live_mask, Modality::Vision);
            rec.live_text = live.size() - rec.live_vision;
            rec.routed_activations = gates.routed_activations();
            rec.shared_activations = gates.shared_activations();
            rec.baseline_routed_activations = base.routed_activations();
            rec.baseline_shared_activations = base.shared_activations();
            rec.reduced_tokens = gates.reduced_tokens();
            report.layers.push_back(rec);

            if (!schedule.prunes_at(l) || rec.live_vision == 0) {
                continue;
            }

            StageRecord stage;
            stage.layer = l;
            stage.vision_before = rec.live_vision;
            IndexList vision_live;  // indices into `live`
            Vector token_attention;
            for (std::size_t i = 0; i < live.size(); ++i) {
                if (live_mask[i] == Modality::Vision) {
                    vision_live.push_back(i);
                    stage.vision_origins.push_back(live[i]);
                    token_attention.push_back(layer.attention[vision_ordinal[live[i]]]);
                }
            }
            const Matrix vision_routing = gather_rows(dist.probs(), vision_live);
            const auto view = window_partition(stage.vision_before, schedule.window);
            stage.scores = score_windows(vision_routing, token_attention, view, schedule.alpha, schedule.similarity);
            if (stage.scores.zero_attention) {
                report.warnings.push_back("layer " + std::to_string(l) + ": all vision attention is zero");
            }
            stage.target = stage_target(stage.vision_before, schedule.stage_beta);
            stage.plan = plan_pruning(stage.vision_before, stage.target, schedule, stage.scores.redundancy,
                                      stage.scores.attention, token_attention, view);
            for (const auto& msg : stage.plan.log) {
                report.warnings.push_back("layer " + std::to_string(l) + ": " + msg);
            }
            stage.kept = stage.plan.kept_positions.size();
            stage.dropped = stage.plan.dropped();
            stage.absorbed = stage.plan.absorbed();
            if (stage.kept + stage.dropped + stage.absorbed != stage.vision_before || stage.kept != stage.target) {
                throw std::logic_error("token accounting mismatch at layer " + std::to_string(l));
            }

            if (layer.hidden) {
                const Matrix hidden = gather_rows(*layer.hidden, live);
                const auto pruned = apply_plan(hidden, live_mask, stage.plan, schedule.merge);
                for (std::size_t r = 0; r < pruned.origin.size(); ++r) {
                    const std::size_t origin = pruned.origin[r];
                    if (live_mask[origin] != Modality::Vision) continue;
                    const std::size_t pos = std::find(vision_live.begin(), vision_live.end(), origin) - vision_live.begin();
                    if (std::find(stage.plan.merged_position.begin(), stage.plan.merged_position.end(), pos) !=
                        stage.plan.merged_position.end()) {
                        stage.merged_norms.push_back(l2_norm(pruned.hidden.row(r)));
                    }
                }
            }

            std::vector<bool> keep_vision(stage.vision_before, false);
            for (auto p : stage.plan.kept_positions) keep_vision[p] = true;
            IndexList next;
            for (std::size_t i = 0, v = 0; i < live.size(); ++i) {
                if (live_mask[i] == Modality::Vision) {
                    if (keep_vision[v++]) next.push_back(live[i]);
                } else {
                    next.push_back(live[i]);
                }
            }
            live = std::move(next);
            report.stages.push_back(std::move(stage));
        } catch (const InvalidInput& e) {
            throw InvalidInput("layer " + std::to_string(l) + ": " + e.what());
        }
    }

    // Analytical FLOPs on the configured preset, with the run's beta and reduction settings.
    FlopsConfig fc = flops_preset(config.flops_preset);
    fc.beta = report.stage_beta;
    fc.reduce_start = config.reduction.start_layer;
    fc.reduced_k = static_cast<double>(round_half_up(fc.top_k * static_cast<double>(report.reduced_count) /
                                                     static_cast<double>(K)));
    fc = apply_flops_overrides(fc, config.flops_overrides);
    if (config.reduction.target != TargetModality::Vision) {
        report.warnings.push_back("analytical FLOPs only model vision-token reduction");
    }
    if (fc.reduce_start >= fc.num_layers) {
        report.warnings.push_back("reduction start layer is past the FLOPs model's last layer");
        fc.reduce_start = fc.num_layers;
        fc.reduced_k = fc.top_k;
    }
    const auto fs = schedule_for(fc, config.flops_preset);
    for (auto variant : {FlopsVariant::VisionOnly, FlopsVariant::WholeSequence}) {
        report.flops.push_back(ratio_prune(fc, fs, variant));
        report.flops.push_back(ratio_act(fc, fs, variant));
        report.flops.push_back(ratio_combined(fc, fs, variant));
    }
    if (trace.meta.hidden_dim > 0) {
        report.simulated_flops = simulated_flops(trace, report.layers);
    }

    report.stability = trace_stability(trace);
    report.analysis = analyze_trace(trace, schedule.window);
    report.merge_bounds = merge_bound_table(report.stage_beta, schedule.window);
    return report;
}

Report run_pipeline(const RunConfig& config) {
    if (config.trace_path) {
        return run_pipeline(load_trace(*config.trace_path), config);
    }
    FASTMMOE_CHECK(config.synthetic.has_value(), "config needs trace.path or trace.synthetic");
    return run_pipeline(generate_synthetic(*config.synthetic), config);
}

ordered_json report_to_json(const Report& r) {
    ordered_json j;
    j["schema_version"] = kReportSchemaVersion;
    j["config"] = r.config;
    j["model"] = {{"name", r.model.model},
                  {"num_layers", r.model.num_layers},
                  {"num_experts", r.model.num_experts},
                  {"top_k", r.model.top_k},
                  {"num_shared", r.model.num_shared},
                  {"hidden_dim", r.model.hidden_dim},
                  {"expert_hidden", r.model.expert_hidden},
                  {"attention_semantics", r.model.attention_semantics}};
    j["num_vision"] = r.num_vision;
    j["num_text"] = r.num_text;
    j["stage_beta"] = r.stage_beta;
    j["reduced_count"] = r.reduced_count;

    ordered_json layers = ordered_json::array();
    for (const auto& l : r.layers) {
        layers.push_back({{"layer", l.layer},
                          {"live_vision", l.live_vision},
                          {"live_text", l.live_text},
                          {"routed_activations", l.routed_activations},
                          {"baseline_routed_activations", l.baseline_routed_activations},
                          {"shared_activations", l.shared_activations},
                          {"baseline_shared_activations", l.baseline_shared_activations},
                          {"reduced_tokens", l.reduced_tokens}});
    }
    j["layers"] = layers;

    ordered_json stages = ordered_json::array();
    for (const auto& s : r.stages) {
        ordered_json st;
        st["layer"] = s.layer;
        st["vision_before"] = s.vision_before;
        st["target"] = s.target;
        st["kept"] = s.kept;
        st["dropped"] = s.dropped;
        st["absorbed"] = s.absorbed;
        st["similarity"] = s.scores.similarity;
        st["window_attention"] = s.scores.attention;
        st["redundancy"] = s.scores.redundancy;
        st["zero_attention"] = s.scores.zero_attention;
        st["merge_windows"] = s.plan.merge_windows;
        st["drop_windows"] = s.plan.drop_windows;
        st["residual_drops"] = s.plan.residual_drop_positions;
        st["kept_positions"] = s.plan.kept_positions;
        st["merged_norms"] = s.merged_norms;
        st["vision_origins"] = s.vision_origins;
        st["log"] = s.plan.log;
        stages.push_back(st);
    }
    j["stages"] = stages;

    ordered_json flops = ordered_json::array();
    for (const auto& f : r.flops) flops.push_back(flops_json(f));
    j["flops"] = flops;
    j["simulated_flops"] = r.simulated_flops ? flops_json(*r.simulated_flops) : ordered_json(nullptr);

    if (r.stability) {
        ordered_json st = ordered_json::array();
        for (const auto& l : r.stability->layers) {
            st.push_back({{"layer", l.layer},
                          {"vision", l.vision ? score_json(*l.vision) : ordered_json(nullptr)},
                          {"text", l.text ? score_json(*l.text) : ordered_json(nullptr)},
                          {"delta", opt_json(l.delta)}});
        }
        j["stability"] = st;
    } else {
        j["stability"] = nullptr;
    }

    ordered_json analysis = ordered_json::array();
    for (const auto& a : r.analysis) {
        analysis.push_back({{"layer", a.layer},
                            {"adjacent_similarity",
                             {{"vision", opt_json(a.adjacent_similarity.vision)},
                              {"text", opt_json(a.adjacent_similarity.text)}}},
                            {"topk_sum", {{"vision", opt_json(a.topk_sum.vision)}, {"text", opt_json(a.topk_sum.text)}}}});
    }
    j["analysis"] = analysis;

    ordered_json bounds = ordered_json::array();
    for (const auto& b : r.merge_bounds) {
        bounds.push_back({{"overall_retention", b.overall_retention},
                          {"beta", b.beta},
                          {"window", b.window},
                          {"bound", b.bound},
                          {"reference", opt_json(b.reference)},
                          {"discrepancy", b.discrepancy}});
    }
    j["merge_bounds"] = bounds;
    j["warnings"] = r.warnings;
    return j;
}

std::string per_layer_csv(const Report& r) {
    std::ostringstream os;
    os << "layer,live_vision,live_text,routed_activations,baseline_routed_activations,shared_activations,"
          "baseline_shared_activations,reduced_tokens,adjacent_sim_vision,adjacent_sim_text,topk_sum_vision,"
          "topk_sum_text,stability_vision,stability_text,stability_delta\n";
    for (std::size_t i = 0; i < r.layers.size(); ++i) {
        const auto& l = r.layers[i];
        os << l.layer << ',' << l.live_vision << ',' << l.live_text << ',' << l.routed_activations << ','
           << l.baseline_routed_activations << ',' << l.shared_activations << ',' << l.baseline_shared_activations
           << ',' << l.reduced_tokens;
        const LayerAnalysis* a = i < r.analysis.size() ? &r.analysis[i] : nullptr;
        os << ',' << (a ? fmt(a->adjacent_similarity.vision) : "") << ','
           << (a ? fmt(a->adjacent_similarity.text) : "") << ',' << (a ? fmt(a->topk_sum.vision) : "") << ','
           << (a ? fmt(a->topk_sum.text) : "");
        const LayerStability* s = nullptr;
        if (r.stability) {
            for (const auto& ls : r.stability->layers) {
                if (ls.layer == l.layer) s = &ls;
            }
        }
        os << ',' << (s && s->vision ? fmt(s->vision->stability) : "") << ','
           << (s && s->text ? fmt(s->text->stability) : "") << ',' << (s ? fmt(s->delta) : "") << '\n';
    }
    return os.str();
}

std::string stages_csv(const Report& r) {
    std::ostringstream os;
    os << "layer,vision_before,target,kept,dropped,absorbed,merge_windows,drop_windows,residual_drops\n";
    for (const auto& s : r.stages) {
        os << s.layer << ',' << s.vision_before << ',' << s.target << ',' << s.kept << ',' << s.dropped << ','
           << s.absorbed << ',' << s.plan.merge_windows.size() << ',' << s.plan.drop_windows.size() << ','
           << s.plan.residual_drop_positions.size() << '\n';
    }
    return os.str();
}

std::string heatmap_csv(const Matrix& heatmap, const IndexList& starts, const std::vector<double>& counts) {
    FASTMMOE_CHECK(heatmap.rows() == starts.size() && heatmap.cols() == counts.size(), "heatmap shape mismatch");
    std::ostringstream os;
    os << "start_layer";
    for (double k : counts) os << ",k_" << fmt(k);
    os << '\n';
    for (std::size_t i = 0; i < starts.size(); ++i) {
        os << starts[i];
        for (std::size_t j = 0; j < counts.size(); ++j) os << ',' << fmt(heatmap(i, j));
        os << '\n';
    }
    return os.str();
}

void emit_report(const Report& report, const std::optional<std::string>& json_path,
                 const std::optional<std::string>& csv_dir) {
    if (json_path) {
        write_file(*json_path, report_to_json(report).dump(2) + "\n");
    }
    if (csv_dir) {
        const std::filesystem::path dir(*csv_dir);
        write_file(dir / "per_layer.csv", per_layer_csv(report));
        write_file(dir / "stages.csv", stages_csv(report));
        std::ostringstream os;
        os << "name,variant,baseline_total,optimized_total,ratio,savings\n";
        for (const auto& f : report.flops) {
            os << f.name << ',' << to_string(f.variant) << ',' << fmt(f.baseline_total) << ','
               << fmt(f.optimized_total) << ',' << fmt(f.ratio) << ',' << fmt(f.savings) << '\n';
        }
        write_file(dir / "flops.csv", os.str());
    }
}

}  // namespace fastmmoe
