// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastmmoe/token_pruning.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "fastmmoe/theory.hpp"

namespace fastmmoe {

std::string to_string(SimilarityMode m) {
    return m == SimilarityMode::Exact ? "exact" : "approx";
}

std::string to_string(MergeMode m) {
    return m == MergeMode::Mean ? "mean" : "mlerp";
}

SimilarityMode parse_similarity_mode(const std::string& name) {
    if (name == "exact") return SimilarityMode::Exact;
    if (name == "approx") return SimilarityMode::Approx;
    throw InvalidInput("unknown similarity mode '" + name + "' (expected exact or approx)");
}

MergeMode parse_merge_mode(const std::string& name) {
    if (name == "mean") return MergeMode::Mean;
    if (name == "mlerp") return MergeMode::Mlerp;
    throw InvalidInput("unknown merge mode '" + name + "' (expected mean or mlerp)");
}

void PruneSchedule::validate() const {
    FASTMMOE_CHECK(std::is_sorted(prune_layers.begin(), prune_layers.end()) &&
                       std::adjacent_find(prune_layers.begin(), prune_layers.end()) == prune_layers.end(),
                   "prune schedule: layers must be strictly increasing");
    FASTMMOE_CHECK(stage_beta > 0.0 && stage_beta <= 1.0, "prune schedule: stage beta must lie in (0, 1]");
    FASTMMOE_CHECK(window >= 2, "prune schedule: window must be at least 2");
    FASTMMOE_CHECK(alpha >= 0.0 && alpha <= 1.0, "prune schedule: alpha must lie in [0, 1]");
    FASTMMOE_CHECK(gamma >= 0.0 && gamma < 1.0, "prune schedule: gamma must lie in [0, 1)");
}

std::vector<std::string> PruneSchedule::warnings() const {
    std::vector<std::string> out;
    const double bound = gamma_upper_bound(stage_beta, window);
    if (gamma > bound) {
        std::ostringstream os;
        os << "gamma " << gamma << " exceeds the feasible merge-rate bound " << bound
           << " for beta " << stage_beta << " and window " << window << "; merge counts will be clamped";
        out.push_back(os.str());
    }
    return out;
}

bool PruneSchedule::prunes_at(std::size_t layer) const {
    return std::binary_search(prune_layers.begin(), prune_layers.end(), layer);
}

std::size_t PrunePlan::absorbed() const {
    std::size_t n = 0;
    for (const auto& members : merge_members) {
        n += members.size() - 1;
    }
    return n;
}

std::size_t PrunePlan::dropped() const {
    return dropped_window_positions.size() + residual_drop_positions.size();
}

VisionSlice extract_vision(const RoutingDistribution& dist, std::span<const double> attention, const ModalityMask& mask) {
    FASTMMOE_CHECK(mask.size() == dist.num_tokens(), "modality mask length does not match routing rows");
    FASTMMOE_CHECK(attention.size() == mask.size(), "attention row length does not match the sequence");
    VisionSlice out;
    out.routing = Matrix(0, dist.num_experts());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != Modality::Vision) {
            continue;
        }
        FASTMMOE_CHECK(attention[i] >= 0.0 && std::isfinite(attention[i]), "attention scores must be finite and nonnegative");
        out.routing.append_row(dist.row(i));
        out.attention.push_back(attention[i]);
        out.positions.push_back(i);
    }
    return out;
}

WindowView window_partition(std::size_t num_vision, std::size_t window) {
    FASTMMOE_CHECK(window >= 2, "window size must be at least 2");
    WindowView view{window, {}};
    for (std::size_t start = 0; start < num_vision; start += window) {
        IndexList members;
        for (std::size_t i = start; i < std::min(num_vision, start + window); ++i) {
            members.push_back(i);
        }
        view.windows.push_back(std::move(members));
    }
    return view;
}

namespace {

IndexList all_rows(const Matrix& rows) {
    IndexList idx(rows.rows());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

// A window of bitwise-identical rows scores exactly 1; floating-point cosines can land a ulp below.
bool identical_rows(const Matrix& rows, const IndexList& members) {
    const auto first = rows.row(members.front());
    for (auto a : members) {
        const auto r = rows.row(a);
        if (!std::equal(r.begin(), r.end(), first.begin())) {
            return false;
        }
    }
    return true;
}

}  // namespace

double window_similarity_exact(const Matrix& rows, const IndexList& members) {
    FASTMMOE_CHECK(!members.empty(), "window is empty");
    for (auto a : members) {
        FASTMMOE_CHECK(l2_norm(rows.row(a)) > 0.0, "window contains a zero-norm routing row");
    }
    if (identical_rows(rows, members)) {
        return 1.0;
    }
    double total = 0.0;
    for (std::size_t a = 1; a < members.size(); ++a) {
        for (std::size_t b = 0; b < a; ++b) {
            total += cosine(rows.row(members[a]), rows.row(members[b]));
        }
    }
    const double pairs = static_cast<double>(members.size() * (members.size() - 1) / 2);
    return total / pairs;
}

double window_similarity_exact(const Matrix& rows) {
    return window_similarity_exact(rows, all_rows(rows));
}

double window_similarity_approx(const Matrix& rows, const IndexList& members) {
    FASTMMOE_CHECK(!members.empty(), "window is empty");
    Vector centroid(rows.cols(), 0.0);
    for (auto a : members) {
        FASTMMOE_CHECK(l2_norm(rows.row(a)) > 0.0, "window contains a zero-norm routing row");
        const auto r = rows.row(a);
        for (std::size_t e = 0; e < centroid.size(); ++e) {
            centroid[e] += r[e];
        }
    }
    if (identical_rows(rows, members)) {
        return 1.0;
    }
    for (auto& c : centroid) {
        c /= static_cast<double>(members.size());
    }
    FASTMMOE_CHECK(l2_norm(centroid) > 0.0, "window centroid has zero norm");
    double total = 0.0;
    for (auto a : members) {
        total += cosine(rows.row(a), centroid);
    }
    return total / static_cast<double>(members.size());
}

double window_similarity_approx(const Matrix& rows) {
    return window_similarity_approx(rows, all_rows(rows));
}

WindowAttention window_attention(std::span<const double> attention, const WindowView& view) {
    WindowAttention out{Vector(view.count(), 0.0), false};
    double peak = 0.0;
    for (std::size_t w = 0; w < view.count(); ++w) {
        for (auto a : view.windows[w]) {
            FASTMMOE_CHECK(a < attention.size(), "window member outside the attention row");
            FASTMMOE_CHECK(attention[a] >= 0.0, "attention scores must be nonnegative");
            out.normalized[w] += attention[a];
        }
        peak = std::max(peak, out.normalized[w]);
    }
    if (peak == 0.0) {
        out.all_zero = view.count() > 0;
        return out;
    }
    for (auto& v : out.normalized) {
        v /= peak;
    }
    return out;
}

Vector redundancy_scores(std::span<const double> similarity, std::span<const double> attention, double alpha) {
    FASTMMOE_CHECK(similarity.size() == attention.size(), "similarity and attention lengths differ");
    FASTMMOE_CHECK(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    Vector out(similarity.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = alpha * similarity[i] - (1.0 - alpha) * attention[i];
    }
    return out;
}

WindowScores score_windows(const Matrix& vision_routing,
                           std::span<const double> vision_attention,
                           const WindowView& view,
                           double alpha,
                           SimilarityMode mode) {
    FASTMMOE_CHECK(vision_routing.rows() == vision_attention.size(), "routing rows and attention length differ");
    WindowScores scores;
    for (const auto& members : view.windows) {
        scores.similarity.push_back(mode == SimilarityMode::Exact ? window_similarity_exact(vision_routing, members)
                                                                  : window_similarity_approx(vision_routing, members));
    }
    auto attn = window_attention(vision_attention, view);
    scores.attention = std::move(attn.normalized);
    scores.zero_attention = attn.all_zero;
    scores.redundancy = redundancy_scores(scores.similarity, scores.attention, alpha);
    return scores;
}

PrunePlan plan_pruning(std::size_t num_vision,
                       std::size_t target,
                       const PruneSchedule& schedule,
                       std::span<const double> redundancy,
                       std::span<const double> window_attn,
                       std::span<const double> token_attention,
                       const WindowView& view) {
    FASTMMOE_CHECK(target <= num_vision, "pruning target exceeds the vision token count");
    const std::size_t n = view.count();
    FASTMMOE_CHECK(redundancy.size() == n && window_attn.size() == n, "window score lengths do not match the view");
    FASTMMOE_CHECK(token_attention.size() == num_vision, "token attention length does not match the vision count");
    FASTMMOE_CHECK(schedule.gamma >= 0.0 && schedule.gamma < 1.0, "gamma must lie in [0, 1)");

    PrunePlan plan;
    plan.input_count = num_vision;
    plan.target = target;
    const std::size_t excess = num_vision - target;

    std::vector<char> window_state(n, 'k');  // k: keep, m: merged, d: dropped
    std::vector<char> token_removed(num_vision, 0);

    if (excess > 0) {
        // Merging: highest redundancy first, ties to the smaller window index.
        IndexList by_redundancy(n);
        std::iota(by_redundancy.begin(), by_redundancy.end(), 0);
        std::stable_sort(by_redundancy.begin(), by_redundancy.end(),
                         [&](std::size_t a, std::size_t b) { return redundancy[a] > redundancy[b]; });

        const std::size_t requested = std::min({round_half_up(static_cast<double>(target) * schedule.gamma), n, target});
        std::size_t absorbed = 0;
        for (std::size_t i = 0; i < requested; ++i) {
            const auto w = by_redundancy[i];
            const std::size_t cost = view.windows[w].size() - 1;
            if (absorbed + cost > excess) {
                std::ostringstream os;
                os << "merge count clamped from " << requested << " to " << i
                   << ": merging more windows would remove more than " << excess << " tokens";
                plan.log.push_back(os.str());
                break;
            }
            absorbed += cost;
            window_state[w] = 'm';
            plan.merge_windows.push_back(w);
            plan.merged_position.push_back(view.windows[w].front());
            plan.merge_members.push_back(view.windows[w]);
            for (std::size_t j = 1; j < view.windows[w].size(); ++j) {
                token_removed[view.windows[w][j]] = 1;
            }
        }

        // Whole-window drops on the least attended remaining windows.
        std::size_t remaining = excess - absorbed;
        IndexList by_attention;
        for (std::size_t w = 0; w < n; ++w) {
            if (window_state[w] == 'k') {
                by_attention.push_back(w);
            }
        }
        std::stable_sort(by_attention.begin(), by_attention.end(),
                         [&](std::size_t a, std::size_t b) { return window_attn[a] < window_attn[b]; });
        const std::size_t whole = std::min(remaining / view.window_size, by_attention.size());
        for (std::size_t i = 0; i < whole; ++i) {
            const auto w = by_attention[i];
            window_state[w] = 'd';
            plan.drop_windows.push_back(w);
            for (auto t : view.windows[w]) {
                token_removed[t] = 1;
                plan.dropped_window_positions.push_back(t);
            }
            remaining -= view.windows[w].size();
        }

        // Residual single-token drops: lowest-attention tokens of the least attended surviving windows.
        for (std::size_t i = whole; i < by_attention.size() && remaining > 0; ++i) {
            IndexList members = view.windows[by_attention[i]];
            std::stable_sort(members.begin(), members.end(),
                             [&](std::size_t a, std::size_t b) { return token_attention[a] < token_attention[b]; });
            for (auto t : members) {
                if (remaining == 0) {
                    break;
                }
                token_removed[t] = 1;
                plan.residual_drop_positions.push_back(t);
                --remaining;
            }
        }
        std::sort(plan.residual_drop_positions.begin(), plan.residual_drop_positions.end());
        std::sort(plan.dropped_window_positions.begin(), plan.dropped_window_positions.end());
    }

    for (std::size_t t = 0; t < num_vision; ++t) {
        if (!token_removed[t]) {
            plan.kept_positions.push_back(t);
        }
    }
    FASTMMOE_CHECK(plan.kept_positions.size() == target, "internal error: plan does not reach its target");
    return plan;
}

Vector merge_mean(const Matrix& tokens) {
    FASTMMOE_CHECK(!tokens.empty(), "cannot merge an empty window");
    Vector mean(tokens.cols(), 0.0);
    for (std::size_t r = 0; r < tokens.rows(); ++r) {
        const auto row = tokens.row(r);
        for (std::size_t c = 0; c < mean.size(); ++c) {
            mean[c] += row[c];
        }
    }
    for (auto& v : mean) {
        v /= static_cast<double>(tokens.rows());
    }
    return mean;
}

Vector merge_mlerp(const Matrix& tokens) {
    Vector mean = merge_mean(tokens);
    const double mean_norm = l2_norm(mean);
    FASTMMOE_CHECK(mean_norm > 0.0, "mlerp merge: mean vector is zero, direction undefined");
    double max_norm = 0.0;
    for (std::size_t r = 0; r < tokens.rows(); ++r) {
        max_norm = std::max(max_norm, l2_norm(tokens.row(r)));
    }
    const double scale = max_norm / mean_norm;
    for (auto& v : mean) {
        v *= scale;
    }
    return mean;
}

PrunedSequence apply_plan(const HiddenState& hidden, const ModalityMask& mask, const PrunePlan& plan, MergeMode mode) {
    FASTMMOE_CHECK(hidden.rows() == mask.size(), "hidden state rows do not match the modality mask");
    IndexList vision_global;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == Modality::Vision) {
            vision_global.push_back(i);
        }
    }
    FASTMMOE_CHECK(vision_global.size() == plan.input_count, "plan was built for a different vision count");
    FASTMMOE_CHECK(std::is_sorted(plan.kept_positions.begin(), plan.kept_positions.end()), "plan kept positions are unsorted");
    FASTMMOE_CHECK(plan.merged_position.size() == plan.merge_members.size(), "plan merge lists are ragged");

    std::vector<char> kept(plan.input_count, 0);
    for (auto p : plan.kept_positions) {
        FASTMMOE_CHECK(p < plan.input_count, "plan keeps a position outside the vision range");
        kept[p] = 1;
    }
    std::vector<long> merge_of(plan.input_count, -1);
    for (std::size_t m = 0; m < plan.merge_members.size(); ++m) {
        const auto& members = plan.merge_members[m];
        FASTMMOE_CHECK(!members.empty() && members.front() == plan.merged_position[m],
                       "merged token must sit at its window's first position");
        FASTMMOE_CHECK(kept[members.front()], "plan drops its own merged representative");
        for (std::size_t j = 1; j < members.size(); ++j) {
            FASTMMOE_CHECK(members[j] < plan.input_count && !kept[members[j]], "plan keeps an absorbed token");
        }
        merge_of[members.front()] = static_cast<long>(m);
    }

    std::vector<char> accounted = kept;
    auto account = [&](std::size_t p) {
        FASTMMOE_CHECK(p < plan.input_count && !accounted[p], "plan lists a vision position twice or out of range");
        accounted[p] = 1;
    };
    for (const auto& members : plan.merge_members) {
        for (std::size_t j = 1; j < members.size(); ++j) account(members[j]);
    }
    for (auto p : plan.dropped_window_positions) account(p);
    for (auto p : plan.residual_drop_positions) account(p);
    FASTMMOE_CHECK(std::all_of(accounted.begin(), accounted.end(), [](char c) { return c != 0; }),
                   "plan leaves a vision position neither kept, merged nor dropped");

    PrunedSequence out;
    out.hidden = Matrix(0, hidden.cols());
    std::size_t v = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == Modality::Text) {
            out.hidden.append_row(hidden.row(i));
            out.mask.push_back(Modality::Text);
            out.origin.push_back(i);
            continue;
        }
        const std::size_t pos = v++;
        if (!kept[pos]) {
            continue;
        }
        if (merge_of[pos] >= 0) {
            IndexList rows;
            for (auto member : plan.merge_members[static_cast<std::size_t>(merge_of[pos])]) {
                rows.push_back(vision_global[member]);
            }
            const Matrix window_rows = hidden.select_rows(rows);
            out.hidden.append_row(mode == MergeMode::Mean ? merge_mean(window_rows) : merge_mlerp(window_rows));
        } else {
            out.hidden.append_row(hidden.row(i));
        }
        out.mask.push_back(Modality::Vision);
        out.origin.push_back(i);
    }
    return out;
}

std::size_t stage_target(std::size_t num_vision, double beta) {
    FASTMMOE_CHECK(beta > 0.0 && beta <= 1.0, "stage beta must lie in (0, 1]");
    return std::min(num_vision, round_half_up(beta * static_cast<double>(num_vision)));
}

}  // namespace fastmmoe
