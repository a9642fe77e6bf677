// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Brute-force reference computations for the tests. Nothing here calls into the
// library code it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "fastmmoe/flops.hpp"

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const std::vector<double>& a) {
    return std::sqrt(dot(a, a));
}

inline double cos(const std::vector<double>& a, const std::vector<double>& b) {
    return dot(a, b) / (norm(a) * norm(b));
}

/// Mean cosine over every unordered pair, enumerated explicitly.
inline double pair_similarity(const Rows& rows) {
    if (rows.size() < 2) return 1.0;
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            sum += cos(rows[i], rows[j]);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

/// Mean cosine of each row with the arithmetic centroid.
inline double centroid_similarity(const Rows& rows) {
    std::vector<double> c(rows.front().size(), 0.0);
    for (const auto& r : rows)
        for (std::size_t k = 0; k < r.size(); ++k) c[k] += r[k] / static_cast<double>(rows.size());
    double sum = 0.0;
    for (const auto& r : rows) sum += cos(r, c);
    return sum / static_cast<double>(rows.size());
}

/// Sum of the k largest entries, by full sort.
inline double top_sum(std::vector<double> p, std::size_t k) {
    std::sort(p.begin(), p.end(), std::greater<>());
    double s = 0.0;
    for (std::size_t i = 0; i < k && i < p.size(); ++i) s += p[i];
    return s;
}

inline double scalar_softmax(const std::vector<double>& z, std::size_t i) {
    double den = 0.0;
    for (double v : z) den += std::exp(v);
    return std::exp(z[i]) / den;
}

/// Vision count after each of `stages` prunes, rounding half up per stage.
inline std::vector<std::size_t> staged_counts(std::size_t n, double beta, std::size_t stages) {
    std::vector<std::size_t> out{n};
    for (std::size_t s = 0; s < stages; ++s) {
        n = static_cast<std::size_t>(std::floor(beta * static_cast<double>(n) + 0.5));
        out.push_back(n);
    }
    return out;
}

inline std::vector<double> random_probs(std::mt19937_64& rng, std::size_t e, double scale = 2.0) {
    std::normal_distribution<double> g(0.0, scale);
    std::vector<double> z(e);
    double mx = -1e300;
    for (auto& v : z) {
        v = g(rng);
        mx = std::max(mx, v);
    }
    double s = 0.0;
    for (auto& v : z) {
        v = std::exp(v - mx);
        s += v;
    }
    for (auto& v : z) v /= s;
    return z;
}

/// Walks every layer and adds up its cost. Live vision count follows the prune layers
/// (a prune at layer p shrinks the count from layer p+1 on); experts follow (l_v, K_v).
inline double flops_walk(const fastmmoe::FlopsConfig& c, fastmmoe::FlopsVariant variant, bool prune, bool reduce) {
    const double B = c.batch, H = c.hidden;
    const double text = c.total_tokens - c.vision_tokens;
    const bool whole = variant == fastmmoe::FlopsVariant::WholeSequence;
    auto attn = [&](double x) { return 4 * B * x * x * H + 8 * B * x * H * H; };
    auto mlp = [&](double x) { return 6 * B * x * H * c.dense_intermediate; };
    auto moe = [&](double x, double k) {
        return 2 * B * x * H * c.num_experts + 6 * B * x * H * c.expert_intermediate * k;
    };
    double total = 0.0;
    double vision = c.vision_tokens;
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        if (l < c.dense_layers) {
            total += whole ? attn(vision + text) + mlp(vision + text) : mlp(vision);
        } else {
            const double k = (reduce && l >= c.reduce_start ? c.reduced_k : c.top_k) + c.num_shared;
            if (whole) {
                total += attn(vision + text) + moe(vision, k) + moe(text, c.top_k + c.num_shared);
            } else {
                total += attn(vision) + moe(vision, k);
            }
        }
        if (prune && std::find(c.prune_layers.begin(), c.prune_layers.end(), l) != c.prune_layers.end()) {
            vision *= c.beta;
        }
    }
    return total;
}

inline double flops_ratio(const fastmmoe::FlopsConfig& c, fastmmoe::FlopsVariant v, bool prune, bool reduce) {
    return flops_walk(c, v, prune, reduce) / flops_walk(c, v, false, false);
}

}  // namespace oracle
