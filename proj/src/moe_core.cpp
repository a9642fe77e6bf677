// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastmmoe/moe_core.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

namespace fastmmoe {

RoutingDistribution::RoutingDistribution(Matrix probs, double tolerance) : m_probs(std::move(probs)) {
    for (std::size_t i = 0; i < m_probs.rows(); ++i) {
        double sum = 0.0;
        for (double p : m_probs.row(i)) {
            if (!(p >= 0.0 && p <= 1.0)) {
                throw InvalidInput("routing row " + std::to_string(i) + " has an entry outside [0,1]");
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > tolerance) {
            throw InvalidInput("routing row " + std::to_string(i) + " sums to " + std::to_string(sum));
        }
    }
}

void MoEConfig::validate() const {
    FASTMMOE_CHECK(num_experts >= 1, "MoEConfig: need at least one routed expert");
    FASTMMOE_CHECK(top_k >= 1 && top_k <= num_experts, "MoEConfig: top_k must lie in [1, E]");
    FASTMMOE_CHECK(hidden_dim >= 1 && expert_hidden >= 1 && num_layers >= 1, "MoEConfig: dims must be >= 1");
}

double silu(double x) {
    return x / (1.0 + std::exp(-x));
}

Vector FeedForward::apply(std::span<const double> x) const {
    if (is_identity()) {
        return {x.begin(), x.end()};
    }
    Vector mid = up.multiply(x);
    for (auto& v : mid) {
        v = silu(v);
    }
    return down.multiply(mid);
}

ExpertBank::ExpertBank(std::vector<FeedForward> shared, std::vector<FeedForward> routed)
    : m_shared(std::move(shared)), m_routed(std::move(routed)) {
    FASTMMOE_CHECK(!m_routed.empty(), "expert bank needs at least one routed expert");
}

namespace {

FeedForward random_ffn(std::size_t hidden, std::size_t inner, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> up_dist(0.0, scale / std::sqrt(static_cast<double>(hidden)));
    std::normal_distribution<double> down_dist(0.0, scale / std::sqrt(static_cast<double>(inner)));
    FeedForward f{Matrix(inner, hidden), Matrix(hidden, inner)};
    for (std::size_t r = 0; r < inner; ++r) {
        for (auto& v : f.up.row(r)) {
            v = up_dist(rng);
        }
    }
    for (std::size_t r = 0; r < hidden; ++r) {
        for (auto& v : f.down.row(r)) {
            v = down_dist(rng);
        }
    }
    return f;
}

}  // namespace

ExpertBank ExpertBank::random(const MoEConfig& config, std::uint64_t seed, double scale) {
    config.validate();
    std::mt19937_64 rng(mix_seed(seed));
    std::vector<FeedForward> shared;
    std::vector<FeedForward> routed;
    for (std::size_t i = 0; i < config.num_shared; ++i) {
        shared.push_back(random_ffn(config.hidden_dim, config.expert_hidden, rng, scale));
    }
    for (std::size_t j = 0; j < config.num_experts; ++j) {
        routed.push_back(random_ffn(config.hidden_dim, config.expert_hidden, rng, scale));
    }
    return {std::move(shared), std::move(routed)};
}

ExpertBank ExpertBank::identity(const MoEConfig& config) {
    config.validate();
    return {std::vector<FeedForward>(config.num_shared), std::vector<FeedForward>(config.num_experts)};
}

Vector route_logits(std::span<const double> token, const RouterWeights& router) {
    FASTMMOE_CHECK(token.size() == router.hidden_dim(), "token width does not match router hidden dim");
    return router.centroids.multiply(token);
}

Vector routing_probs(std::span<const double> logits) {
    FASTMMOE_CHECK(!logits.empty(), "softmax of an empty vector");
    FASTMMOE_CHECK(all_finite(logits), "softmax input contains NaN or Inf");
    const double peak = *std::max_element(logits.begin(), logits.end());
    Vector out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (auto& p : out) {
        p /= total;
    }
    return out;
}

IndexList top_k_select(std::span<const double> probs, std::size_t k) {
    FASTMMOE_CHECK(k >= 1 && k <= probs.size(), "top-k count must lie in [1, E]");
    IndexList order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
                      });
    order.resize(k);
    return order;
}

GateRow gate_weights(std::span<const double> probs, const IndexList& selected) {
    FASTMMOE_CHECK(!selected.empty(), "gate selection is empty");
    std::vector<bool> seen(probs.size(), false);
    double mass = 0.0;
    for (auto j : selected) {
        FASTMMOE_CHECK(j < probs.size(), "selected expert index out of range");
        FASTMMOE_CHECK(!seen[j], "selected expert indices must be distinct");
        seen[j] = true;
        mass += probs[j];
    }
    FASTMMOE_CHECK(mass > 0.0, "selected experts carry zero routing mass");
    GateRow row{selected, {}};
    row.weights.reserve(selected.size());
    for (auto j : selected) {
        row.weights.push_back(probs[j] / mass);
    }
    return row;
}

MoEOutput moe_forward(std::span<const double> token,
                      const GateRow& gates,
                      const ExpertBank& bank,
                      const MoEConfig& config,
                      std::size_t active_shared) {
    FASTMMOE_CHECK(token.size() == config.hidden_dim, "token width does not match config hidden dim");
    FASTMMOE_CHECK(gates.selected.size() == gates.weights.size(), "gate row is ragged");
    const std::size_t shared_count = std::min(active_shared, bank.num_shared());
    FASTMMOE_CHECK(shared_count + gates.selected.size() > 0, "token has no expert to run");

    MoEOutput result{Vector(token.size(), 0.0), 0};
    for (std::size_t i = 0; i < shared_count; ++i) {
        const Vector y = bank.shared(i).apply(token);
        for (std::size_t h = 0; h < y.size(); ++h) {
            result.output[h] += y[h];
        }
        ++result.expert_evaluations;
    }
    for (std::size_t s = 0; s < gates.selected.size(); ++s) {
        const double g = gates.weights[s];
        if (g == 0.0) {
            continue;
        }
        const Vector y = bank.routed(gates.selected[s]).apply(token);
        for (std::size_t h = 0; h < y.size(); ++h) {
            result.output[h] += g * y[h];
        }
        ++result.expert_evaluations;
    }
    return result;
}

RoutingDistribution layer_routing(const HiddenState& hidden, const RouterWeights& router) {
    Matrix probs(0, router.num_experts());
    for (std::size_t i = 0; i < hidden.rows(); ++i) {
        probs.append_row(routing_probs(route_logits(hidden.row(i), router)));
    }
    return RoutingDistribution(std::move(probs));
}

}  // namespace fastmmoe
