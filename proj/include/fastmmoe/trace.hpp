// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fastmmoe/common.hpp"
#include "fastmmoe/matrix.hpp"
#include "fastmmoe/moe_core.hpp"

namespace fastmmoe {

inline constexpr int kTraceVersion = 1;
inline constexpr const char* kTraceFormat = "fastmmoe-trace";
inline constexpr double kTraceRowTolerance = 1e-6;

/// Load or validation failure; the message starts with the offending field path.
class TraceError : public InvalidInput {
public:
    TraceError(const std::string& path, const std::string& what) : InvalidInput(path + ": " + what), m_path(path) {}
    const std::string& path() const { return m_path; }

private:
    std::string m_path;
};

enum class RoutingKind : std::uint8_t { Logits, Probs };

struct TraceMetadata {
    std::string model = "unknown";
    std::size_t num_layers = 0;
    std::size_t num_experts = 0;
    std::size_t top_k = 0;
    std::size_t num_shared = 0;
    std::size_t hidden_dim = 0;
    std::size_t expert_hidden = 0;  // optional, 0 when unknown
    /// Provider's declaration of how attention rows were produced (e.g. "post_softmax_head_mean").
    std::string attention_semantics = "unspecified";

    bool operator==(const TraceMetadata&) const = default;
};

struct TraceLayer {
    RoutingKind routing_kind = RoutingKind::Probs;
    Matrix routing;                      // N x E, logits or probabilities
    Vector attention;                    // last-text-token attention over vision tokens, length N_v
    std::optional<Matrix> hidden;        // N x H
    std::optional<Matrix> expert_norms;  // N x K, norms of each token's selected expert outputs

    /// Routing probabilities, applying softmax when the layer stores logits.
    RoutingDistribution probabilities() const;

    bool operator==(const TraceLayer&) const = default;
};

struct Trace {
    int version = kTraceVersion;
    TraceMetadata meta;
    ModalityMask mask;
    std::vector<TraceLayer> layers;

    std::size_t num_tokens() const { return mask.size(); }
    std::size_t num_vision() const { return count_modality(mask, Modality::Vision); }

    /// Throws TraceError naming the first offending field.
    void validate() const;

    bool operator==(const Trace&) const = default;
};

Trace parse_trace(const nlohmann::json& doc);
nlohmann::ordered_json trace_to_json(const Trace& trace);

Trace load_trace(const std::string& path);
void save_trace(const Trace& trace, const std::string& path);

std::string mask_to_string(const ModalityMask& mask);
ModalityMask mask_from_string(const std::string& text);

}  // namespace fastmmoe
