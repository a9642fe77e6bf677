// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastmmoe/trace.hpp"

#include <fstream>
#include <sstream>

namespace fastmmoe {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

RoutingDistribution TraceLayer::probabilities() const {
    if (routing_kind == RoutingKind::Probs) {
        return RoutingDistribution(routing, kTraceRowTolerance);
    }
    Matrix probs(0, routing.cols());
    for (std::size_t i = 0; i < routing.rows(); ++i) {
        probs.append_row(routing_probs(routing.row(i)));
    }
    return RoutingDistribution(std::move(probs));
}

std::string mask_to_string(const ModalityMask& mask) {
    std::string s;
    s.reserve(mask.size());
    for (auto m : mask) {
        s.push_back(m == Modality::Vision ? 'v' : 't');
    }
    return s;
}

ModalityMask mask_from_string(const std::string& text) {
    ModalityMask mask;
    mask.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == 'v') {
            mask.push_back(Modality::Vision);
        } else if (text[i] == 't') {
            mask.push_back(Modality::Text);
        } else {
            throw TraceError("modality[" + std::to_string(i) + "]", "expected 'v' or 't'");
        }
    }
    return mask;
}

namespace {

std::string at(const std::string& base, std::size_t i) {
    return base + "[" + std::to_string(i) + "]";
}

void check_matrix(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& path) {
    if (m.rows() != rows || m.cols() != cols) {
        std::ostringstream os;
        os << "shape " << m.rows() << "x" << m.cols() << " does not match expected " << rows << "x" << cols;
        throw TraceError(path, os.str());
    }
    for (std::size_t r = 0; r < m.rows(); ++r) {
        if (!all_finite(m.row(r))) {
            throw TraceError(at(path + ".data", r), "contains NaN or Inf");
        }
    }
}

const json& require(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) {
        throw TraceError(path + "." + key, "missing field");
    }
    return obj.at(key);
}

template <typename T>
T get_as(const json& obj, const char* key, const std::string& path) {
    const auto& v = require(obj, key, path);
    try {
        return v.get<T>();
    } catch (const json::exception& e) {
        throw TraceError(path + "." + key, std::string("wrong type: ") + e.what());
    }
}

Matrix parse_matrix(const json& obj, const std::string& path) {
    const auto shape = get_as<std::vector<std::size_t>>(obj, "shape", path);
    if (shape.size() != 2) {
        throw TraceError(path + ".shape", "expected two dimensions");
    }
    const auto& data = require(obj, "data", path);
    if (!data.is_array() || data.size() != shape[0]) {
        throw TraceError(path + ".data", "expected " + std::to_string(shape[0]) + " rows");
    }
    Matrix m(shape[0], shape[1]);
    for (std::size_t r = 0; r < shape[0]; ++r) {
        const auto& row = data[r];
        if (!row.is_array() || row.size() != shape[1]) {
            throw TraceError(at(path + ".data", r), "expected " + std::to_string(shape[1]) + " columns");
        }
        for (std::size_t c = 0; c < shape[1]; ++c) {
            if (!row[c].is_number()) {
                throw TraceError(at(at(path + ".data", r), c), "expected a number");
            }
            m(r, c) = row[c].get<double>();
        }
    }
    return m;
}

Vector parse_vector(const json& obj, const std::string& path) {
    const auto shape = get_as<std::vector<std::size_t>>(obj, "shape", path);
    if (shape.size() != 1) {
        throw TraceError(path + ".shape", "expected one dimension");
    }
    const auto& data = require(obj, "data", path);
    if (!data.is_array() || data.size() != shape[0]) {
        throw TraceError(path + ".data", "expected " + std::to_string(shape[0]) + " entries");
    }
    Vector v(shape[0]);
    for (std::size_t i = 0; i < shape[0]; ++i) {
        if (!data[i].is_number()) {
            throw TraceError(at(path + ".data", i), "expected a number");
        }
        v[i] = data[i].get<double>();
    }
    return v;
}

ordered_json matrix_json(const Matrix& m) {
    ordered_json j;
    j["shape"] = {m.rows(), m.cols()};
    ordered_json rows = ordered_json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    }
    j["data"] = std::move(rows);
    return j;
}

ordered_json vector_json(const Vector& v) {
    ordered_json j;
    j["shape"] = {v.size()};
    j["data"] = v;
    return j;
}

}  // namespace

void Trace::validate() const {
    if (version != kTraceVersion) {
        throw TraceError("version", "unsupported trace version " + std::to_string(version));
    }
    if (meta.num_experts == 0) throw TraceError("metadata.num_experts", "must be at least 1");
    if (meta.top_k == 0 || meta.top_k > meta.num_experts) throw TraceError("metadata.top_k", "must lie in [1, E]");
    if (meta.num_layers != layers.size()) {
        throw TraceError("metadata.num_layers", "declares " + std::to_string(meta.num_layers) + " layers but " +
                                                    std::to_string(layers.size()) + " are present");
    }
    const std::size_t n = num_tokens();
    const std::size_t nv = num_vision();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const std::string base = at("layers", l);
        check_matrix(layer.routing, n, meta.num_experts, base + ".routing");
        if (layer.routing_kind == RoutingKind::Probs) {
            for (std::size_t r = 0; r < n; ++r) {
                double sum = 0.0;
                for (double p : layer.routing.row(r)) {
                    if (p < 0.0 || p > 1.0) {
                        throw TraceError(at(base + ".routing.data", r), "probability outside [0,1]");
                    }
                    sum += p;
                }
                if (std::abs(sum - 1.0) > kTraceRowTolerance) {
                    std::ostringstream os;
                    os.precision(10);
                    os << "row " << r << " sums to " << sum << ", not 1 within " << kTraceRowTolerance;
                    throw TraceError(at(base + ".routing.data", r), os.str());
                }
            }
        }
        if (layer.attention.size() != nv) {
            throw TraceError(base + ".attention", "length " + std::to_string(layer.attention.size()) +
                                                      " does not match the " + std::to_string(nv) + " vision tokens");
        }
        for (std::size_t i = 0; i < nv; ++i) {
            if (!std::isfinite(layer.attention[i]) || layer.attention[i] < 0.0) {
                throw TraceError(at(base + ".attention.data", i), "attention must be finite and nonnegative");
            }
        }
        if (layer.hidden) {
            if (meta.hidden_dim == 0) throw TraceError("metadata.hidden_dim", "required when hidden states are present");
            check_matrix(*layer.hidden, n, meta.hidden_dim, base + ".hidden");
        }
        if (layer.expert_norms) {
            check_matrix(*layer.expert_norms, n, meta.top_k, base + ".expert_norms");
        }
    }
}

Trace parse_trace(const json& doc) {
    if (!doc.is_object()) {
        throw TraceError("$", "trace must be a JSON object");
    }
    const auto format = get_as<std::string>(doc, "format", "$");
    if (format != kTraceFormat) {
        throw TraceError("format", "expected '" + std::string(kTraceFormat) + "', got '" + format + "'");
    }
    Trace t;
    t.version = get_as<int>(doc, "version", "$");
    if (t.version != kTraceVersion) {
        throw TraceError("version", "unsupported trace version " + std::to_string(t.version));
    }
    const auto& meta = require(doc, "metadata", "$");
    t.meta.model = meta.value("model", std::string("unknown"));
    t.meta.num_layers = get_as<std::size_t>(meta, "num_layers", "metadata");
    t.meta.num_experts = get_as<std::size_t>(meta, "num_experts", "metadata");
    t.meta.top_k = get_as<std::size_t>(meta, "top_k", "metadata");
    t.meta.num_shared = meta.value("num_shared", std::size_t{0});
    t.meta.hidden_dim = meta.value("hidden_dim", std::size_t{0});
    t.meta.expert_hidden = meta.value("expert_hidden", std::size_t{0});
    t.meta.attention_semantics = meta.value("attention_semantics", std::string("unspecified"));

    const auto num_tokens = get_as<std::size_t>(doc, "num_tokens", "$");
    t.mask = mask_from_string(get_as<std::string>(doc, "modality", "$"));
    if (t.mask.size() != num_tokens) {
        throw TraceError("modality", "length " + std::to_string(t.mask.size()) + " does not match num_tokens " +
                                         std::to_string(num_tokens));
    }

    const auto& layers = require(doc, "layers", "$");
    if (!layers.is_array()) {
        throw TraceError("layers", "expected an array");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string base = at("layers", l);
        const auto& lj = layers[l];
        TraceLayer layer;
        const auto& routing = require(lj, "routing", base);
        const auto kind = get_as<std::string>(routing, "kind", base + ".routing");
        if (kind == "probs") {
            layer.routing_kind = RoutingKind::Probs;
        } else if (kind == "logits") {
            layer.routing_kind = RoutingKind::Logits;
        } else {
            throw TraceError(base + ".routing.kind", "expected 'probs' or 'logits'");
        }
        layer.routing = parse_matrix(routing, base + ".routing");
        layer.attention = parse_vector(require(lj, "attention", base), base + ".attention");
        if (lj.contains("hidden")) {
            layer.hidden = parse_matrix(lj.at("hidden"), base + ".hidden");
        }
        if (lj.contains("expert_norms")) {
            layer.expert_norms = parse_matrix(lj.at("expert_norms"), base + ".expert_norms");
        }
        t.layers.push_back(std::move(layer));
    }
    t.validate();
    return t;
}

ordered_json trace_to_json(const Trace& trace) {
    ordered_json doc;
    doc["format"] = kTraceFormat;
    doc["version"] = trace.version;
    ordered_json meta;
    meta["model"] = trace.meta.model;
    meta["num_layers"] = trace.meta.num_layers;
    meta["num_experts"] = trace.meta.num_experts;
    meta["top_k"] = trace.meta.top_k;
    meta["num_shared"] = trace.meta.num_shared;
    meta["hidden_dim"] = trace.meta.hidden_dim;
    meta["expert_hidden"] = trace.meta.expert_hidden;
    meta["attention_semantics"] = trace.meta.attention_semantics;
    doc["metadata"] = std::move(meta);
    doc["num_tokens"] = trace.num_tokens();
    doc["modality"] = mask_to_string(trace.mask);
    ordered_json layers = ordered_json::array();
    for (const auto& layer : trace.layers) {
        ordered_json lj;
        auto routing = matrix_json(layer.routing);
        ordered_json r;
        r["kind"] = layer.routing_kind == RoutingKind::Probs ? "probs" : "logits";
        r["shape"] = routing["shape"];
        r["data"] = routing["data"];
        lj["routing"] = std::move(r);
        lj["attention"] = vector_json(layer.attention);
        if (layer.hidden) {
            lj["hidden"] = matrix_json(*layer.hidden);
        }
        if (layer.expert_norms) {
            lj["expert_norms"] = matrix_json(*layer.expert_norms);
        }
        layers.push_back(std::move(lj));
    }
    doc["layers"] = std::move(layers);
    return doc;
}

Trace load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw TraceError(path, "cannot open trace file");
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw TraceError(path, std::string("not valid JSON: ") + e.what());
    }
    return parse_trace(doc);
}

void save_trace(const Trace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write trace file " + path);
    }
    out << trace_to_json(trace).dump() << '\n';
}

}  // namespace fastmmoe
