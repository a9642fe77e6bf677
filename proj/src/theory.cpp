// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastmmoe/theory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "fastmmoe/token_pruning.hpp"

namespace fastmmoe {

StabilityScore stability_score(std::span<const double> norms) {
    FASTMMOE_CHECK(!norms.empty(), "stability score needs at least one norm");
    double sum = 0.0;
    for (double x : norms) {
        FASTMMOE_CHECK(std::isfinite(x) && x >= 0.0, "expert-output norms must be finite and nonnegative");
        sum += x;
    }
    const double n = static_cast<double>(norms.size());
    StabilityScore s;
    s.mean = sum / n;
    FASTMMOE_CHECK(s.mean > 0.0, "stability score is undefined for zero mean norm");
    double sq = 0.0;
    for (double x : norms) {
        sq += (x - s.mean) * (x - s.mean);
    }
    s.stddev = std::sqrt(sq / n);
    s.cv = s.stddev / s.mean;
    s.stability = 1.0 / (1.0 + s.cv);
    return s;
}

double angular_lower_bound(std::size_t reduced, std::size_t total) {
    FASTMMOE_CHECK(reduced >= 1 && reduced <= total, "angular bound needs 1 <= m <= K");
    return std::sqrt(static_cast<double>(reduced) / static_cast<double>(total));
}

void AngularCase::validate() const {
    FASTMMOE_CHECK(!weights.empty(), "angular case has no weights");
    FASTMMOE_CHECK(reduced >= 1 && reduced <= weights.size(), "angular case needs 1 <= m <= K");
    FASTMMOE_CHECK(outputs.rows() == weights.size(), "angular case needs one output vector per weight");
    double sum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        FASTMMOE_CHECK(weights[i] > 0.0, "angular case weights must be positive");
        FASTMMOE_CHECK(i == 0 || weights[i] <= weights[i - 1], "angular case weights must be non-increasing");
        sum += weights[i];
    }
    FASTMMOE_CHECK(std::abs(sum - 1.0) <= 1e-9, "angular case weights must sum to one");
}

double reduced_output_cosine(const AngularCase& c) {
    c.validate();
    const std::size_t dim = c.outputs.cols();
    Vector full(dim, 0.0);
    Vector reduced(dim, 0.0);
    double kept_mass = 0.0;
    for (std::size_t i = 0; i < c.reduced; ++i) {
        kept_mass += c.weights[i];
    }
    for (std::size_t i = 0; i < c.weights.size(); ++i) {
        const auto p = c.outputs.row(i);
        for (std::size_t h = 0; h < dim; ++h) {
            full[h] += c.weights[i] * p[h];
            if (i < c.reduced) {
                reduced[h] += c.weights[i] / kept_mass * p[h];
            }
        }
    }
    FASTMMOE_CHECK(l2_norm(full) > 0.0 && l2_norm(reduced) > 0.0, "reduced-output cosine of a zero output");
    return cosine(full, reduced);
}

double reduced_output_cosine_closed_form(std::span<const double> weights, std::size_t reduced) {
    FASTMMOE_CHECK(reduced >= 1 && reduced <= weights.size(), "closed form needs 1 <= m <= K");
    double head = 0.0;
    double all = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        all += weights[i] * weights[i];
        if (i < reduced) {
            head += weights[i] * weights[i];
        }
    }
    return std::sqrt(head / all);
}

Matrix orthonormal_vectors(std::size_t count, std::size_t dim, std::uint64_t seed) {
    FASTMMOE_CHECK(count <= dim, "cannot build more orthonormal vectors than dimensions");
    std::mt19937_64 rng(mix_seed(seed));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix q(count, dim);
    for (std::size_t i = 0; i < count; ++i) {
        auto v = q.row(i);
        do {
            for (auto& x : v) {
                x = gauss(rng);
            }
            // Two passes of modified Gram-Schmidt keep the result orthogonal to machine precision.
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t j = 0; j < i; ++j) {
                    const double proj = dot(v, q.row(j));
                    const auto u = q.row(j);
                    for (std::size_t h = 0; h < dim; ++h) {
                        v[h] -= proj * u[h];
                    }
                }
            }
        } while (l2_norm(v) < 1e-6);
        const double norm = l2_norm(v);
        for (auto& x : v) {
            x /= norm;
        }
    }
    return q;
}

BoundCheck verify_angular_bound(std::size_t total, std::size_t reduced, std::size_t trials, std::uint64_t seed,
                                double tolerance) {
    const double bound = angular_lower_bound(reduced, total);
    const Matrix outputs = orthonormal_vectors(total, total, seed);
    std::mt19937_64 rng(mix_seed(seed, 0xa11ceULL));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    BoundCheck check;
    check.trials = trials;
    check.min_margin = std::numeric_limits<double>::infinity();
    AngularCase c{Vector(total), reduced, outputs};
    for (std::size_t t = 0; t < trials; ++t) {
        double sum = 0.0;
        for (auto& w : c.weights) {
            // Bounded away from zero so the positivity invariant holds after normalization.
            w = 1e-6 + unit(rng);
            sum += w;
        }
        for (auto& w : c.weights) {
            w /= sum;
        }
        std::sort(c.weights.begin(), c.weights.end(), std::greater<>());
        const double cos_theta = reduced_output_cosine(c);
        const double margin = cos_theta - bound;
        check.min_margin = std::min(check.min_margin, margin);
        if (margin < -tolerance) {
            ++check.violations;
        }
        check.max_closed_form_error = std::max(
            check.max_closed_form_error, std::abs(cos_theta - reduced_output_cosine_closed_form(c.weights, reduced)));
    }
    return check;
}

namespace {

Matrix modality_rows(const RoutingDistribution& dist, const ModalityMask& mask, Modality m) {
    Matrix rows(0, dist.num_experts());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == m) {
            rows.append_row(dist.row(i));
        }
    }
    return rows;
}

std::optional<double> mean_window_similarity(const Matrix& rows, std::size_t window) {
    if (rows.empty()) {
        return std::nullopt;
    }
    const auto view = window_partition(rows.rows(), window);
    double total = 0.0;
    for (const auto& members : view.windows) {
        total += window_similarity_exact(rows, members);
    }
    return total / static_cast<double>(view.count());
}

}  // namespace

ModalityValue adjacent_routing_similarity(const RoutingDistribution& dist, const ModalityMask& mask, std::size_t window) {
    FASTMMOE_CHECK(window >= 2, "window size must be at least 2");
    FASTMMOE_CHECK(mask.size() == dist.num_tokens(), "modality mask length does not match routing rows");
    return {mean_window_similarity(modality_rows(dist, mask, Modality::Vision), window),
            mean_window_similarity(modality_rows(dist, mask, Modality::Text), window)};
}

ModalityValue topk_prob_sum(const RoutingDistribution& dist, const ModalityMask& mask, std::size_t k) {
    FASTMMOE_CHECK(mask.size() == dist.num_tokens(), "modality mask length does not match routing rows");
    FASTMMOE_CHECK(k >= 1 && k <= dist.num_experts(), "top-k statistic needs 1 <= k <= E");
    double sums[2] = {0.0, 0.0};
    std::size_t counts[2] = {0, 0};
    for (std::size_t i = 0; i < mask.size(); ++i) {
        double s = 0.0;
        for (auto j : top_k_select(dist.row(i), k)) {
            s += dist.row(i)[j];
        }
        const int slot = mask[i] == Modality::Vision ? 0 : 1;
        sums[slot] += s;
        ++counts[slot];
    }
    ModalityValue out;
    if (counts[0] > 0) out.vision = sums[0] / static_cast<double>(counts[0]);
    if (counts[1] > 0) out.text = sums[1] / static_cast<double>(counts[1]);
    return out;
}

ExpertSimilarity expert_output_similarity(const Matrix& outputs) {
    const std::size_t n = outputs.rows();
    ExpertSimilarity s{Matrix(n, n, 1.0), Matrix(n, n, 1.0)};
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            const double c = cosine(outputs.row(a), outputs.row(b));
            double d2 = 0.0;
            for (std::size_t h = 0; h < outputs.cols(); ++h) {
                const double diff = outputs(a, h) - outputs(b, h);
                d2 += diff * diff;
            }
            const double e = 1.0 / (1.0 + std::sqrt(d2));
            s.cosine(a, b) = s.cosine(b, a) = c;
            s.euclidean(a, b) = s.euclidean(b, a) = e;
        }
    }
    return s;
}

double gamma_upper_bound(double beta, std::size_t window) {
    FASTMMOE_CHECK(beta > 0.0 && beta <= 1.0, "gamma bound needs 0 < beta <= 1");
    FASTMMOE_CHECK(window >= 2, "gamma bound needs W >= 2");
    return (1.0 / beta - 1.0) / static_cast<double>(window - 1);
}

double stage_beta(double overall, std::size_t stages) {
    FASTMMOE_CHECK(overall > 0.0 && overall <= 1.0, "overall retention must lie in (0, 1]");
    FASTMMOE_CHECK(stages >= 1, "need at least one pruning stage");
    return std::pow(overall, 1.0 / static_cast<double>(stages));
}

}  // namespace fastmmoe
