// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fastmmoe {

using Vector = std::vector<double>;
using IndexList = std::vector<std::size_t>;

/// Raised when an operation receives input that violates its preconditions.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

#define FASTMMOE_CHECK(cond, msg)                        \
    do {                                                 \
        if (!(cond)) {                                   \
            throw ::fastmmoe::InvalidInput(msg);         \
        }                                                \
    } while (0)

enum class Modality : std::uint8_t { Vision, Text };

using ModalityMask = std::vector<Modality>;

inline std::size_t count_modality(const ModalityMask& mask, Modality m) {
    std::size_t n = 0;
    for (auto label : mask) {
        n += label == m ? 1 : 0;
    }
    return n;
}

/// Round half up, the rounding rule used for every count derived from a ratio.
inline std::size_t round_half_up(double x) {
    return x <= 0.0 ? 0 : static_cast<std::size_t>(std::floor(x + 0.5));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

inline double l2_norm(std::span<const double> a) {
    return std::sqrt(dot(a, a));
}

/// Cosine similarity; both vectors must have nonzero norm.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    FASTMMOE_CHECK(na > 0.0 && nb > 0.0, "cosine of a zero-norm vector is undefined");
    return dot(a, b) / (na * nb);
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

/// SplitMix64 finalizer; used to derive independent per-item seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(a) ^ (b + 0x632be59bd9b4e019ULL));
}

}  // namespace fastmmoe
