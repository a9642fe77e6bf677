// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fastmmoe/common.hpp"

namespace fastmmoe {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
        FASTMMOE_CHECK(m_data.size() == rows * cols, "matrix data size does not match its shape");
    }

    static Matrix from_rows(const std::vector<Vector>& rows);

    std::size_t rows() const { return m_rows; }
    std::size_t cols() const { return m_cols; }
    bool empty() const { return m_rows == 0; }

    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    std::span<double> row(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const double> row(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }

    const std::vector<double>& data() const { return m_data; }

    void append_row(std::span<const double> values);

    /// Rows selected by index, in the order given.
    Matrix select_rows(std::span<const std::size_t> indices) const;

    /// y = A x
    Vector multiply(std::span<const double> x) const;

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

}  // namespace fastmmoe
