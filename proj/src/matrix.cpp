// Copyright 2026 The FastMMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastmmoe/matrix.hpp"

namespace fastmmoe {

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) {
        return {};
    }
    Matrix m(0, rows.front().size());
    m.m_data.reserve(rows.size() * m.m_cols);
    for (const auto& r : rows) {
        m.append_row(r);
    }
    return m;
}

void Matrix::append_row(std::span<const double> values) {
    if (m_rows == 0 && m_cols == 0) {
        m_cols = values.size();
    }
    FASTMMOE_CHECK(values.size() == m_cols, "appended row width does not match matrix");
    m_data.insert(m_data.end(), values.begin(), values.end());
    ++m_rows;
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
    Matrix out(0, m_cols);
    for (auto i : indices) {
        FASTMMOE_CHECK(i < m_rows, "row index out of range");
        out.append_row(row(i));
    }
    return out;
}

Vector Matrix::multiply(std::span<const double> x) const {
    FASTMMOE_CHECK(x.size() == m_cols, "matrix-vector dimension mismatch");
    Vector y(m_rows, 0.0);
    for (std::size_t r = 0; r < m_rows; ++r) {
        y[r] = dot(row(r), x);
    }
    return y;
}

}  // namespace fastmmoe
