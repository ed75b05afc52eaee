#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "medkco/errors.hpp"

namespace medkco {

// Dense row-major double matrix. Immutable by convention once handed to the
// tape; plain value type otherwise.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values)
        : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != rows * cols) {
            throw shape_error("matrix data length " + std::to_string(data.size()) +
                              " does not match " + std::to_string(rows) + "x" +
                              std::to_string(cols));
        }
    }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    std::size_t size() const { return data.size(); }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw shape_error("matmul shape mismatch: " + a.shape_str() + " x " +
                          b.shape_str());
    }
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw shape_error("add shape mismatch: " + a.shape_str() + " vs " +
                          b.shape_str());
    }
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw shape_error("sub shape mismatch: " + a.shape_str() + " vs " +
                          b.shape_str());
    }
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw shape_error("hadamard shape mismatch: " + a.shape_str() + " vs " +
                          b.shape_str());
    }
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

inline Matrix scale(const Matrix& a, double c) {
    Matrix out = a;
    for (double& v : out.data) v *= c;
    return out;
}

inline double row_norm(const Matrix& m, std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += m.at(i, j) * m.at(i, j);
    return std::sqrt(s);
}

// Each row divided by max(||row||, epsilon). Rows with norm below epsilon are
// divided by epsilon instead, so a zero row stays zero.
inline Matrix row_l2_normalize(const Matrix& m, double epsilon = 1e-8) {
    Matrix out = m;
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double denom = std::max(row_norm(m, i), epsilon);
        for (std::size_t j = 0; j < m.cols; ++j) out.at(i, j) = m.at(i, j) / denom;
    }
    return out;
}

inline double dot_rows(const Matrix& a, std::size_t i, const Matrix& b,
                       std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(j, k);
    return s;
}

inline double euclidean_row_distance(const Matrix& a, std::size_t i,
                                     const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols; ++k) {
        const double d = a.at(i, k) - v[k];
        s += d * d;
    }
    return std::sqrt(s);
}

inline Matrix identity(std::size_t n) {
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) out.at(i, i) = 1.0;
    return out;
}

}  // namespace medkco
