#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rebafl {

// Dense row-major matrix of doubles. All numerics in the kernel run at
// 64-bit precision; shape mismatches throw instead of broadcasting.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool empty() const { return rows == 0 || cols == 0; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

Matrix matmul(const Matrix& a, const Matrix& b);       // a(m,k) * b(k,n)
Matrix matmul_at_b(const Matrix& a, const Matrix& b);  // a(m,k)^T * b(m,n) -> (k,n)
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);  // a(m,k) * b(n,k)^T -> (m,n)

std::vector<double> colsum(const Matrix& m);

bool all_finite(std::span<const double> v);
bool all_finite(const Matrix& m);

}  // namespace rebafl
