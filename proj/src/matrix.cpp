#include "rebafl/matrix.hpp"

#include <cmath>
#include <string>

#include "rebafl/errors.hpp"

namespace rebafl {

namespace {

void require(bool cond, const std::string& what) {
    if (!cond) throw InternalError("matrix: " + what);
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols == b.rows, "matmul shape mismatch: " + std::to_string(a.rows) + "x" +
                                  std::to_string(a.cols) + " * " + std::to_string(b.rows) +
                                  "x" + std::to_string(b.cols));
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* cr = c.data.data() + i * c.cols;
        const double* ar = a.data.data() + i * a.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double av = ar[k];
            const double* br = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) cr[j] += av * br[j];
        }
    }
    return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows, "matmul_at_b shape mismatch");
    Matrix c(a.cols, b.cols);
    for (std::size_t j = 0; j < a.rows; ++j) {
        const double* ar = a.data.data() + j * a.cols;
        const double* br = b.data.data() + j * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double av = ar[i];
            double* cr = c.data.data() + i * c.cols;
            for (std::size_t k = 0; k < b.cols; ++k) cr[k] += av * br[k];
        }
    }
    return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    require(a.cols == b.cols, "matmul_a_bt shape mismatch");
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ar = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* br = b.data.data() + j * b.cols;
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += ar[k] * br[k];
            c(i, j) = s;
        }
    }
    return c;
}

std::vector<double> colsum(const Matrix& m) {
    std::vector<double> s(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.data.data() + i * m.cols;
        for (std::size_t j = 0; j < m.cols; ++j) s[j] += r[j];
    }
    return s;
}

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

bool all_finite(const Matrix& m) { return all_finite(std::span<const double>(m.data)); }

}  // namespace rebafl
