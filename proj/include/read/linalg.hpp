#pragma once

#include <cstddef>
#include <vector>

#include "read/util.hpp"

namespace readcore {

// Dense row-major matrix of doubles. Small and boring on purpose: everything
// in this project fits comfortably in memory and runs single threaded.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Solves A x = b for symmetric positive definite A via Cholesky.
// Throws numeric_error if A is not positive definite.
std::vector<double> cholesky_solve(Matrix a, std::vector<double> b);

}  // namespace readcore
