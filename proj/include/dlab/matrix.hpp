#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dlab {

using Vec = std::vector<double>;

// Dense row-major matrix.  Rows are samples or mixture components; columns
// are dimensions.  Kept deliberately minimal -- targets here are 1-3D.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// Convenience builder: rows from an initializer-style nested vector.
Matrix matrix_from_rows(const std::vector<Vec>& rows);

}  // namespace dlab
