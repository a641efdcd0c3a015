#pragma once

#include <cstddef>
#include <vector>

namespace fedsiam {

// Dense row-major matrix of doubles. Just enough linear algebra for the
// training core; kernels live in nn.cpp.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

    double& operator()(int r, int c) {
        return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
    }
    double operator()(int r, int c) const {
        return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
    }

    double* row_ptr(int r) { return data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols); }
    const double* row_ptr(int r) const {
        return data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
};

}  // namespace fedsiam
