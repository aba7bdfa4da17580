#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsrlab {

/// Dense row-major 2-D grid of doubles.
struct Grid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Grid() = default;
    Grid(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Grid& other) const { return rows == other.rows && cols == other.cols; }

    friend bool operator==(const Grid&, const Grid&) = default;
};

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
}

}  // namespace dsrlab
