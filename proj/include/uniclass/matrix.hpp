#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "uniclass/errors.hpp"

namespace uniclass {

// Dense row-major 2-D matrix of doubles. Plain value type; all autodiff
// bookkeeping lives in Graph.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Mat from(std::initializer_list<std::initializer_list<double>> rows_init) {
        Mat m;
        m.rows = rows_init.size();
        m.cols = m.rows ? rows_init.begin()->size() : 0;
        m.data.reserve(m.rows * m.cols);
        for (const auto& row : rows_init) {
            if (row.size() != m.cols) throw DimensionError("Mat::from: ragged initializer");
            for (double v : row) m.data.push_back(v);
        }
        return m;
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double frobenius_norm(const Mat& m) {
    double s = 0.0;
    for (double v : m.data) s += v * v;
    return std::sqrt(s);
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
    if (!a.same_shape(b)) throw DimensionError("max_abs_diff: shape mismatch");
    double d = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
    return d;
}

}  // namespace uniclass
