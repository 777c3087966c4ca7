#pragma once

#include <cstdint>
#include <vector>

#include "eventfm/common.hpp"

namespace eventfm {

// Row-major owning matrix. Vectors are 1 x n.
template <class T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c), T(0)) {}

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    T* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const T* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
    T& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    const T& at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    int64_t count() const { return static_cast<int64_t>(rows) * cols; }
    void zero() { std::fill(v.begin(), v.end(), T(0)); }
    void resize(int r, int c) {
        rows = r;
        cols = c;
        v.assign(static_cast<size_t>(r) * static_cast<size_t>(c), T(0));
    }
};

template <class T>
void fill_normal(Mat<T>& m, Rng& rng, double sd) {
    for (auto& x : m.v) x = static_cast<T>(rng.normal() * sd);
}

}  // namespace eventfm
