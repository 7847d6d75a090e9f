#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "comet/error.hpp"

namespace comet {

// Dense row-major array of 32-bit floats (double variant used by test shadow paths).
template <class T>
struct ArrayT {
    std::vector<int> shape;
    std::vector<T> v;

    ArrayT() = default;
    explicit ArrayT(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}
    ArrayT(std::vector<int> s, std::vector<T> values) : shape(std::move(s)), v(std::move(values)) {
        if (v.size() != count(shape)) throw ShapeMismatch("array values do not fill shape");
    }

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }

    std::size_t size() const { return v.size(); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    T& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols() + c]; }
    T at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols() + c]; }

    bool same_shape(const ArrayT& o) const { return shape == o.shape; }
};

using Array = ArrayT<float>;

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace comet
