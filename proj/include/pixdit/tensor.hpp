// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "pixdit/error.hpp"

namespace pixdit {

// Dense row-major tensor owning its storage. Shapes are small so a plain
// vector is fine.
template <typename T>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int64_t> s) : shape(std::move(s)) { data.assign(numel_of(shape), T(0)); }
    TensorT(std::initializer_list<int64_t> s) : TensorT(std::vector<int64_t>(s)) {}

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw InvalidInputError("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    int ndim() const { return static_cast<int>(shape.size()); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    void zero() { std::fill(data.begin(), data.end(), T(0)); }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor  = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
using ParamMap = std::map<std::string, TensorT<T>>;

template <typename T>
inline void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw InvalidInputError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <typename T>
inline int64_t total_numel(const ParamMap<T>& m) {
    int64_t n = 0;
    for (const auto& [k, v] : m) n += v.numel();
    return n;
}

}  // namespace pixdit
