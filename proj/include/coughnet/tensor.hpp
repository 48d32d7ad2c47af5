#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "coughnet/errors.hpp"

namespace coughnet {

// Dense row-major tensor with an optional gradient buffer of the same shape.
// T is float for training and inference, double for gradient checking.
template <typename T>
struct Tensor {
    std::vector<size_t> shape;
    std::vector<T> data;
    std::vector<T> grad;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), T(0));
    }

    static size_t numel_of(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return n;
    }

    size_t numel() const { return data.size(); }
    size_t dim(size_t i) const { return shape[i]; }
    size_t rank() const { return shape.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    // NCHW helpers
    T& at4(size_t n, size_t c, size_t h, size_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    T at4(size_t n, size_t c, size_t h, size_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    T& at2(size_t i, size_t j) { return data[i * shape[1] + j]; }
    T at2(size_t i, size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_string(const std::vector<size_t>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

template <typename T>
void require_rank(const Tensor<T>& t, size_t r, const char* what) {
    if (t.rank() != r) {
        throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(r) +
                            ", got " + shape_string(t.shape));
    }
}

}  // namespace coughnet
