#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cil/errors.hpp"

namespace cil {

// Dense tensor with value semantics. Gradient storage is optional and, when
// present, mirrors the data layout.
struct Tensor {
    std::vector<uint32_t> shape;
    std::vector<double> data;
    std::optional<std::vector<double>> grad;

    Tensor() = default;
    Tensor(std::vector<uint32_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {}

    static Tensor vector(std::vector<double> d) {
        Tensor t;
        t.shape = {static_cast<uint32_t>(d.size())};
        t.data = std::move(d);
        return t;
    }

    std::size_t numel() const { return data.size(); }

    void validate() const {
        std::size_t n = 1;
        for (uint32_t s : shape) n *= s;
        if (n != data.size())
            fail(errc::shape, "tensor shape/data mismatch: shape product " +
                                  std::to_string(n) + " vs data length " +
                                  std::to_string(data.size()));
        if (grad && grad->size() != data.size())
            fail(errc::shape, "tensor grad length differs from data length");
        for (double v : data)
            if (!std::isfinite(v)) fail(errc::numeric, "tensor contains non-finite value");
    }
};

inline std::size_t shape_numel(const std::vector<uint32_t>& shape) {
    std::size_t n = 1;
    for (uint32_t s : shape) n *= s;
    return n;
}

inline double l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

}  // namespace cil
