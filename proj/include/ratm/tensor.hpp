#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ratm {

// Dense n-dimensional array of doubles, row-major. Scalars use shape {1}.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(numel_of(shape), fill) {}

    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) {
            if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
            n *= d;
        }
        return n;
    }

    static std::string shape_str(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << "]";
        return os.str();
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return numel() == 1; }
    double scalar() const {
        if (!is_scalar()) throw std::logic_error("Tensor::scalar on non-scalar " + shape_str(shape));
        return data[0];
    }

    // 2-D accessors
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }
    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    // 3-D accessor (channels, rows, cols)
    double& at(std::size_t c, std::size_t i, std::size_t j) {
        return data[(c * shape[1] + i) * shape[2] + j];
    }
    double at(std::size_t c, std::size_t i, std::size_t j) const {
        return data[(c * shape[1] + i) * shape[2] + j];
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static Tensor scalar_of(double v) { return Tensor({1}, {v}); }
    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
    static Tensor ones(std::vector<std::size_t> s) { return Tensor(std::move(s), 1.0); }
    static Tensor full(std::vector<std::size_t> s, double v) { return Tensor(std::move(s), v); }
    static Tensor identity(std::size_t n, double scale = 1.0) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.at(i, i) = scale;
        return t;
    }
    static Tensor arange(std::size_t n) {
        Tensor t({n});
        for (std::size_t i = 0; i < n; ++i) t.data[i] = static_cast<double>(i);
        return t;
    }
};

}  // namespace ratm
