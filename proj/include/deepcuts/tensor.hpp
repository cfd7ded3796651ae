#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "deepcuts/error.hpp"

namespace deepcuts {

// Dense n-dimensional array of doubles in row-major order, with a lazily
// allocated gradient buffer of the same shape.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until ensure_grad()

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> values);

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }

    // Rank-2 accessors; shape checked only by assertion-level logic in at().
    double& at(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return values[i * shape[1] + j]; }

    bool has_grad() const { return !grad.empty(); }
    void ensure_grad();
    void zero_grad();

    // Throws NumericError naming `what` if any value is NaN or infinite.
    void validate_finite(const std::string& what) const;

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::size_t shape_size(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace deepcuts
