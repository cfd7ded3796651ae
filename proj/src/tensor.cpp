#include "deepcuts/tensor.hpp"

#include <cmath>
#include <sstream>

namespace deepcuts {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor dimension must be positive, got shape " + shape_str(shape));
    }
    Tensor t;
    t.values.assign(shape_size(shape), 0.0);
    t.shape = std::move(shape);
    return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
    if (shape_size(shape) != values.size()) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.shape = std::move(shape);
    t.values = std::move(values);
    return t;
}

void Tensor::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() {
    if (grad.empty()) {
        grad.assign(values.size(), 0.0);
    } else {
        std::fill(grad.begin(), grad.end(), 0.0);
    }
}

void Tensor::validate_finite(const std::string& what) const {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite value in " + what);
        }
    }
}

}  // namespace deepcuts
