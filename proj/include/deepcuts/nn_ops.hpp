#pragma once

#include <cmath>
#include <cstddef>

namespace deepcuts {

// GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
// The backward pass differentiates this exact expression.
inline double gelu(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
    constexpr double c = 0.7978845608028654;
    const double u = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Numerically stable in-place softmax over n contiguous values.
inline void softmax_row(double* x, std::size_t n) {
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        sum += x[i];
    }
    for (std::size_t i = 0; i < n; ++i) x[i] /= sum;
}

// out[r,o] = bias[o] + sum_i in[r,i] * w[o,i]; w is row-major (out_f x in_f).
void dense_forward_kernel(const double* in, std::size_t rows, std::size_t in_f,
                          const double* w, const double* bias, std::size_t out_f,
                          double* out);

// dw[o,i] += sum_r dout[r,o]*in[r,i]; db[o] += sum_r dout[r,o];
// din[r,i] = sum_o dout[r,o]*w[o,i] (skipped when din == nullptr).
void dense_backward_kernel(const double* in, std::size_t rows, std::size_t in_f,
                           const double* w, std::size_t out_f, const double* dout,
                           double* dw, double* db, double* din);

}  // namespace deepcuts
