#include "deepcuts/layers.hpp"

#include <cmath>

#include "deepcuts/nn_ops.hpp"

namespace deepcuts {

void dense_forward_kernel(const double* in, std::size_t rows, std::size_t in_f,
                          const double* w, const double* bias, std::size_t out_f,
                          double* out) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in + r * in_f;
        double* y = out + r * out_f;
        for (std::size_t o = 0; o < out_f; ++o) {
            const double* wr = w + o * in_f;
            double acc = bias[o];
            for (std::size_t i = 0; i < in_f; ++i) acc += x[i] * wr[i];
            y[o] = acc;
        }
    }
}

void dense_backward_kernel(const double* in, std::size_t rows, std::size_t in_f,
                           const double* w, std::size_t out_f, const double* dout,
                           double* dw, double* db, double* din) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in + r * in_f;
        const double* dy = dout + r * out_f;
        for (std::size_t o = 0; o < out_f; ++o) {
            const double g = dy[o];
            if (g == 0.0) continue;
            db[o] += g;
            double* dwr = dw + o * in_f;
            for (std::size_t i = 0; i < in_f; ++i) dwr[i] += g * x[i];
        }
        if (din != nullptr) {
            double* dx = din + r * in_f;
            for (std::size_t i = 0; i < in_f; ++i) dx[i] = 0.0;
            for (std::size_t o = 0; o < out_f; ++o) {
                const double g = dy[o];
                if (g == 0.0) continue;
                const double* wr = w + o * in_f;
                for (std::size_t i = 0; i < in_f; ++i) dx[i] += g * wr[i];
            }
        }
    }
}

Dense::Dense(const std::string& path, std::size_t in_f, std::size_t out_f,
             ParamKind weight_kind, ParamKind bias_kind, bool prunable)
    : in_f_(in_f), out_f_(out_f) {
    weight.path = path + ".weight";
    weight.tensor = Tensor::zeros({out_f, in_f});
    weight.kind = weight_kind;
    weight.prunable = prunable;
    bias.path = path + ".bias";
    bias.tensor = Tensor::zeros({out_f});
    bias.kind = bias_kind;
    bias.prunable = prunable;
}

void Dense::forward(const std::vector<double>& in, std::size_t rows,
                    std::vector<double>& out, bool want_cache, NoiseState* noise) {
    saved_in_.assign(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(rows * in_f_));
    saved_rows_ = rows;
    out.resize(rows * out_f_);
    dense_forward_kernel(saved_in_.data(), rows, in_f_, weight.tensor.values.data(),
                         bias.tensor.values.data(), out_f_, out.data());
    if (noise != nullptr && noise->active) {
        // One sample per output element, shared across every row of the batch.
        std::vector<double> z(out_f_);
        for (std::size_t o = 0; o < out_f_; ++o) z[o] = noise->rng.next_gaussian() * noise->stddev;
        for (std::size_t r = 0; r < rows; ++r) {
            double* y = out.data() + r * out_f_;
            for (std::size_t o = 0; o < out_f_; ++o) y[o] += z[o];
        }
    }
    if (want_cache) {
        cache_.mean_preact.assign(out_f_, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = out.data() + r * out_f_;
            for (std::size_t o = 0; o < out_f_; ++o) cache_.mean_preact[o] += y[o];
        }
        for (std::size_t o = 0; o < out_f_; ++o) cache_.mean_preact[o] /= static_cast<double>(rows);
        cache_.token_count = rows;
        cache_.populated = true;
    }
}

void Dense::backward(const std::vector<double>& dout, std::size_t rows,
                     std::vector<double>* din) {
    if (rows != saved_rows_) {
        throw StateError("dense backward row count does not match forward at " + weight.path);
    }
    weight.tensor.ensure_grad();
    bias.tensor.ensure_grad();
    if (din != nullptr) din->resize(rows * in_f_);
    dense_backward_kernel(saved_in_.data(), rows, in_f_, weight.tensor.values.data(),
                          out_f_, dout.data(), weight.tensor.grad.data(),
                          bias.tensor.grad.data(), din != nullptr ? din->data() : nullptr);
}

LayerNorm::LayerNorm(const std::string& path, std::size_t dim) : dim_(dim) {
    scale.path = path + ".scale";
    scale.tensor = Tensor::zeros({dim});
    scale.kind = ParamKind::layernorm_scale;
    scale.prunable = false;
    shift.path = path + ".shift";
    shift.tensor = Tensor::zeros({dim});
    shift.kind = ParamKind::layernorm_shift;
    shift.prunable = false;
}

void LayerNorm::forward(const std::vector<double>& in, std::size_t rows, std::vector<double>& out) {
    out.resize(rows * dim_);
    saved_xhat_.resize(rows * dim_);
    saved_inv_std_.resize(rows);
    saved_rows_ = rows;
    const double* g = scale.tensor.values.data();
    const double* b = shift.tensor.values.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in.data() + r * dim_;
        double mean = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) mean += x[j];
        mean /= static_cast<double>(dim_);
        double var = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) {
            const double d = x[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(dim_);
        const double inv_std = 1.0 / std::sqrt(var + kEps);
        saved_inv_std_[r] = inv_std;
        double* xh = saved_xhat_.data() + r * dim_;
        double* y = out.data() + r * dim_;
        for (std::size_t j = 0; j < dim_; ++j) {
            xh[j] = (x[j] - mean) * inv_std;
            y[j] = g[j] * xh[j] + b[j];
        }
    }
}

void LayerNorm::backward(const std::vector<double>& dout, std::size_t rows, std::vector<double>& din) {
    if (rows != saved_rows_) {
        throw StateError("layernorm backward row count does not match forward at " + scale.path);
    }
    din.resize(rows * dim_);
    scale.tensor.ensure_grad();
    shift.tensor.ensure_grad();
    double* dg = scale.tensor.grad.data();
    double* db = shift.tensor.grad.data();
    const double* g = scale.tensor.values.data();
    const double inv_dim = 1.0 / static_cast<double>(dim_);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* dy = dout.data() + r * dim_;
        const double* xh = saved_xhat_.data() + r * dim_;
        double* dx = din.data() + r * dim_;
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) {
            dg[j] += dy[j] * xh[j];
            db[j] += dy[j];
            const double dxh = dy[j] * g[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
        }
        const double inv_std = saved_inv_std_[r];
        for (std::size_t j = 0; j < dim_; ++j) {
            const double dxh = dy[j] * g[j];
            dx[j] = inv_std * (dxh - inv_dim * sum_dxhat - xh[j] * inv_dim * sum_dxhat_xhat);
        }
    }
}

}  // namespace deepcuts
