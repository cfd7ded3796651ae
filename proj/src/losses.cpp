#include "deepcuts/losses.hpp"

#include <cmath>

#include "deepcuts/error.hpp"
#include "deepcuts/nn_ops.hpp"

namespace deepcuts {

LossResult cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("logits must be rank 2");
    const std::size_t b_sz = logits.shape[0];
    const std::size_t n_cls = logits.shape[1];
    if (labels.size() != b_sz) throw ShapeError("label count does not match batch size");

    LossResult res;
    res.out_grad = Tensor::zeros(logits.shape);
    std::vector<double> p(n_cls);
    double total = 0.0;
    for (std::size_t b = 0; b < b_sz; ++b) {
        const int label = labels[b];
        if (label < 0 || static_cast<std::size_t>(label) >= n_cls) {
            throw ValidationError("label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(n_cls) + ")");
        }
        for (std::size_t c = 0; c < n_cls; ++c) p[c] = logits.at(b, c);
        softmax_row(p.data(), n_cls);
        // log-softmax evaluated stably from the shifted logits
        double mx = logits.at(b, 0);
        for (std::size_t c = 1; c < n_cls; ++c) mx = std::max(mx, logits.at(b, c));
        double lse = 0.0;
        for (std::size_t c = 0; c < n_cls; ++c) lse += std::exp(logits.at(b, c) - mx);
        total += -(logits.at(b, static_cast<std::size_t>(label)) - mx - std::log(lse));
        for (std::size_t c = 0; c < n_cls; ++c) {
            res.out_grad.at(b, c) =
                (p[c] - (c == static_cast<std::size_t>(label) ? 1.0 : 0.0)) /
                static_cast<double>(b_sz);
        }
    }
    res.value = total / static_cast<double>(b_sz);
    return res;
}

LossResult scaled_sigmoid_regression_loss(const Tensor& raw, const std::vector<double>& targets) {
    if (raw.rank() != 2 || raw.shape[1] != 1) throw ShapeError("regression output must be (batch, 1)");
    const std::size_t b_sz = raw.shape[0];
    if (targets.size() != b_sz) throw ShapeError("target count does not match batch size");

    LossResult res;
    res.out_grad = Tensor::zeros(raw.shape);
    double total = 0.0;
    for (std::size_t b = 0; b < b_sz; ++b) {
        const double t = targets[b];
        if (t < 0.0 || t > 5.0) {
            throw ValidationError("regression target " + std::to_string(t) + " outside [0, 5]");
        }
        const double s = sigmoid(raw.values[b]);
        const double pred = 5.0 * s;
        const double err = pred - t;
        total += err * err;
        res.out_grad.values[b] = 2.0 * err * 5.0 * s * (1.0 - s) / static_cast<double>(b_sz);
    }
    res.value = total / static_cast<double>(b_sz);
    return res;
}

LossResult task_loss(const Tensor& outputs, const Batch& batch, TaskHead head) {
    if (head == TaskHead::classifier) return cross_entropy_loss(outputs, batch.class_labels);
    return scaled_sigmoid_regression_loss(outputs, batch.float_labels);
}

double batch_metric_sum(const Tensor& outputs, const Batch& batch, TaskHead head) {
    const std::size_t b_sz = outputs.shape[0];
    double sum = 0.0;
    if (head == TaskHead::classifier) {
        const std::size_t n_cls = outputs.shape[1];
        for (std::size_t b = 0; b < b_sz; ++b) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < n_cls; ++c) {
                if (outputs.at(b, c) > outputs.at(b, best)) best = c;
            }
            if (static_cast<int>(best) == batch.class_labels[b]) sum += 1.0;
        }
    } else {
        for (std::size_t b = 0; b < b_sz; ++b) {
            const double pred = 5.0 * sigmoid(outputs.values[b]);
            const double err = pred - batch.float_labels[b];
            sum += err * err;
        }
    }
    return sum;
}

}  // namespace deepcuts
