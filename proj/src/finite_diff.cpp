#include "deepcuts/finite_diff.hpp"
#include <limits>

#include <cmath>

#include "deepcuts/losses.hpp"

namespace deepcuts {

double finite_diff_check(Model& model, const Batch& batch, double eps) {
    constexpr std::size_t kMaxParams = 50000;
    if (model.n_total() >= kMaxParams) {
        throw ValidationError("model too large for finite differences: " +
                              std::to_string(model.n_total()) + " parameters (limit " +
                              std::to_string(kMaxParams) + ")");
    }

    const TaskHead head = model.spec().task_head;

    model.zero_grads();
    Tensor out = model.forward(batch);
    LossResult loss = task_loss(out, batch, head);
    model.backward(loss.out_grad);

    // Snapshot of analytic gradients before we start perturbing.
    std::vector<std::vector<double>> analytic;
    analytic.reserve(model.params().size());
    for (const Parameter* p : model.params()) analytic.push_back(p->tensor.grad);

    double worst = 0.0;
    for (std::size_t pi = 0; pi < model.params().size(); ++pi) {
        Parameter* p = model.params()[pi];
        for (std::size_t i = 0; i < p->tensor.size(); ++i) {
            const double orig = p->tensor.values[i];
            p->tensor.values[i] = orig + eps;
            const double lp = task_loss(model.forward(batch), batch, head).value;
            p->tensor.values[i] = orig - eps;
            const double lm = task_loss(model.forward(batch), batch, head).value;
            p->tensor.values[i] = orig;
            // A loss difference below a few ulps is indistinguishable from an
            // exactly-zero derivative (e.g. key-projection biases, which
            // softmax shift-invariance makes gradient-free).
            double diff = lp - lm;
            const double gate =
                8.0 * std::numeric_limits<double>::epsilon() * std::max(std::fabs(lp), std::fabs(lm));
            if (std::fabs(diff) <= gate) diff = 0.0;
            const double numeric = diff / (2.0 * eps);
            const double a = analytic[pi][i];
            const double err = std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric) + 1e-12);
            if (err > worst) worst = err;
        }
    }
    return worst;
}

}  // namespace deepcuts
