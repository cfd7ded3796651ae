#include "deepcuts/adam.hpp"

#include <cmath>

#include "deepcuts/masking.hpp"

namespace deepcuts {

Adam::Adam(Model& model, AdamHyper hyper) : model_(model), hyper_(hyper) {
    reset();
}

void Adam::reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
    for (const Parameter* p : model_.params()) {
        m_.emplace_back(p->tensor.size(), 0.0);
        v_.emplace_back(p->tensor.size(), 0.0);
    }
}

void Adam::step(const PruneMask* mask) {
    t_ += 1;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
    const auto& params = model_.params();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        if (!p->tensor.has_grad()) continue;
        const MaskTensor* mt = nullptr;
        if (mask != nullptr && p->prunable) mt = mask->find(p->path);
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < p->tensor.size(); ++i) {
            if (mt != nullptr && mt->bits[i] == 0) {
                // Pruned: value and both moments stay exactly zero.
                p->tensor.values[i] = 0.0;
                m[i] = 0.0;
                v[i] = 0.0;
                continue;
            }
            const double g = p->tensor.grad[i];
            m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * g;
            v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p->tensor.values[i] -= hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps);
        }
    }
}

}  // namespace deepcuts
