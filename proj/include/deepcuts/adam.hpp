#pragma once

#include <vector>

#include "deepcuts/model.hpp"

namespace deepcuts {

struct PruneMask;

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam bound to one model instance. Where a mask bit is 0 the parameter
// value and both moments are pinned to exactly 0.
class Adam {
public:
    Adam(Model& model, AdamHyper hyper);

    void step(const PruneMask* mask = nullptr);
    void reset();

private:
    Model& model_;
    AdamHyper hyper_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    long t_ = 0;
};

}  // namespace deepcuts
