#pragma once

#include "deepcuts/batch.hpp"
#include "deepcuts/model.hpp"

namespace deepcuts {

// Central-difference check of every parameter element against the analytic
// gradient of the task loss on `batch`. Returns the maximum of
// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
// Models above 50k parameters are rejected.
double finite_diff_check(Model& model, const Batch& batch, double eps);

}  // namespace deepcuts
