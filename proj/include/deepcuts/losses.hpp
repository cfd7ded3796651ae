#pragma once

#include <vector>

#include "deepcuts/batch.hpp"
#include "deepcuts/model_spec.hpp"
#include "deepcuts/tensor.hpp"

namespace deepcuts {

struct LossResult {
    double value = 0.0;
    Tensor out_grad;  // d(loss)/d(model output), mean-over-batch convention
};

// Mean negative log-likelihood over the batch. labels[i] in [0, n_classes).
LossResult cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);

// prediction = 5 * sigmoid(raw); loss = mean squared error against targets
// in [0, 5].
LossResult scaled_sigmoid_regression_loss(const Tensor& raw, const std::vector<double>& targets);

// Dispatch on the model's head type, pulling labels from the batch.
LossResult task_loss(const Tensor& outputs, const Batch& batch, TaskHead head);

// accuracy for classifier heads (argmax, lowest index wins ties), mse for
// regression heads.
double batch_metric_sum(const Tensor& outputs, const Batch& batch, TaskHead head);

}  // namespace deepcuts
