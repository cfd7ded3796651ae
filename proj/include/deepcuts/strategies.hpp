#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepcuts/batch.hpp"
#include "deepcuts/layers.hpp"
#include "deepcuts/model.hpp"
#include "deepcuts/tensor.hpp"

namespace deepcuts {

enum class StrategyKind {
    global_mag_weight,
    layer_mag_weight,
    layer_mag_grad,
    layer_gradcam_shift,
    layer_smoothgrad,
    layer_smoothgradcam_shift,
};

const char* strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(const std::string& name);
bool strategy_uses_gradients(StrategyKind kind);
bool strategy_uses_noise(StrategyKind kind);
bool strategy_uses_cam(StrategyKind kind);
// Masks are pooled across tensors only for global_mag_weight.
bool strategy_is_global(StrategyKind kind);

struct StrategyConfig {
    StrategyKind kind = StrategyKind::layer_mag_weight;
    double lambda = 10.0;          // CAM shift
    int eta = 10;                  // smoothing paths per batch
    double noise_variance = 0.01;  // sigma^2 of the per-layer noise
    int grad_batch_budget = 0;     // 0 -> default: 1000 plain, 100 smooth
    bool relu_on_activation = false;  // ablation: ReLU the CAM term instead of shifting
    std::uint64_t noise_seed = 0;

    int resolved_budget() const {
        if (grad_batch_budget > 0) return grad_batch_budget;
        return strategy_uses_noise(kind) ? 100 : 1000;
    }
    void validate() const;
};

// Per-parameter running sum of importance scores; covers exactly the
// prunable parameters, in model registration order.
struct ImportanceAccumulator {
    struct Entry {
        std::string path;
        ParamKind kind = ParamKind::dense_weight;
        Tensor scores;
    };
    std::vector<Entry> entries;
    int batches_consumed = 0;
    StrategyConfig config;

    Entry* find(const std::string& path);
    const Entry* find(const std::string& path) const;
};

// --- scoring kernels (pure; shared so degeneration identities hold bitwise)

// S = |w|
Tensor score_mag_weight(const Tensor& w);
// S = |w * g| elementwise
Tensor score_mag_grad(const Tensor& w, const Tensor& g);
// S[i,j] = |w[i,j] * g[i,j] * (a[i] + lambda)| for (out x in) weights;
// S[i]   = |b[i] * g[i] * (a[i] + lambda)| for biases.
// relu_on_a replaces a[i] with max(a[i], 0) before the shift.
Tensor score_cam_shift(const Tensor& w, const Tensor& g, const std::vector<double>& a,
                       double lambda, bool relu_on_a);

// Numeric mean of eta gradient tensors (sum then divide).
Tensor mean_gradient(const std::vector<Tensor>& grads);

// Runs the strategy over the stream (one pass, capped at the budget) and
// accumulates per-batch scores. Magnitude-only strategies consume no
// batches. `head` selects the loss used for gradient computation.
ImportanceAccumulator accumulate_scores(Model& model, const std::vector<Batch>& stream,
                                        const StrategyConfig& config, TaskHead head);

// DCSCORE container I/O; the trailer records the strategy configuration.
void write_scores(const ImportanceAccumulator& acc, const std::string& file,
                  const std::string& config_hash);
ImportanceAccumulator read_scores(const std::string& file, std::string* config_hash = nullptr);

}  // namespace deepcuts
