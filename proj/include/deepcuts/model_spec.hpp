#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace deepcuts {

enum class Arch { mlp, miniformer };

enum class TaskHead { classifier, scaled_sigmoid_regressor };

// Additive Gaussian noise injected at every dense layer's pre-activation
// output. variance == 0 with enabled == true behaves exactly like disabled.
struct NoiseSpec {
    bool enabled = false;
    double variance = 0.0;  // sigma^2
    std::uint64_t seed = 0;
};

struct ModelSpec {
    Arch arch = Arch::miniformer;

    // miniformer
    std::size_t vocab_size = 259;  // 256 byte values + PAD/CLS/SEP
    std::size_t d_model = 32;
    std::size_t n_layers = 4;
    std::size_t n_heads = 2;
    std::size_t d_ffn = 64;
    std::size_t max_seq_len = 32;

    // mlp: widths[0] is the input dimension, the rest are hidden widths.
    std::vector<std::size_t> mlp_widths = {16, 32, 32};

    TaskHead task_head = TaskHead::classifier;
    std::size_t n_classes = 2;

    std::size_t head_outputs() const {
        return task_head == TaskHead::classifier ? n_classes : 1;
    }

    void validate() const;
};

}  // namespace deepcuts
