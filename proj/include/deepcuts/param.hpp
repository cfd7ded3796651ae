#pragma once

#include <cstdint>
#include <string>

#include "deepcuts/tensor.hpp"

namespace deepcuts {

// Byte codes are part of the checkpoint format; never reorder.
enum class ParamKind : std::uint8_t {
    dense_weight = 0,
    dense_bias = 1,
    embedding = 2,
    layernorm_scale = 3,
    layernorm_shift = 4,
    head_weight = 5,
    head_bias = 6,
};

const char* param_kind_name(ParamKind kind);
ParamKind param_kind_from_byte(std::uint8_t b);

// A named tensor inside a model. Dense weights and biases of the encoder
// stack are prunable; embeddings, LayerNorm parameters, and the task head
// are not.
struct Parameter {
    std::string path;
    Tensor tensor;
    ParamKind kind = ParamKind::dense_weight;
    bool prunable = false;
};

}  // namespace deepcuts
