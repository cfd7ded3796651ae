#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepcuts/batch.hpp"
#include "deepcuts/layers.hpp"
#include "deepcuts/model_spec.hpp"
#include "deepcuts/tensor.hpp"

namespace deepcuts {

// A model instance owns its parameters and the per-pass buffers needed by
// backward. Single-threaded during forward/backward; independent clones may
// run on different threads.
class Model {
public:
    explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}
    virtual ~Model() = default;

    // Returns (batch, n_classes) or (batch, 1) outputs and records the
    // activations backward needs.
    virtual Tensor forward(const Batch& batch, const ForwardOptions& opts = {}) = 0;

    // Consumes the recorded pass; out_grad has the forward output's shape.
    // Gradients accumulate into each parameter's grad buffer.
    virtual void backward(const Tensor& out_grad) = 0;

    // Dense-layer activation cache owning `path` (its weight or bias), or
    // null when the parameter is not part of a dense layer.
    virtual const ActivationCache* activation_cache_for(const std::string& path) const = 0;

    const ModelSpec& spec() const { return spec_; }
    const std::vector<Parameter*>& params() const { return params_; }
    Parameter* find_param(const std::string& path);
    const Parameter* find_param(const std::string& path) const;

    std::size_t n_total() const;
    std::size_t n_prunable() const;

    void zero_grads();
    std::unique_ptr<Model> clone() const;

protected:
    void register_param(Parameter* p);
    void register_dense(Dense* d);

    // Initializes every registered parameter: Gaussian(0, 0.02) truncated at
    // +/- 2 sigma for weights and embeddings, zeros for biases and LayerNorm
    // shifts, ones for LayerNorm scales.
    void init_params(std::uint64_t seed);

    NoiseState make_noise_state(const NoiseSpec& noise) const;

    ModelSpec spec_;
    bool graph_ready_ = false;

private:
    std::vector<Parameter*> params_;
    std::unordered_map<std::string, Parameter*> by_path_;
    std::unordered_map<std::string, Dense*> dense_by_param_;
};

std::unique_ptr<Model> make_model(const ModelSpec& spec, std::uint64_t init_seed);

}  // namespace deepcuts
