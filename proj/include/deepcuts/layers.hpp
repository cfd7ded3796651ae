#pragma once

#include <string>
#include <vector>

#include "deepcuts/model_spec.hpp"
#include "deepcuts/param.hpp"
#include "deepcuts/rng.hpp"

namespace deepcuts {

// Mean pre-activation output of a dense layer, averaged over every token of
// every batch item in the most recent forward pass.
struct ActivationCache {
    std::vector<double> mean_preact;  // length == out_features
    std::size_t token_count = 0;
    bool populated = false;
};

struct ForwardOptions {
    bool cache = false;
    NoiseSpec noise;
};

// Per-forward noise state: one Gaussian vector per dense layer, drawn in
// layer order from a generator seeded by NoiseSpec::seed.
struct NoiseState {
    Rng rng;
    double stddev = 0.0;
    bool active = false;
};

class Dense {
public:
    Dense(const std::string& path, std::size_t in_f, std::size_t out_f,
          ParamKind weight_kind, ParamKind bias_kind, bool prunable);

    // in: rows x in_f (row-major), out resized to rows x out_f.
    void forward(const std::vector<double>& in, std::size_t rows,
                 std::vector<double>& out, bool want_cache, NoiseState* noise);
    // dout: rows x out_f. Accumulates into parameter grads; writes din
    // (rows x in_f) unless null.
    void backward(const std::vector<double>& dout, std::size_t rows,
                  std::vector<double>* din);

    std::size_t in_features() const { return in_f_; }
    std::size_t out_features() const { return out_f_; }
    const ActivationCache& cache() const { return cache_; }

    Parameter weight;
    Parameter bias;

private:
    std::size_t in_f_, out_f_;
    std::vector<double> saved_in_;
    std::size_t saved_rows_ = 0;
    ActivationCache cache_;
};

class LayerNorm {
public:
    LayerNorm(const std::string& path, std::size_t dim);

    void forward(const std::vector<double>& in, std::size_t rows, std::vector<double>& out);
    void backward(const std::vector<double>& dout, std::size_t rows, std::vector<double>& din);

    Parameter scale;
    Parameter shift;

    static constexpr double kEps = 1e-5;

private:
    std::size_t dim_;
    std::vector<double> saved_xhat_;
    std::vector<double> saved_inv_std_;
    std::size_t saved_rows_ = 0;
};

}  // namespace deepcuts
