#include "deepcuts/strategies.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "deepcuts/io.hpp"
#include "deepcuts/losses.hpp"
#include "deepcuts/rng.hpp"

namespace deepcuts {

const char* strategy_name(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::global_mag_weight: return "global_mag_weight";
        case StrategyKind::layer_mag_weight: return "layer_mag_weight";
        case StrategyKind::layer_mag_grad: return "layer_mag_grad";
        case StrategyKind::layer_gradcam_shift: return "layer_gradcam_shift";
        case StrategyKind::layer_smoothgrad: return "layer_smoothgrad";
        case StrategyKind::layer_smoothgradcam_shift: return "layer_smoothgradcam_shift";
    }
    return "unknown";
}

StrategyKind strategy_from_name(const std::string& name) {
    for (StrategyKind k : {StrategyKind::global_mag_weight, StrategyKind::layer_mag_weight,
                           StrategyKind::layer_mag_grad, StrategyKind::layer_gradcam_shift,
                           StrategyKind::layer_smoothgrad, StrategyKind::layer_smoothgradcam_shift}) {
        if (name == strategy_name(k)) return k;
    }
    throw ConfigError("unknown strategy '" + name + "'");
}

bool strategy_uses_gradients(StrategyKind kind) {
    return kind != StrategyKind::global_mag_weight && kind != StrategyKind::layer_mag_weight;
}

bool strategy_uses_noise(StrategyKind kind) {
    return kind == StrategyKind::layer_smoothgrad ||
           kind == StrategyKind::layer_smoothgradcam_shift;
}

bool strategy_uses_cam(StrategyKind kind) {
    return kind == StrategyKind::layer_gradcam_shift ||
           kind == StrategyKind::layer_smoothgradcam_shift;
}

bool strategy_is_global(StrategyKind kind) {
    return kind == StrategyKind::global_mag_weight;
}

void StrategyConfig::validate() const {
    if (eta < 1) throw ConfigError("eta must be at least 1");
    if (noise_variance < 0.0) throw ConfigError("noise_variance must be non-negative");
    if (grad_batch_budget < 0) throw ConfigError("grad_batch_budget must be positive");
}

ImportanceAccumulator::Entry* ImportanceAccumulator::find(const std::string& path) {
    for (auto& e : entries) {
        if (e.path == path) return &e;
    }
    return nullptr;
}

const ImportanceAccumulator::Entry* ImportanceAccumulator::find(const std::string& path) const {
    for (const auto& e : entries) {
        if (e.path == path) return &e;
    }
    return nullptr;
}

Tensor score_mag_weight(const Tensor& w) {
    Tensor s = Tensor::zeros(w.shape);
    for (std::size_t i = 0; i < w.size(); ++i) s.values[i] = std::fabs(w.values[i]);
    return s;
}

Tensor score_mag_grad(const Tensor& w, const Tensor& g) {
    if (!w.same_shape(g)) throw ShapeError("weight/gradient shape mismatch in mag_grad score");
    Tensor s = Tensor::zeros(w.shape);
    for (std::size_t i = 0; i < w.size(); ++i) s.values[i] = std::fabs(w.values[i] * g.values[i]);
    return s;
}

Tensor score_cam_shift(const Tensor& w, const Tensor& g, const std::vector<double>& a,
                       double lambda, bool relu_on_a) {
    if (!w.same_shape(g)) throw ShapeError("weight/gradient shape mismatch in cam score");
    if (w.rank() < 1 || w.rank() > 2 || w.shape[0] != a.size()) {
        throw ShapeError("activation vector length " + std::to_string(a.size()) +
                         " does not match tensor " + shape_str(w.shape));
    }
    Tensor s = Tensor::zeros(w.shape);
    const std::size_t cols = w.rank() == 2 ? w.shape[1] : 1;
    for (std::size_t i = 0; i < w.shape[0]; ++i) {
        const double ai = relu_on_a ? (a[i] > 0.0 ? a[i] : 0.0) : a[i];
        const double m = ai + lambda;
        for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t idx = i * cols + j;
            s.values[idx] = std::fabs(w.values[idx] * g.values[idx] * m);
        }
    }
    return s;
}

Tensor mean_gradient(const std::vector<Tensor>& grads) {
    if (grads.empty()) throw ValidationError("mean_gradient needs at least one gradient");
    Tensor mean = Tensor::zeros(grads[0].shape);
    for (const Tensor& g : grads) {
        if (!g.same_shape(mean)) throw ShapeError("gradient shapes differ in mean_gradient");
        for (std::size_t i = 0; i < mean.size(); ++i) mean.values[i] += g.values[i];
    }
    const double inv = static_cast<double>(grads.size());
    for (double& v : mean.values) v /= inv;
    return mean;
}

namespace {

std::vector<const Parameter*> prunable_params(const Model& model) {
    std::vector<const Parameter*> out;
    for (const Parameter* p : model.params()) {
        if (p->prunable) out.push_back(p);
    }
    return out;
}

// Gradient snapshot of the prunable parameters, cleared ahead of backward.
std::vector<Tensor> run_backward(Model& model, const Batch& batch, TaskHead head,
                                 const ForwardOptions& opts) {
    model.zero_grads();
    Tensor out = model.forward(batch, opts);
    LossResult loss = task_loss(out, batch, head);
    model.backward(loss.out_grad);
    std::vector<Tensor> grads;
    for (const Parameter* p : model.params()) {
        if (!p->prunable) continue;
        Tensor g;
        g.shape = p->tensor.shape;
        g.values = p->tensor.grad;
        grads.push_back(std::move(g));
    }
    return grads;
}

const std::vector<double>& cam_vector(const Model& model, const std::string& path) {
    const ActivationCache* cache = model.activation_cache_for(path);
    if (cache == nullptr || !cache->populated) {
        throw StateError("activation cache missing for " + path);
    }
    return cache->mean_preact;
}

}  // namespace

ImportanceAccumulator accumulate_scores(Model& model, const std::vector<Batch>& stream,
                                        const StrategyConfig& config, TaskHead head) {
    config.validate();
    ImportanceAccumulator acc;
    acc.config = config;

    const auto prunable = prunable_params(model);
    for (const Parameter* p : prunable) {
        acc.entries.push_back({p->path, p->kind, Tensor::zeros(p->tensor.shape)});
    }

    if (!strategy_uses_gradients(config.kind)) {
        for (std::size_t i = 0; i < prunable.size(); ++i) {
            acc.entries[i].scores = score_mag_weight(prunable[i]->tensor);
        }
        acc.batches_consumed = 0;
        return acc;
    }

    if (stream.empty()) {
        throw DataError("gradient-based strategy '" + std::string(strategy_name(config.kind)) +
                        "' needs a non-empty batch stream");
    }

    const std::size_t budget = static_cast<std::size_t>(config.resolved_budget());
    const std::size_t n_batches = std::min(stream.size(), budget);

    for (std::size_t bi = 0; bi < n_batches; ++bi) {
        const Batch& batch = stream[bi];
        std::vector<Tensor> grads;

        // CAM activations come from a clean cached forward of this batch.
        std::vector<std::vector<double>> cam;
        if (strategy_uses_cam(config.kind)) {
            // populated by the same forward that produces the gradient for
            // gradcam; smooth variants refresh it here noise-free first.
            ForwardOptions clean;
            clean.cache = true;
            if (!strategy_uses_noise(config.kind)) {
                grads = run_backward(model, batch, head, clean);
            } else {
                model.forward(batch, clean);
            }
            cam.reserve(prunable.size());
            for (const Parameter* p : prunable) cam.push_back(cam_vector(model, p->path));
        }

        if (strategy_uses_noise(config.kind)) {
            std::vector<std::vector<Tensor>> per_param(prunable.size());
            for (int path_i = 0; path_i < config.eta; ++path_i) {
                ForwardOptions noisy;
                noisy.noise.enabled = true;
                noisy.noise.variance = config.noise_variance;
                noisy.noise.seed = mix_seed(config.noise_seed, bi, static_cast<std::uint64_t>(path_i));
                auto g = run_backward(model, batch, head, noisy);
                for (std::size_t i = 0; i < prunable.size(); ++i) {
                    per_param[i].push_back(std::move(g[i]));
                }
            }
            grads.clear();
            for (auto& paths : per_param) grads.push_back(mean_gradient(paths));
        } else if (grads.empty()) {
            grads = run_backward(model, batch, head, ForwardOptions{});
        }

        for (std::size_t i = 0; i < prunable.size(); ++i) {
            Tensor batch_score =
                strategy_uses_cam(config.kind)
                    ? score_cam_shift(prunable[i]->tensor, grads[i], cam[i], config.lambda,
                                      config.relu_on_activation)
                    : score_mag_grad(prunable[i]->tensor, grads[i]);
            Tensor& total = acc.entries[i].scores;
            for (std::size_t j = 0; j < total.size(); ++j) total.values[j] += batch_score.values[j];
        }
        acc.batches_consumed += 1;
    }
    return acc;
}

void write_scores(const ImportanceAccumulator& acc, const std::string& file,
                  const std::string& config_hash) {
    std::vector<ContainerEntry> entries;
    entries.reserve(acc.entries.size());
    for (const auto& e : acc.entries) {
        ContainerEntry ce;
        ce.path = e.path;
        ce.kind = e.kind;
        ce.tensor.shape = e.scores.shape;
        ce.tensor.values = e.scores.values;
        entries.push_back(std::move(ce));
    }
    nlohmann::json j;
    j["strategy"] = strategy_name(acc.config.kind);
    j["lambda"] = acc.config.lambda;
    j["eta"] = acc.config.eta;
    j["noise_variance"] = acc.config.noise_variance;
    j["grad_batch_budget"] = acc.config.resolved_budget();
    j["relu_on_activation"] = acc.config.relu_on_activation;
    j["noise_seed"] = acc.config.noise_seed;
    j["batches_consumed"] = acc.batches_consumed;
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    write_container(file, "DCSCORE", entries, j.dump());
}

ImportanceAccumulator read_scores(const std::string& file, std::string* config_hash) {
    std::string trailer;
    const auto entries = read_container(file, "DCSCORE", &trailer);
    ImportanceAccumulator acc;
    for (const ContainerEntry& e : entries) {
        acc.entries.push_back({e.path, e.kind, e.tensor});
    }
    if (trailer.empty()) throw FormatError("score file " + file + " is missing its config trailer");
    nlohmann::json j = nlohmann::json::parse(trailer, nullptr, false);
    if (j.is_discarded()) throw FormatError("score file " + file + " has a corrupt config trailer");
    acc.config.kind = strategy_from_name(j.at("strategy").get<std::string>());
    acc.config.lambda = j.at("lambda").get<double>();
    acc.config.eta = j.at("eta").get<int>();
    acc.config.noise_variance = j.at("noise_variance").get<double>();
    acc.config.grad_batch_budget = j.at("grad_batch_budget").get<int>();
    acc.config.relu_on_activation = j.at("relu_on_activation").get<bool>();
    acc.config.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    acc.batches_consumed = j.at("batches_consumed").get<int>();
    if (config_hash != nullptr && j.contains("config_hash")) {
        *config_hash = j.at("config_hash").get<std::string>();
    }
    return acc;
}

}  // namespace deepcuts
