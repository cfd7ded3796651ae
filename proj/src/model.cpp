#include "deepcuts/model.hpp"

#include <cmath>

#include "deepcuts/nn_ops.hpp"

namespace deepcuts {

const char* param_kind_name(ParamKind kind) {
    switch (kind) {
        case ParamKind::dense_weight: return "dense_weight";
        case ParamKind::dense_bias: return "dense_bias";
        case ParamKind::embedding: return "embedding";
        case ParamKind::layernorm_scale: return "layernorm_scale";
        case ParamKind::layernorm_shift: return "layernorm_shift";
        case ParamKind::head_weight: return "head_weight";
        case ParamKind::head_bias: return "head_bias";
    }
    return "unknown";
}

ParamKind param_kind_from_byte(std::uint8_t b) {
    if (b > 6) throw FormatError("unknown parameter kind byte " + std::to_string(b));
    return static_cast<ParamKind>(b);
}

void ModelSpec::validate() const {
    if (arch == Arch::miniformer) {
        if (vocab_size < 4) throw ConfigError("miniformer vocab_size must be at least 4");
        if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ffn < 1 || max_seq_len < 1) {
            throw ConfigError("miniformer dimensions must be at least 1");
        }
        if (d_model % n_heads != 0) {
            throw ConfigError("d_model " + std::to_string(d_model) +
                              " is not divisible by n_heads " + std::to_string(n_heads));
        }
    } else {
        if (mlp_widths.size() < 2) throw ConfigError("mlp needs an input width and at least one hidden width");
        for (std::size_t w : mlp_widths) {
            if (w == 0) throw ConfigError("mlp widths must be positive");
        }
    }
    if (task_head == TaskHead::classifier && n_classes < 2) {
        throw ConfigError("classifier head needs at least 2 classes");
    }
}

void Model::register_param(Parameter* p) {
    if (by_path_.count(p->path)) throw StateError("duplicate parameter path " + p->path);
    params_.push_back(p);
    by_path_[p->path] = p;
}

void Model::register_dense(Dense* d) {
    register_param(&d->weight);
    register_param(&d->bias);
    dense_by_param_[d->weight.path] = d;
    dense_by_param_[d->bias.path] = d;
}

Parameter* Model::find_param(const std::string& path) {
    auto it = by_path_.find(path);
    return it == by_path_.end() ? nullptr : it->second;
}

const Parameter* Model::find_param(const std::string& path) const {
    auto it = by_path_.find(path);
    return it == by_path_.end() ? nullptr : it->second;
}

std::size_t Model::n_total() const {
    std::size_t n = 0;
    for (const Parameter* p : params_) n += p->tensor.size();
    return n;
}

std::size_t Model::n_prunable() const {
    std::size_t n = 0;
    for (const Parameter* p : params_) {
        if (p->prunable) n += p->tensor.size();
    }
    return n;
}

void Model::zero_grads() {
    for (Parameter* p : params_) p->tensor.zero_grad();
}

void Model::init_params(std::uint64_t seed) {
    Rng rng(seed);
    constexpr double kInitStd = 0.02;
    for (Parameter* p : params_) {
        switch (p->kind) {
            case ParamKind::dense_weight:
            case ParamKind::head_weight:
            case ParamKind::embedding:
                for (double& v : p->tensor.values) v = rng.next_truncated_gaussian(kInitStd);
                break;
            case ParamKind::layernorm_scale:
                for (double& v : p->tensor.values) v = 1.0;
                break;
            case ParamKind::dense_bias:
            case ParamKind::head_bias:
            case ParamKind::layernorm_shift:
                for (double& v : p->tensor.values) v = 0.0;
                break;
        }
    }
}

NoiseState Model::make_noise_state(const NoiseSpec& noise) const {
    NoiseState st{Rng(noise.seed), 0.0, false};
    if (noise.enabled && noise.variance > 0.0) {
        if (noise.variance < 0.0) throw ValidationError("noise variance must be non-negative");
        st.stddev = std::sqrt(noise.variance);
        st.active = true;
    }
    if (noise.variance < 0.0) throw ValidationError("noise variance must be non-negative");
    return st;
}

std::unique_ptr<Model> Model::clone() const {
    auto copy = make_model(spec_, 0);
    const auto& src = params();
    const auto& dst = copy->params();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i]->tensor.values = src[i]->tensor.values;
    }
    return copy;
}

namespace {

const ActivationCache* cache_lookup(
    const std::unordered_map<std::string, Dense*>& map, const std::string& path) {
    auto it = map.find(path);
    if (it == map.end()) return nullptr;
    return &it->second->cache();
}

// ---------------------------------------------------------------------------
// MLP: bag-of-token-count features -> [dense, GELU]* -> head.
// ---------------------------------------------------------------------------
class MlpModel final : public Model {
public:
    MlpModel(ModelSpec spec, std::uint64_t seed) : Model(std::move(spec)) {
        const auto& w = spec_.mlp_widths;
        for (std::size_t i = 0; i + 1 < w.size(); ++i) {
            hidden_.push_back(std::make_unique<Dense>(
                "encoder.fc" + std::to_string(i), w[i], w[i + 1],
                ParamKind::dense_weight, ParamKind::dense_bias, /*prunable=*/true));
        }
        head_ = std::make_unique<Dense>("head", w.back(), spec_.head_outputs(),
                                        ParamKind::head_weight, ParamKind::head_bias,
                                        /*prunable=*/false);
        for (auto& d : hidden_) register_dense_local(d.get());
        register_dense_local(head_.get());
        init_params(seed);
    }

    Tensor forward(const Batch& batch, const ForwardOptions& opts) override {
        const std::size_t b_sz = batch.size();
        if (b_sz == 0) throw ShapeError("empty batch");
        featurize(batch);
        NoiseState noise = make_noise_state(opts.noise);
        NoiseState* np = noise.active ? &noise : nullptr;

        acts_.resize(hidden_.size() + 1);
        preacts_.resize(hidden_.size());
        acts_[0] = feat_;
        for (std::size_t i = 0; i < hidden_.size(); ++i) {
            hidden_[i]->forward(acts_[i], b_sz, preacts_[i], opts.cache, np);
            acts_[i + 1].resize(preacts_[i].size());
            for (std::size_t j = 0; j < preacts_[i].size(); ++j) {
                acts_[i + 1][j] = gelu(preacts_[i][j]);
            }
        }
        std::vector<double> out;
        head_->forward(acts_.back(), b_sz, out, opts.cache, np);
        rows_ = b_sz;
        graph_ready_ = true;
        Tensor result = Tensor::from({b_sz, spec_.head_outputs()}, std::move(out));
        result.validate_finite("mlp output");
        return result;
    }

    void backward(const Tensor& out_grad) override {
        if (!graph_ready_) throw StateError("backward called without a forward pass");
        if (out_grad.shape != std::vector<std::size_t>{rows_, spec_.head_outputs()}) {
            throw ShapeError("output gradient shape " + shape_str(out_grad.shape) +
                             " does not match forward output");
        }
        graph_ready_ = false;
        std::vector<double> dx;
        head_->backward(out_grad.values, rows_, &dx);
        for (std::size_t i = hidden_.size(); i-- > 0;) {
            for (std::size_t j = 0; j < dx.size(); ++j) dx[j] *= gelu_grad(preacts_[i][j]);
            std::vector<double> dprev;
            hidden_[i]->backward(dx, rows_, i == 0 ? nullptr : &dprev);
            if (i > 0) dx = std::move(dprev);
        }
    }

    const ActivationCache* activation_cache_for(const std::string& path) const override {
        return cache_lookup(dense_map_, path);
    }

private:
    void register_dense_local(Dense* d) {
        register_dense(d);
        dense_map_[d->weight.path] = d;
        dense_map_[d->bias.path] = d;
    }

    // Normalized token-count histogram over the input width; PAD excluded.
    void featurize(const Batch& batch) {
        const std::size_t dim = spec_.mlp_widths[0];
        feat_.assign(batch.size() * dim, 0.0);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            double n = 0;
            for (int id : batch.token_ids[b]) {
                if (id == 0) continue;  // PAD
                if (id < 0 || static_cast<std::size_t>(id) >= dim) {
                    throw ShapeError("token id " + std::to_string(id) +
                                     " outside mlp input width " + std::to_string(dim));
                }
                feat_[b * dim + static_cast<std::size_t>(id)] += 1.0;
                n += 1.0;
            }
            if (n > 0) {
                for (std::size_t j = 0; j < dim; ++j) feat_[b * dim + j] /= n;
            }
        }
    }

    std::vector<std::unique_ptr<Dense>> hidden_;
    std::unique_ptr<Dense> head_;
    std::unordered_map<std::string, Dense*> dense_map_;

    std::vector<double> feat_;
    std::vector<std::vector<double>> acts_;     // post-activation inputs per layer
    std::vector<std::vector<double>> preacts_;  // dense outputs before GELU
    std::size_t rows_ = 0;
};

// ---------------------------------------------------------------------------
// Miniformer: BERT-shaped encoder at desk scale. Token + learned position +
// segment embeddings, post-LN blocks, CLS pooling, linear task head.
// ---------------------------------------------------------------------------
struct EncoderBlock {
    EncoderBlock(const std::string& prefix, std::size_t d_model, std::size_t d_ffn)
        : q(prefix + ".attn.q_proj", d_model, d_model, ParamKind::dense_weight, ParamKind::dense_bias, true),
          k(prefix + ".attn.k_proj", d_model, d_model, ParamKind::dense_weight, ParamKind::dense_bias, true),
          v(prefix + ".attn.v_proj", d_model, d_model, ParamKind::dense_weight, ParamKind::dense_bias, true),
          o(prefix + ".attn.o_proj", d_model, d_model, ParamKind::dense_weight, ParamKind::dense_bias, true),
          ln1(prefix + ".ln1", d_model),
          fc1(prefix + ".ffn.fc1", d_model, d_ffn, ParamKind::dense_weight, ParamKind::dense_bias, true),
          fc2(prefix + ".ffn.fc2", d_ffn, d_model, ParamKind::dense_weight, ParamKind::dense_bias, true),
          ln2(prefix + ".ln2", d_model) {}

    Dense q, k, v, o;
    LayerNorm ln1;
    Dense fc1, fc2;
    LayerNorm ln2;

    // saved activations for backward
    std::vector<double> qv, kv, vv;   // projections, rows x d_model
    std::vector<double> probs;        // B x H x T x T attention weights
    std::vector<double> ctx;          // attention context, rows x d_model
    std::vector<double> ffn_pre;      // fc1 output before GELU
    std::vector<double> resid1;       // x + attn_out
    std::vector<double> ln1_out;
    std::vector<double> resid2;
    std::vector<double> block_out;
};

class MiniformerModel final : public Model {
public:
    MiniformerModel(ModelSpec spec, std::uint64_t seed) : Model(std::move(spec)) {
        tok_.path = "embed.token.weight";
        tok_.tensor = Tensor::zeros({spec_.vocab_size, spec_.d_model});
        tok_.kind = ParamKind::embedding;
        pos_.path = "embed.position.weight";
        pos_.tensor = Tensor::zeros({spec_.max_seq_len, spec_.d_model});
        pos_.kind = ParamKind::embedding;
        seg_.path = "embed.segment.weight";
        seg_.tensor = Tensor::zeros({2, spec_.d_model});
        seg_.kind = ParamKind::embedding;
        emb_ln_ = std::make_unique<LayerNorm>("embed.ln", spec_.d_model);
        register_param(&tok_);
        register_param(&pos_);
        register_param(&seg_);
        register_param(&emb_ln_->scale);
        register_param(&emb_ln_->shift);
        for (std::size_t l = 0; l < spec_.n_layers; ++l) {
            blocks_.push_back(std::make_unique<EncoderBlock>(
                "encoder.layer" + std::to_string(l), spec_.d_model, spec_.d_ffn));
            EncoderBlock& blk = *blocks_.back();
            register_dense_local(&blk.q);
            register_dense_local(&blk.k);
            register_dense_local(&blk.v);
            register_dense_local(&blk.o);
            register_param(&blk.ln1.scale);
            register_param(&blk.ln1.shift);
            register_dense_local(&blk.fc1);
            register_dense_local(&blk.fc2);
            register_param(&blk.ln2.scale);
            register_param(&blk.ln2.shift);
        }
        head_ = std::make_unique<Dense>("head", spec_.d_model, spec_.head_outputs(),
                                        ParamKind::head_weight, ParamKind::head_bias, false);
        register_dense_local(head_.get());
        init_params(seed);
    }

    Tensor forward(const Batch& batch, const ForwardOptions& opts) override {
        const std::size_t B = batch.size();
        if (B == 0) throw ShapeError("empty batch");
        const std::size_t T = batch.seq_len();
        if (T == 0) throw ShapeError("empty sequence");
        if (T > spec_.max_seq_len) {
            throw ShapeError("sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                             std::to_string(spec_.max_seq_len));
        }
        const std::size_t D = spec_.d_model;
        B_ = B;
        T_ = T;
        tokens_ = batch.token_ids;
        segments_ = batch.segment_ids;

        NoiseState noise = make_noise_state(opts.noise);
        NoiseState* np = noise.active ? &noise : nullptr;

        // Embedding sum + LayerNorm.
        const std::size_t rows = B * T;
        emb_sum_.assign(rows * D, 0.0);
        for (std::size_t b = 0; b < B; ++b) {
            if (batch.token_ids[b].size() != T || batch.segment_ids[b].size() != T) {
                throw ShapeError("ragged batch: all sequences must share one padded length");
            }
            for (std::size_t t = 0; t < T; ++t) {
                const int id = batch.token_ids[b][t];
                const int sg = batch.segment_ids[b][t];
                if (id < 0 || static_cast<std::size_t>(id) >= spec_.vocab_size) {
                    throw ShapeError("token id " + std::to_string(id) + " outside vocab of size " +
                                     std::to_string(spec_.vocab_size));
                }
                if (sg < 0 || sg > 1) throw ShapeError("segment id must be 0 or 1");
                double* row = emb_sum_.data() + (b * T + t) * D;
                const double* te = tok_.tensor.values.data() + static_cast<std::size_t>(id) * D;
                const double* pe = pos_.tensor.values.data() + t * D;
                const double* se = seg_.tensor.values.data() + static_cast<std::size_t>(sg) * D;
                for (std::size_t j = 0; j < D; ++j) row[j] = te[j] + pe[j] + se[j];
            }
        }
        emb_ln_->forward(emb_sum_, rows, x0_);

        const std::vector<double>* x = &x0_;
        for (auto& blk : blocks_) {
            forward_block(*blk, *x, rows, opts.cache, np);
            x = &blk->block_out;
        }

        // CLS pooling: the position-0 representation feeds the head.
        pooled_.resize(B * D);
        for (std::size_t b = 0; b < B; ++b) {
            const double* src = x->data() + (b * T) * D;
            std::copy(src, src + D, pooled_.begin() + static_cast<std::ptrdiff_t>(b * D));
        }
        std::vector<double> out;
        head_->forward(pooled_, B, out, opts.cache, np);
        graph_ready_ = true;
        Tensor result = Tensor::from({B, spec_.head_outputs()}, std::move(out));
        result.validate_finite("miniformer head output");
        return result;
    }

    void backward(const Tensor& out_grad) override {
        if (!graph_ready_) throw StateError("backward called without a forward pass");
        if (out_grad.shape != std::vector<std::size_t>{B_, spec_.head_outputs()}) {
            throw ShapeError("output gradient shape " + shape_str(out_grad.shape) +
                             " does not match forward output");
        }
        graph_ready_ = false;
        const std::size_t D = spec_.d_model;
        const std::size_t rows = B_ * T_;

        std::vector<double> dpooled;
        head_->backward(out_grad.values, B_, &dpooled);

        std::vector<double> dx(rows * D, 0.0);
        for (std::size_t b = 0; b < B_; ++b) {
            double* dst = dx.data() + (b * T_) * D;
            const double* src = dpooled.data() + b * D;
            for (std::size_t j = 0; j < D; ++j) dst[j] += src[j];
        }

        for (std::size_t l = blocks_.size(); l-- > 0;) {
            backward_block(*blocks_[l], rows, dx);
        }

        std::vector<double> demb;
        emb_ln_->backward(dx, rows, demb);

        tok_.tensor.ensure_grad();
        pos_.tensor.ensure_grad();
        seg_.tensor.ensure_grad();
        for (std::size_t b = 0; b < B_; ++b) {
            for (std::size_t t = 0; t < T_; ++t) {
                const double* g = demb.data() + (b * T_ + t) * D;
                double* tg = tok_.tensor.grad.data() +
                             static_cast<std::size_t>(tokens_[b][t]) * D;
                double* pg = pos_.tensor.grad.data() + t * D;
                double* sg = seg_.tensor.grad.data() +
                             static_cast<std::size_t>(segments_[b][t]) * D;
                for (std::size_t j = 0; j < D; ++j) {
                    tg[j] += g[j];
                    pg[j] += g[j];
                    sg[j] += g[j];
                }
            }
        }
    }

    const ActivationCache* activation_cache_for(const std::string& path) const override {
        return cache_lookup(dense_map_, path);
    }

private:
    void register_dense_local(Dense* d) {
        register_dense(d);
        dense_map_[d->weight.path] = d;
        dense_map_[d->bias.path] = d;
    }

    void forward_block(EncoderBlock& blk, const std::vector<double>& x, std::size_t rows,
                       bool cache, NoiseState* noise) {
        const std::size_t D = spec_.d_model;
        const std::size_t H = spec_.n_heads;
        const std::size_t dh = D / H;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

        blk.q.forward(x, rows, blk.qv, cache, noise);
        blk.k.forward(x, rows, blk.kv, cache, noise);
        blk.v.forward(x, rows, blk.vv, cache, noise);

        blk.probs.assign(B_ * H * T_ * T_, 0.0);
        blk.ctx.assign(rows * D, 0.0);
        std::vector<double> srow(T_);
        for (std::size_t b = 0; b < B_; ++b) {
            for (std::size_t h = 0; h < H; ++h) {
                double* probs = blk.probs.data() + ((b * H + h) * T_) * T_;
                for (std::size_t i = 0; i < T_; ++i) {
                    const double* qr = blk.qv.data() + (b * T_ + i) * D + h * dh;
                    for (std::size_t j = 0; j < T_; ++j) {
                        const double* kr = blk.kv.data() + (b * T_ + j) * D + h * dh;
                        double acc = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) acc += qr[c] * kr[c];
                        // PAD keys are excluded from attention.
                        srow[j] = tokens_[b][j] == 0 ? -1e9 : acc * scale;
                    }
                    softmax_row(srow.data(), T_);
                    double* prow = probs + i * T_;
                    std::copy(srow.begin(), srow.end(), prow);
                    double* crow = blk.ctx.data() + (b * T_ + i) * D + h * dh;
                    for (std::size_t j = 0; j < T_; ++j) {
                        const double p = prow[j];
                        if (p == 0.0) continue;
                        const double* vr = blk.vv.data() + (b * T_ + j) * D + h * dh;
                        for (std::size_t c = 0; c < dh; ++c) crow[c] += p * vr[c];
                    }
                }
            }
        }

        std::vector<double> attn_out;
        blk.o.forward(blk.ctx, rows, attn_out, cache, noise);

        blk.resid1.resize(rows * D);
        for (std::size_t i = 0; i < rows * D; ++i) blk.resid1[i] = x[i] + attn_out[i];
        blk.ln1.forward(blk.resid1, rows, blk.ln1_out);

        blk.fc1.forward(blk.ln1_out, rows, blk.ffn_pre, cache, noise);
        std::vector<double> act(blk.ffn_pre.size());
        for (std::size_t i = 0; i < act.size(); ++i) act[i] = gelu(blk.ffn_pre[i]);
        std::vector<double> ffn_out;
        blk.fc2.forward(act, rows, ffn_out, cache, noise);

        blk.resid2.resize(rows * D);
        for (std::size_t i = 0; i < rows * D; ++i) blk.resid2[i] = blk.ln1_out[i] + ffn_out[i];
        blk.ln2.forward(blk.resid2, rows, blk.block_out);
    }

    // dx holds d(block output) on entry and d(block input) on exit.
    void backward_block(EncoderBlock& blk, std::size_t rows, std::vector<double>& dx) {
        const std::size_t D = spec_.d_model;
        const std::size_t H = spec_.n_heads;
        const std::size_t dh = D / H;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

        std::vector<double> dresid2;
        blk.ln2.backward(dx, rows, dresid2);

        std::vector<double> dact;
        blk.fc2.backward(dresid2, rows, &dact);
        for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= gelu_grad(blk.ffn_pre[i]);
        std::vector<double> dln1;
        blk.fc1.backward(dact, rows, &dln1);
        for (std::size_t i = 0; i < rows * D; ++i) dln1[i] += dresid2[i];

        std::vector<double> dresid1;
        blk.ln1.backward(dln1, rows, dresid1);

        std::vector<double> dctx;
        blk.o.backward(dresid1, rows, &dctx);

        std::vector<double> dq(rows * D, 0.0), dk(rows * D, 0.0), dv(rows * D, 0.0);
        std::vector<double> dprow(T_), dsrow(T_);
        for (std::size_t b = 0; b < B_; ++b) {
            for (std::size_t h = 0; h < H; ++h) {
                const double* probs = blk.probs.data() + ((b * H + h) * T_) * T_;
                for (std::size_t i = 0; i < T_; ++i) {
                    const double* dcr = dctx.data() + (b * T_ + i) * D + h * dh;
                    const double* prow = probs + i * T_;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < T_; ++j) {
                        const double* vr = blk.vv.data() + (b * T_ + j) * D + h * dh;
                        double acc = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) acc += dcr[c] * vr[c];
                        dprow[j] = acc;
                        dot += acc * prow[j];
                        if (prow[j] != 0.0) {
                            double* dvr = dv.data() + (b * T_ + j) * D + h * dh;
                            for (std::size_t c = 0; c < dh; ++c) dvr[c] += prow[j] * dcr[c];
                        }
                    }
                    for (std::size_t j = 0; j < T_; ++j) {
                        dsrow[j] = prow[j] * (dprow[j] - dot);
                    }
                    double* dqr = dq.data() + (b * T_ + i) * D + h * dh;
                    for (std::size_t j = 0; j < T_; ++j) {
                        const double ds = dsrow[j] * scale;
                        if (ds == 0.0) continue;
                        const double* kr = blk.kv.data() + (b * T_ + j) * D + h * dh;
                        double* dkr = dk.data() + (b * T_ + j) * D + h * dh;
                        const double* qr = blk.qv.data() + (b * T_ + i) * D + h * dh;
                        for (std::size_t c = 0; c < dh; ++c) {
                            dqr[c] += ds * kr[c];
                            dkr[c] += ds * qr[c];
                        }
                    }
                }
            }
        }

        std::vector<double> dxq, dxk, dxv;
        blk.q.backward(dq, rows, &dxq);
        blk.k.backward(dk, rows, &dxk);
        blk.v.backward(dv, rows, &dxv);

        // d(block input) = residual path + the three projection paths.
        for (std::size_t i = 0; i < rows * D; ++i) {
            dx[i] = dresid1[i] + dxq[i] + dxk[i] + dxv[i];
        }
    }

    Parameter tok_, pos_, seg_;
    std::unique_ptr<LayerNorm> emb_ln_;
    std::vector<std::unique_ptr<EncoderBlock>> blocks_;
    std::unique_ptr<Dense> head_;
    std::unordered_map<std::string, Dense*> dense_map_;

    std::size_t B_ = 0, T_ = 0;
    std::vector<std::vector<int>> tokens_, segments_;
    std::vector<double> emb_sum_, x0_, pooled_;
};

}  // namespace

std::unique_ptr<Model> make_model(const ModelSpec& spec, std::uint64_t init_seed) {
    spec.validate();
    if (spec.arch == Arch::mlp) return std::make_unique<MlpModel>(spec, init_seed);
    return std::make_unique<MiniformerModel>(spec, init_seed);
}

}  // namespace deepcuts
