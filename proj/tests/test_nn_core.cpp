#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "deepcuts/finite_diff.hpp"
#include "deepcuts/io.hpp"
#include "deepcuts/layers.hpp"
#include "deepcuts/losses.hpp"
#include "deepcuts/model.hpp"
#include "deepcuts/nn_ops.hpp"
#include "deepcuts/rng.hpp"
#include "deepcuts/tasks.hpp"

#include "test_helpers.hpp"

using namespace deepcuts;

namespace {

Batch token_batch(std::vector<std::vector<int>> ids, std::vector<int> labels) {
    Batch b;
    b.token_ids = std::move(ids);
    for (auto& row : b.token_ids) b.segment_ids.emplace_back(row.size(), 0);
    b.class_labels = std::move(labels);
    return b;
}

ModelSpec tiny_miniformer(std::size_t n_layers, std::size_t d_model = 8) {
    ModelSpec spec;
    spec.arch = Arch::miniformer;
    spec.vocab_size = 16;
    spec.d_model = d_model;
    spec.n_layers = n_layers;
    spec.n_heads = 2;
    spec.d_ffn = 16;
    spec.max_seq_len = 8;
    spec.task_head = TaskHead::classifier;
    spec.n_classes = 2;
    return spec;
}

Dense unit_dense() {
    Dense d("layer", 2, 1, ParamKind::dense_weight, ParamKind::dense_bias, true);
    d.weight.tensor.values = {1.0, 2.0};
    d.bias.tensor.values = {0.0};
    return d;
}

}  // namespace

TEST_CASE("tensor shape and finiteness invariants") {
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
    t.values[4] = std::nan("");
    CHECK_THROWS_AS(t.validate_finite("t"), NumericError);
}

TEST_CASE("dense layer: single token hand example") {
    // W=[[1,2]], b=[0], x=[1,1] -> y=[3], cached a=[3]
    Dense d = unit_dense();
    std::vector<double> in = {1.0, 1.0};
    std::vector<double> out;
    d.forward(in, 1, out, true, nullptr);
    CHECK(out.size() == 1);
    CHECK(out[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(d.cache().populated);
    CHECK(d.cache().mean_preact[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(d.cache().token_count == 1);
}

TEST_CASE("dense layer: zero-variance noise degenerates to clean forward") {
    Dense d1 = unit_dense();
    Dense d2 = unit_dense();
    std::vector<double> in = {1.0, 1.0};
    std::vector<double> clean, noisy;
    d1.forward(in, 1, clean, false, nullptr);
    NoiseState st{Rng(7), 0.0, false};  // what make_noise_state builds for variance 0
    d2.forward(in, 1, noisy, false, &st);
    CHECK(clean == noisy);
}

TEST_CASE("dense layer: cache averages over all tokens") {
    // x1=[1,0], x2=[0,1], W=[[1,2]], b=[0] -> a = (1+2)/2 = 1.5
    Dense d = unit_dense();
    std::vector<double> in = {1.0, 0.0, 0.0, 1.0};
    std::vector<double> out;
    d.forward(in, 2, out, true, nullptr);
    CHECK(d.cache().mean_preact[0] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(d.cache().token_count == 2);
}

TEST_CASE("dense layer: cached mean equals brute-force recomputation") {
    Rng rng(11);
    Dense d("layer", 5, 3, ParamKind::dense_weight, ParamKind::dense_bias, true);
    for (double& v : d.weight.tensor.values) v = rng.next_gaussian();
    for (double& v : d.bias.tensor.values) v = rng.next_gaussian();
    const std::size_t rows = 7;
    std::vector<double> in(rows * 5);
    for (double& v : in) v = rng.next_gaussian();
    std::vector<double> out;
    d.forward(in, rows, out, true, nullptr);

    for (std::size_t o = 0; o < 3; ++o) {
        double mean = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            double acc = d.bias.tensor.values[o];
            for (std::size_t i = 0; i < 5; ++i) {
                acc += in[r * 5 + i] * d.weight.tensor.values[o * 5 + i];
            }
            mean += acc;
        }
        mean /= static_cast<double>(rows);
        CHECK(std::fabs(d.cache().mean_preact[o] - mean) < 1e-12);
    }
}

TEST_CASE("dense backward: w.x gradient and linearity exactness") {
    // loss = w . x with w=2, x=3 -> dloss/dw = 3
    Dense d("layer", 1, 1, ParamKind::dense_weight, ParamKind::dense_bias, true);
    d.weight.tensor.values = {2.0};
    d.bias.tensor.values = {0.0};
    std::vector<double> in = {3.0};
    std::vector<double> out;
    d.forward(in, 1, out, false, nullptr);
    CHECK(out[0] == 6.0);
    d.weight.tensor.zero_grad();
    d.bias.tensor.zero_grad();
    d.backward({1.0}, 1, nullptr);
    CHECK(d.weight.tensor.grad[0] == 3.0);
    CHECK(d.bias.tensor.grad[0] == 1.0);

    // central differences are exact (to rounding) for a linear map
    const double eps = 1e-5;
    auto loss_at = [&](double w) {
        Dense probe("p", 1, 1, ParamKind::dense_weight, ParamKind::dense_bias, true);
        probe.weight.tensor.values = {w};
        probe.bias.tensor.values = {0.0};
        std::vector<double> y;
        probe.forward(in, 1, y, false, nullptr);
        return y[0];
    };
    const double numeric = (loss_at(2.0 + eps) - loss_at(2.0 - eps)) / (2 * eps);
    CHECK(std::fabs(numeric - 3.0) / 3.0 < 1e-9);
}

TEST_CASE("cross entropy examples") {
    Tensor uniform = Tensor::from({1, 2}, {0.3, 0.3});
    CHECK(cross_entropy_loss(uniform, {0}).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor confident = Tensor::from({1, 2}, {20.0, -20.0});
    CHECK(cross_entropy_loss(confident, {0}).value < 1e-12);

    // logits=[1,0]: picking the logit-1 class costs ln(1+e) - 1, the other
    // ln(1+e)
    Tensor mixed = Tensor::from({1, 2}, {1.0, 0.0});
    const double expected = std::log(1.0 + std::exp(1.0)) - 1.0;
    CHECK(cross_entropy_loss(mixed, {0}).value == doctest::Approx(expected).epsilon(1e-12));
    CHECK(cross_entropy_loss(mixed, {1}).value ==
          doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-12));

    CHECK_THROWS_AS(cross_entropy_loss(mixed, {2}), ValidationError);
    CHECK_THROWS_AS(cross_entropy_loss(mixed, {-1}), ValidationError);
}

TEST_CASE("scaled sigmoid regression examples") {
    Tensor mid = Tensor::from({1, 1}, {0.0});
    CHECK(scaled_sigmoid_regression_loss(mid, {2.5}).value == doctest::Approx(0.0).epsilon(1e-12));

    Tensor big = Tensor::from({1, 1}, {100.0});
    CHECK(scaled_sigmoid_regression_loss(big, {5.0}).value < 1e-12);

    // raw=0, target=5 -> (2.5-5)^2 = 6.25; dz = 2*(2.5-5)*5*0.25 = -6.25
    LossResult r = scaled_sigmoid_regression_loss(mid, {5.0});
    CHECK(r.value == doctest::Approx(6.25).epsilon(1e-12));
    CHECK(r.out_grad.values[0] == doctest::Approx(-6.25).epsilon(1e-12));

    CHECK_THROWS_AS(scaled_sigmoid_regression_loss(mid, {5.1}), ValidationError);
    CHECK_THROWS_AS(scaled_sigmoid_regression_loss(mid, {-0.1}), ValidationError);
}

TEST_CASE("activation primitives") {
    CHECK(gelu(0.0) == 0.0);
    for (double x : {-3.0, -0.5, 0.0, 0.7, 4.0}) CHECK(relu(x) >= 0.0);
    // softmax rows sum to 1
    Rng rng(3);
    std::vector<double> row(9);
    for (double& v : row) v = rng.next_gaussian() * 4.0;
    softmax_row(row.data(), row.size());
    double sum = 0.0;
    for (double v : row) sum += v;
    CHECK(std::fabs(sum - 1.0) < 1e-12);
}

TEST_CASE("finite differences: 2-layer MLP with GELU") {
    ModelSpec spec;
    spec.arch = Arch::mlp;
    spec.mlp_widths = {10, 8, 6};
    spec.task_head = TaskHead::classifier;
    spec.n_classes = 2;
    auto model = make_model(spec, 21);
    testing::condition_for_grad_check(*model);
    Batch b = token_batch({{1, 4, 5, 9}, {3, 3, 7, 8}, {2, 6, 9, 9}}, {0, 1, 1});
    CHECK(finite_diff_check(*model, b, 1e-5) < 1e-4);
}

TEST_CASE("finite differences: miniformer 1 layer, d_model=8") {
    auto model = make_model(testing::grad_check_miniformer(1), 56);
    testing::condition_for_grad_check(*model);
    CHECK(finite_diff_check(*model, testing::grad_check_batch(), 1e-5) < 1e-4);
}

TEST_CASE("finite differences: miniformer 2 layers, d_model=8") {
    auto model = make_model(testing::grad_check_miniformer(2), 56);
    testing::condition_for_grad_check(*model);
    CHECK(finite_diff_check(*model, testing::grad_check_batch(), 1e-5) < 1e-4);
}

TEST_CASE("finite differences: miniformer regression head") {
    ModelSpec spec = testing::grad_check_miniformer(1);
    spec.task_head = TaskHead::scaled_sigmoid_regressor;
    auto model = make_model(spec, 61);
    testing::condition_for_grad_check(*model);
    Batch b;
    b.token_ids = {{1, 4, 6, 2, 9, 2}, {1, 8, 3, 2, 12, 2}};
    b.segment_ids = {{0, 0, 0, 0, 1, 1}, {0, 0, 0, 0, 1, 1}};
    b.float_labels = {3.25, 1.5};
    CHECK(finite_diff_check(*model, b, 1e-5) < 1e-4);
}

TEST_CASE("finite differences rejects oversized models") {
    auto model = make_model(ModelSpec{}, 1);  // default miniformer, ~44k params
    CHECK(model->n_total() < 50000);
    ModelSpec big;
    big.arch = Arch::mlp;
    big.mlp_widths = {300, 200, 100};
    auto big_model = make_model(big, 1);
    Batch b = token_batch({{1, 2}}, {0});
    CHECK_THROWS_AS(finite_diff_check(*big_model, b, 1e-5), ValidationError);
}

TEST_CASE("noise degeneration is bit-identical on the miniformer") {
    auto model = make_model(tiny_miniformer(2), 5);
    Batch b = token_batch({{1, 4, 5, 9}, {1, 3, 11, 6}}, {0, 1});
    Tensor clean = model->forward(b);

    ForwardOptions off;
    off.noise.enabled = false;
    off.noise.variance = 0.25;
    off.noise.seed = 99;
    Tensor disabled = model->forward(b, off);

    ForwardOptions zero;
    zero.noise.enabled = true;
    zero.noise.variance = 0.0;
    zero.noise.seed = 99;
    Tensor zerovar = model->forward(b, zero);

    CHECK(clean.values == disabled.values);
    CHECK(clean.values == zerovar.values);

    ForwardOptions on;
    on.noise.enabled = true;
    on.noise.variance = 0.01;
    on.noise.seed = 99;
    Tensor noisy = model->forward(b, on);
    CHECK(clean.values != noisy.values);

    // same noise seed -> same noisy output
    Tensor noisy2 = model->forward(b, on);
    CHECK(noisy.values == noisy2.values);
}

TEST_CASE("determinism: same seed gives identical outputs and gradients") {
    auto m1 = make_model(tiny_miniformer(2), 42);
    auto m2 = make_model(tiny_miniformer(2), 42);
    Batch b = token_batch({{1, 9, 9, 3}, {1, 2, 8, 15}}, {1, 0});
    Tensor o1 = m1->forward(b);
    Tensor o2 = m2->forward(b);
    CHECK(o1.values == o2.values);
    LossResult l1 = task_loss(o1, b, TaskHead::classifier);
    LossResult l2 = task_loss(o2, b, TaskHead::classifier);
    m1->zero_grads();
    m2->zero_grads();
    m1->backward(l1.out_grad);
    m2->backward(l2.out_grad);
    for (std::size_t i = 0; i < m1->params().size(); ++i) {
        CHECK(m1->params()[i]->tensor.grad == m2->params()[i]->tensor.grad);
    }
    // different seed -> different weights
    auto m3 = make_model(tiny_miniformer(2), 43);
    CHECK(m3->params()[0]->tensor.values != m1->params()[0]->tensor.values);
}

TEST_CASE("backward state errors") {
    auto model = make_model(tiny_miniformer(1), 3);
    Batch b = token_batch({{1, 5}}, {0});
    Tensor grad = Tensor::zeros({1, 2});
    CHECK_THROWS_AS(model->backward(grad), StateError);
    model->forward(b);
    model->backward(grad);
    CHECK_THROWS_AS(model->backward(grad), StateError);  // graph consumed
}

TEST_CASE("forward dimension errors") {
    auto model = make_model(tiny_miniformer(1), 3);
    Batch too_long = token_batch({{1, 2, 3, 4, 5, 6, 7, 8, 9}}, {0});
    CHECK_THROWS_AS(model->forward(too_long), ShapeError);
    Batch bad_id = token_batch({{1, 200}}, {0});
    CHECK_THROWS_AS(model->forward(bad_id), ShapeError);
}

TEST_CASE("parameter classification follows the prunable-layer policy") {
    auto model = make_model(ModelSpec{}, 7);
    for (const Parameter* p : model->params()) {
        const bool dense_kind =
            p->kind == ParamKind::dense_weight || p->kind == ParamKind::dense_bias;
        const bool in_encoder = p->path.rfind("encoder.", 0) == 0;
        CHECK(p->prunable == (dense_kind && in_encoder));
    }
    // default miniformer: 4 layers x 8416 prunable, 43682 total (259-token
    // vocab embeddings, LayerNorms and the head stay dense)
    CHECK(model->n_prunable() == 33664);
    CHECK(model->n_total() == 43682);
}

TEST_CASE("model spec validation") {
    ModelSpec bad = tiny_miniformer(1);
    bad.d_model = 9;  // not divisible by 2 heads
    CHECK_THROWS_AS(make_model(bad, 1), ConfigError);
    ModelSpec mlp;
    mlp.arch = Arch::mlp;
    mlp.mlp_widths = {8};
    CHECK_THROWS_AS(make_model(mlp, 1), ConfigError);
}

TEST_CASE("checkpoint round trip and corruption") {
    const std::string dir = std::filesystem::temp_directory_path() / "dc_nn_core_test";
    std::filesystem::create_directories(dir);
    const std::string file = dir + "/model.dcmodel";

    auto model = make_model(tiny_miniformer(1), 77);
    save_checkpoint(*model, file);

    auto other = make_model(tiny_miniformer(1), 78);
    CHECK(other->params()[0]->tensor.values != model->params()[0]->tensor.values);
    load_checkpoint(*other, file);
    for (std::size_t i = 0; i < model->params().size(); ++i) {
        CHECK(other->params()[i]->tensor.values == model->params()[i]->tensor.values);
    }

    std::string bytes = read_file_bytes(file);
    bytes[0] = 'X';
    const std::string corrupt = dir + "/corrupt.dcmodel";
    atomic_write_file(corrupt, bytes);
    CHECK_THROWS_AS(load_checkpoint(*other, corrupt), FormatError);

    const std::string truncated = dir + "/truncated.dcmodel";
    atomic_write_file(truncated, read_file_bytes(file).substr(0, 60));
    CHECK_THROWS_AS(load_checkpoint(*other, truncated), FormatError);
}

TEST_CASE("clone detaches values") {
    auto model = make_model(tiny_miniformer(1), 7);
    auto copy = model->clone();
    CHECK(copy->params()[0]->tensor.values == model->params()[0]->tensor.values);
    copy->params()[0]->tensor.values[0] += 1.0;
    CHECK(copy->params()[0]->tensor.values != model->params()[0]->tensor.values);
}
