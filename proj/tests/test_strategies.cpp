#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "deepcuts/losses.hpp"
#include "deepcuts/rng.hpp"
#include "deepcuts/strategies.hpp"
#include "deepcuts/tasks.hpp"

using namespace deepcuts;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.values) v = rng.next_gaussian();
    return t;
}

std::vector<std::size_t> rank_order(const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

struct Fixture {
    ModelSpec spec;
    Dataset dataset;
    std::vector<Batch> stream;

    Fixture() {
        TaskSpec task;
        task.kind = TaskKind::planted_classify;
        task.train_size = 48;
        task.val_size = 8;
        task.vocab = 12;
        task.seq_len = 6;
        task.seed = 21;
        dataset = make_task(task);

        spec.arch = Arch::miniformer;
        spec.vocab_size = dataset.model_vocab();
        spec.d_model = 8;
        spec.n_layers = 1;
        spec.n_heads = 2;
        spec.d_ffn = 16;
        spec.max_seq_len = 8;
        stream = batches(dataset.train, 8, 3, dataset.regression);
    }
};

StrategyConfig config_of(StrategyKind kind, int budget = 0) {
    StrategyConfig c;
    c.kind = kind;
    c.grad_batch_budget = budget;
    return c;
}

}  // namespace

TEST_CASE("mag weight score") {
    Tensor w = Tensor::from({3}, {-2.0, 0.5, 1.0});
    CHECK(score_mag_weight(w).values == std::vector<double>{2.0, 0.5, 1.0});

    Tensor zeros = Tensor::zeros({4});
    CHECK(score_mag_weight(zeros).values == std::vector<double>{0, 0, 0, 0});

    Rng rng(5);
    Tensor r = random_tensor({6, 3}, rng);
    Tensor s = score_mag_weight(r);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(s.values[i] == std::fabs(r.values[i]));
}

TEST_CASE("mag grad score") {
    Tensor w = Tensor::from({2}, {1.0, -2.0});
    Tensor g = Tensor::from({2}, {0.1, 0.1});
    Tensor s = score_mag_grad(w, g);
    CHECK(s.values[0] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(s.values[1] == doctest::Approx(0.2).epsilon(1e-15));

    Tensor gz = Tensor::from({2}, {0.0, 1.0});
    CHECK(score_mag_grad(w, gz).values[0] == 0.0);

    Rng rng(6);
    Tensor rw = random_tensor({3, 3}, rng);
    Tensor rg = random_tensor({3, 3}, rng);
    Tensor rs = score_mag_grad(rw, rg);
    for (std::size_t i = 0; i < rw.size(); ++i) {
        CHECK(rs.values[i] == std::fabs(rw.values[i] * rg.values[i]));
    }

    CHECK_THROWS_AS(score_mag_grad(rw, Tensor::zeros({2, 2})), ShapeError);
}

TEST_CASE("cam shift score: hand example from the dense layer") {
    // W=[[1,2]], b=[0], x=[1,1] -> a=[3]; G=[[0.1,-0.2]]; lambda=10
    Tensor w = Tensor::from({1, 2}, {1.0, 2.0});
    Tensor g = Tensor::from({1, 2}, {0.1, -0.2});
    Tensor s = score_cam_shift(w, g, {3.0}, 10.0, false);
    CHECK(s.values[0] == doctest::Approx(1.3).epsilon(1e-15));
    CHECK(s.values[1] == doctest::Approx(5.2).epsilon(1e-15));

    // lambda=0 with a=0 kills every score
    Tensor dead = score_cam_shift(w, g, {0.0}, 0.0, false);
    CHECK(dead.values == std::vector<double>{0.0, 0.0});

    // bias path: rank-1 tensors use the same formula
    Tensor b = Tensor::from({1}, {0.5});
    Tensor gb = Tensor::from({1}, {-0.4});
    CHECK(score_cam_shift(b, gb, {3.0}, 10.0, false).values[0] ==
          doctest::Approx(0.5 * 0.4 * 13.0).epsilon(1e-15));

    // relu-on-activation ablation clamps a negative CAM term
    Tensor relu_s = score_cam_shift(w, g, {-3.0}, 0.0, true);
    CHECK(relu_s.values == std::vector<double>{0.0, 0.0});

    CHECK_THROWS_AS(score_cam_shift(w, g, {1.0, 2.0}, 10.0, false), ShapeError);
}

TEST_CASE("cam shift score: per-row ranking matches mag_grad for any positive row factor") {
    Rng rng(17);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor w = random_tensor({4, 6}, rng);
        Tensor g = random_tensor({4, 6}, rng);
        std::vector<double> a(4);
        for (double& v : a) v = rng.next_double() * 2.0 - 1.0;  // a+10 > 0
        Tensor cam = score_cam_shift(w, g, a, 10.0, false);
        Tensor mg = score_mag_grad(w, g);
        for (std::size_t row = 0; row < 4; ++row) {
            std::vector<double> cam_row(cam.values.begin() + row * 6,
                                        cam.values.begin() + (row + 1) * 6);
            std::vector<double> mg_row(mg.values.begin() + row * 6,
                                       mg.values.begin() + (row + 1) * 6);
            CHECK(rank_order(cam_row) == rank_order(mg_row));
        }
    }
}

TEST_CASE("cam shift score: lambda -> infinity recovers the mag_grad ranking") {
    Rng rng(23);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor w = random_tensor({5, 4}, rng);
        Tensor g = random_tensor({5, 4}, rng);
        std::vector<double> a(5);
        for (double& v : a) v = rng.next_double() * 2.0 - 1.0;
        Tensor cam = score_cam_shift(w, g, a, 1e9, false);
        Tensor mg = score_mag_grad(w, g);
        CHECK(rank_order(cam.values) == rank_order(mg.values));
    }
}

TEST_CASE("smoothgrad mean: cancellation happens before the product") {
    Tensor w = Tensor::from({1}, {5.0});
    std::vector<Tensor> grads;
    grads.push_back(Tensor::from({1}, {1.0}));
    grads.push_back(Tensor::from({1}, {-1.0}));
    Tensor mean = mean_gradient(grads);
    CHECK(mean.values[0] == 0.0);
    CHECK(score_mag_grad(w, mean).values[0] == 0.0);
    CHECK_THROWS_AS(mean_gradient({}), ValidationError);
}

TEST_CASE("accumulate: magnitude kinds consume zero batches") {
    Fixture fx;
    auto model = make_model(fx.spec, 31);
    for (StrategyKind kind : {StrategyKind::layer_mag_weight, StrategyKind::global_mag_weight}) {
        ImportanceAccumulator acc =
            accumulate_scores(*model, fx.stream, config_of(kind), fx.dataset.head());
        CHECK(acc.batches_consumed == 0);
        std::size_t prunable_seen = 0;
        for (const Parameter* p : model->params()) {
            if (!p->prunable) {
                CHECK(acc.find(p->path) == nullptr);
                continue;
            }
            ++prunable_seen;
            const auto* e = acc.find(p->path);
            REQUIRE(e != nullptr);
            for (std::size_t i = 0; i < p->tensor.size(); ++i) {
                CHECK(e->scores.values[i] == std::fabs(p->tensor.values[i]));
            }
        }
        CHECK(acc.entries.size() == prunable_seen);
    }
    // magnitude scoring works even with no data
    CHECK_NOTHROW(accumulate_scores(*model, {}, config_of(StrategyKind::layer_mag_weight),
                                    fx.dataset.head()));
}

TEST_CASE("accumulate: gradient kinds need data and respect the budget") {
    Fixture fx;
    auto model = make_model(fx.spec, 31);
    CHECK_THROWS_AS(accumulate_scores(*model, {}, config_of(StrategyKind::layer_mag_grad),
                                      fx.dataset.head()),
                    DataError);
    ImportanceAccumulator acc = accumulate_scores(
        *model, fx.stream, config_of(StrategyKind::layer_mag_grad, 2), fx.dataset.head());
    CHECK(acc.batches_consumed == 2);
    ImportanceAccumulator all = accumulate_scores(
        *model, fx.stream, config_of(StrategyKind::layer_mag_grad), fx.dataset.head());
    CHECK(all.batches_consumed == static_cast<int>(fx.stream.size()));
}

TEST_CASE("accumulate: identical batches add identical scores") {
    Fixture fx;
    auto model = make_model(fx.spec, 31);
    std::vector<Batch> twice = {fx.stream[0], fx.stream[0]};
    std::vector<Batch> once = {fx.stream[0]};
    ImportanceAccumulator two =
        accumulate_scores(*model, twice, config_of(StrategyKind::layer_mag_grad), fx.dataset.head());
    ImportanceAccumulator one =
        accumulate_scores(*model, once, config_of(StrategyKind::layer_mag_grad), fx.dataset.head());
    for (std::size_t e = 0; e < two.entries.size(); ++e) {
        for (std::size_t i = 0; i < two.entries[e].scores.size(); ++i) {
            CHECK(two.entries[e].scores.values[i] ==
                  doctest::Approx(2.0 * one.entries[e].scores.values[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("accumulate: additivity over a split stream") {
    Fixture fx;
    auto model = make_model(fx.spec, 31);
    std::vector<Batch> b1(fx.stream.begin(), fx.stream.begin() + 2);
    std::vector<Batch> b2(fx.stream.begin() + 2, fx.stream.end());
    ImportanceAccumulator whole =
        accumulate_scores(*model, fx.stream, config_of(StrategyKind::layer_gradcam_shift),
                          fx.dataset.head());
    ImportanceAccumulator part1 = accumulate_scores(
        *model, b1, config_of(StrategyKind::layer_gradcam_shift), fx.dataset.head());
    ImportanceAccumulator part2 = accumulate_scores(
        *model, b2, config_of(StrategyKind::layer_gradcam_shift), fx.dataset.head());
    CHECK(whole.batches_consumed == part1.batches_consumed + part2.batches_consumed);
    for (std::size_t e = 0; e < whole.entries.size(); ++e) {
        for (std::size_t i = 0; i < whole.entries[e].scores.size(); ++i) {
            const double sum = part1.entries[e].scores.values[i] + part2.entries[e].scores.values[i];
            CHECK(whole.entries[e].scores.values[i] == doctest::Approx(sum).epsilon(1e-12));
        }
    }
}

TEST_CASE("accumulate: scripted per-batch oracle for layer_mag_grad") {
    Fixture fx;
    auto model = make_model(fx.spec, 37);
    std::vector<Batch> toy(fx.stream.begin(), fx.stream.begin() + 3);
    ImportanceAccumulator acc =
        accumulate_scores(*model, toy, config_of(StrategyKind::layer_mag_grad), fx.dataset.head());

    // independent re-run: forward/backward per batch, abs(w*g) summed by hand
    std::vector<std::vector<double>> expect;
    for (const Parameter* p : model->params()) {
        if (p->prunable) expect.emplace_back(p->tensor.size(), 0.0);
    }
    for (const Batch& batch : toy) {
        model->zero_grads();
        Tensor out = model->forward(batch);
        LossResult loss = task_loss(out, batch, fx.dataset.head());
        model->backward(loss.out_grad);
        std::size_t e = 0;
        for (const Parameter* p : model->params()) {
            if (!p->prunable) continue;
            for (std::size_t i = 0; i < p->tensor.size(); ++i) {
                expect[e][i] += std::fabs(p->tensor.values[i] * p->tensor.grad[i]);
            }
            ++e;
        }
    }
    for (std::size_t e = 0; e < acc.entries.size(); ++e) {
        for (std::size_t i = 0; i < acc.entries[e].scores.size(); ++i) {
            CHECK(acc.entries[e].scores.values[i] == doctest::Approx(expect[e][i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("degeneration chain is bitwise") {
    Fixture fx;
    auto model = make_model(fx.spec, 41);
    std::vector<Batch> toy(fx.stream.begin(), fx.stream.begin() + 3);

    StrategyConfig smooth = config_of(StrategyKind::layer_smoothgrad, 3);
    smooth.eta = 1;
    smooth.noise_variance = 0.0;
    ImportanceAccumulator a = accumulate_scores(*model, toy, smooth, fx.dataset.head());
    ImportanceAccumulator b = accumulate_scores(
        *model, toy, config_of(StrategyKind::layer_mag_grad, 3), fx.dataset.head());
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t e = 0; e < a.entries.size(); ++e) {
        CHECK(a.entries[e].scores.values == b.entries[e].scores.values);
    }

    StrategyConfig smooth_cam = config_of(StrategyKind::layer_smoothgradcam_shift, 3);
    smooth_cam.eta = 1;
    smooth_cam.noise_variance = 0.0;
    ImportanceAccumulator c = accumulate_scores(*model, toy, smooth_cam, fx.dataset.head());
    ImportanceAccumulator d = accumulate_scores(
        *model, toy, config_of(StrategyKind::layer_gradcam_shift, 3), fx.dataset.head());
    for (std::size_t e = 0; e < c.entries.size(); ++e) {
        CHECK(c.entries[e].scores.values == d.entries[e].scores.values);
    }
}

TEST_CASE("smooth scoring: scripted noisy-average oracle, fixed seed") {
    Fixture fx;
    auto model = make_model(fx.spec, 43);
    std::vector<Batch> toy(fx.stream.begin(), fx.stream.begin() + 2);
    StrategyConfig smooth = config_of(StrategyKind::layer_smoothgrad, 2);
    smooth.eta = 4;
    smooth.noise_variance = 0.01;
    smooth.noise_seed = 99;
    ImportanceAccumulator acc = accumulate_scores(*model, toy, smooth, fx.dataset.head());
    CHECK(acc.batches_consumed == 2);

    // independent reimplementation of the eta-path averaging
    std::vector<std::vector<double>> expect;
    for (const Parameter* p : model->params()) {
        if (p->prunable) expect.emplace_back(p->tensor.size(), 0.0);
    }
    for (std::size_t bi = 0; bi < toy.size(); ++bi) {
        std::vector<std::vector<double>> gsum;
        for (const Parameter* p : model->params()) {
            if (p->prunable) gsum.emplace_back(p->tensor.size(), 0.0);
        }
        for (int path = 0; path < smooth.eta; ++path) {
            ForwardOptions opts;
            opts.noise.enabled = true;
            opts.noise.variance = smooth.noise_variance;
            opts.noise.seed = mix_seed(smooth.noise_seed, bi, static_cast<std::uint64_t>(path));
            model->zero_grads();
            Tensor out = model->forward(toy[bi], opts);
            LossResult loss = task_loss(out, toy[bi], fx.dataset.head());
            model->backward(loss.out_grad);
            std::size_t e = 0;
            for (const Parameter* p : model->params()) {
                if (!p->prunable) continue;
                for (std::size_t i = 0; i < p->tensor.size(); ++i) {
                    gsum[e][i] += p->tensor.grad[i];
                }
                ++e;
            }
        }
        std::size_t e = 0;
        for (const Parameter* p : model->params()) {
            if (!p->prunable) continue;
            for (std::size_t i = 0; i < p->tensor.size(); ++i) {
                expect[e][i] += std::fabs(p->tensor.values[i] * (gsum[e][i] / smooth.eta));
            }
            ++e;
        }
    }
    for (std::size_t e = 0; e < acc.entries.size(); ++e) {
        for (std::size_t i = 0; i < acc.entries[e].scores.size(); ++i) {
            CHECK(acc.entries[e].scores.values[i] == doctest::Approx(expect[e][i]).epsilon(1e-12));
        }
    }

    // same seed -> bitwise identical accumulator
    ImportanceAccumulator again = accumulate_scores(*model, toy, smooth, fx.dataset.head());
    for (std::size_t e = 0; e < acc.entries.size(); ++e) {
        CHECK(acc.entries[e].scores.values == again.entries[e].scores.values);
    }
}

TEST_CASE("smooth cam: scripted composition oracle, fixed seed") {
    Fixture fx;
    auto model = make_model(fx.spec, 47);
    std::vector<Batch> toy(fx.stream.begin(), fx.stream.begin() + 1);
    StrategyConfig smooth_cam = config_of(StrategyKind::layer_smoothgradcam_shift, 1);
    smooth_cam.eta = 3;
    smooth_cam.noise_variance = 0.01;
    smooth_cam.noise_seed = 7;
    smooth_cam.lambda = 10.0;
    ImportanceAccumulator acc = accumulate_scores(*model, toy, smooth_cam, fx.dataset.head());

    // clean cached forward for the CAM term
    ForwardOptions clean;
    clean.cache = true;
    model->forward(toy[0], clean);
    std::vector<std::vector<double>> cam;
    for (const Parameter* p : model->params()) {
        if (p->prunable) cam.push_back(model->activation_cache_for(p->path)->mean_preact);
    }
    // eta noisy gradients
    std::vector<std::vector<double>> gsum;
    for (const Parameter* p : model->params()) {
        if (p->prunable) gsum.emplace_back(p->tensor.size(), 0.0);
    }
    for (int path = 0; path < smooth_cam.eta; ++path) {
        ForwardOptions opts;
        opts.noise.enabled = true;
        opts.noise.variance = smooth_cam.noise_variance;
        opts.noise.seed = mix_seed(smooth_cam.noise_seed, 0, static_cast<std::uint64_t>(path));
        model->zero_grads();
        Tensor out = model->forward(toy[0], opts);
        LossResult loss = task_loss(out, toy[0], fx.dataset.head());
        model->backward(loss.out_grad);
        std::size_t e = 0;
        for (const Parameter* p : model->params()) {
            if (!p->prunable) continue;
            for (std::size_t i = 0; i < p->tensor.size(); ++i) gsum[e][i] += p->tensor.grad[i];
            ++e;
        }
    }
    std::size_t e = 0;
    for (const Parameter* p : model->params()) {
        if (!p->prunable) continue;
        const std::size_t rows = p->tensor.shape[0];
        const std::size_t cols = p->tensor.rank() == 2 ? p->tensor.shape[1] : 1;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                const double expect = std::fabs(p->tensor.values[i] * (gsum[e][i] / smooth_cam.eta) *
                                                (cam[e][r] + smooth_cam.lambda));
                CHECK(acc.entries[e].scores.values[i] == doctest::Approx(expect).epsilon(1e-12));
            }
        }
        ++e;
    }
}

TEST_CASE("accumulated scores are non-negative and finite") {
    Fixture fx;
    auto model = make_model(fx.spec, 53);
    for (StrategyKind kind :
         {StrategyKind::layer_mag_weight, StrategyKind::layer_mag_grad,
          StrategyKind::layer_gradcam_shift, StrategyKind::layer_smoothgrad,
          StrategyKind::layer_smoothgradcam_shift}) {
        ImportanceAccumulator acc =
            accumulate_scores(*model, fx.stream, config_of(kind, 2), fx.dataset.head());
        for (const auto& entry : acc.entries) {
            for (double v : entry.scores.values) {
                CHECK(v >= 0.0);
                CHECK(std::isfinite(v));
            }
        }
    }
}

TEST_CASE("score file round trip") {
    Fixture fx;
    auto model = make_model(fx.spec, 59);
    ImportanceAccumulator acc = accumulate_scores(
        *model, fx.stream, config_of(StrategyKind::layer_gradcam_shift, 2), fx.dataset.head());

    const std::string dir = std::filesystem::temp_directory_path() / "dc_strategies_test";
    std::filesystem::create_directories(dir);
    const std::string file = dir + "/scores.dcscore";
    write_scores(acc, file, "cafe1234");
    std::string hash;
    ImportanceAccumulator back = read_scores(file, &hash);
    CHECK(hash == "cafe1234");
    CHECK(back.batches_consumed == acc.batches_consumed);
    CHECK(back.config.kind == acc.config.kind);
    CHECK(back.config.lambda == acc.config.lambda);
    REQUIRE(back.entries.size() == acc.entries.size());
    for (std::size_t e = 0; e < acc.entries.size(); ++e) {
        CHECK(back.entries[e].path == acc.entries[e].path);
        CHECK(back.entries[e].scores.values == acc.entries[e].scores.values);
    }
}
