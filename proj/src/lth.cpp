#include "deepcuts/lth.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "deepcuts/io.hpp"
#include "deepcuts/losses.hpp"
#include "deepcuts/rng.hpp"
#include "deepcuts/util.hpp"

namespace deepcuts {

const char* rewind_mode_name(RewindMode mode) {
    return mode == RewindMode::pre_finetune ? "pre_finetune" : "post_finetune";
}

RewindMode rewind_mode_from_name(const std::string& name) {
    if (name == "pre_finetune") return RewindMode::pre_finetune;
    if (name == "post_finetune") return RewindMode::post_finetune;
    throw ConfigError("unknown rewind mode '" + name + "'");
}

void TrainSchedule::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (initial_epochs < 1 || final_epochs < 1) throw ConfigError("epoch counts must be at least 1");
    if (early_stopping_patience < 1) throw ConfigError("early_stopping_patience must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
}

TrainSchedule default_schedule(const Dataset& dataset, std::uint64_t seed) {
    TrainSchedule s;
    s.seed = seed;
    if (dataset.regression) {
        s.eval_metric = Metric::mse;
        s.initial_epochs = 8;
        s.final_epochs = 10;
    } else {
        s.eval_metric = Metric::accuracy;
        s.initial_epochs = 3;
        s.final_epochs = 8;
    }
    return s;
}

Snapshot snapshot(const Model& model, std::uint64_t seed) {
    Snapshot snap;
    snap.seed = seed;
    snap.values.reserve(model.params().size());
    for (const Parameter* p : model.params()) {
        snap.values.emplace_back(p->path, p->tensor.values);
    }
    return snap;
}

void rewind(Model& model, const Snapshot& snap) {
    if (snap.values.size() != model.params().size()) {
        throw ShapeError("snapshot has " + std::to_string(snap.values.size()) +
                         " tensors, model has " + std::to_string(model.params().size()));
    }
    for (const auto& [path, values] : snap.values) {
        Parameter* p = model.find_param(path);
        if (p == nullptr || p->tensor.size() != values.size()) {
            throw ShapeError("snapshot tensor " + path + " does not match the model");
        }
        p->tensor.values = values;
    }
}

double evaluate(Model& model, const std::vector<Example>& examples, const TrainSchedule& schedule,
                const Dataset& dataset) {
    if (examples.empty()) throw DataError("cannot evaluate on an empty split");
    double sum = 0.0;
    for (const Batch& batch : batches(examples, schedule.batch_size, 0, dataset.regression)) {
        Tensor out = model.forward(batch);
        sum += batch_metric_sum(out, batch, dataset.head());
    }
    return sum / static_cast<double>(examples.size());
}

namespace {

bool metric_improved(double candidate, double best, Metric metric) {
    return metric == Metric::accuracy ? candidate > best : candidate < best;
}

std::vector<std::vector<double>> copy_values(const Model& model) {
    std::vector<std::vector<double>> vals;
    vals.reserve(model.params().size());
    for (const Parameter* p : model.params()) vals.push_back(p->tensor.values);
    return vals;
}

void restore_values(Model& model, const std::vector<std::vector<double>>& vals) {
    for (std::size_t i = 0; i < vals.size(); ++i) {
        model.params()[i]->tensor.values = vals[i];
    }
}

}  // namespace

FinetuneResult finetune(Model& model, const Dataset& dataset, const TrainSchedule& schedule,
                        int epochs, const PruneMask* mask) {
    schedule.validate();
    if (epochs < 1) throw ConfigError("fine-tuning needs at least 1 epoch");
    if (dataset.train.empty()) throw DataError("training split is empty");

    AdamHyper hyper;
    hyper.lr = schedule.learning_rate;
    Adam adam(model, hyper);
    if (mask != nullptr) apply_mask(model, *mask);

    FinetuneResult res;
    double best = schedule.eval_metric == Metric::accuracy
                      ? -std::numeric_limits<double>::infinity()
                      : std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_values = copy_values(model);
    int since_best = 0;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        const auto stream =
            batches(dataset.train, schedule.batch_size,
                    mix_seed(schedule.seed, 0x5af1e, static_cast<std::uint64_t>(epoch)),
                    dataset.regression);
        std::size_t batch_idx = 0;
        for (const Batch& batch : stream) {
            model.zero_grads();
            Tensor out = model.forward(batch);
            LossResult loss = task_loss(out, batch, dataset.head());
            if (!std::isfinite(loss.value)) {
                throw NumericError("training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(batch_idx));
            }
            model.backward(loss.out_grad);
            adam.step(mask);
            ++batch_idx;
        }
        res.epochs_run = epoch + 1;
        if (mask != nullptr) {
            res.masked_linf = std::max(res.masked_linf, masked_linf_norm(model, *mask));
        }
        const double metric = evaluate(model, dataset.val, schedule, dataset);
        if (metric_improved(metric, best, schedule.eval_metric)) {
            best = metric;
            best_values = copy_values(model);
            since_best = 0;
        } else {
            since_best += 1;
            if (since_best >= schedule.early_stopping_patience) break;
        }
    }
    restore_values(model, best_values);
    res.best_metric = best;
    return res;
}

std::string run_report_csv_header() {
    return "task,strategy,ratio,seed,pre_metric,post_metric,final_metric,kept_fraction,"
           "wall_seconds,mask_path";
}

std::string run_report_csv_row(const RunReport& r) {
    std::ostringstream os;
    os << r.task << ',' << r.strategy << ',' << fmt_double(r.ratio) << ',' << r.seed << ','
       << fmt_double(r.pre_metric) << ',' << fmt_double(r.post_metric) << ','
       << fmt_double(r.final_metric) << ',' << fmt_double(r.kept_fraction) << ','
       << fmt_double(r.wall_seconds) << ',' << r.mask_path;
    return os.str();
}

std::string run_report_kv(const RunReport& r) {
    std::ostringstream os;
    os << "task = " << r.task << '\n'
       << "strategy = " << r.strategy << '\n'
       << "ratio = " << fmt_double(r.ratio) << '\n'
       << "seed = " << r.seed << '\n'
       << "rewind = " << r.rewind_mode << '\n'
       << "pre_metric = " << fmt_double(r.pre_metric) << '\n'
       << "post_metric = " << fmt_double(r.post_metric) << '\n'
       << "final_metric = " << fmt_double(r.final_metric) << '\n'
       << "initial_epochs_run = " << r.initial_epochs_run << '\n'
       << "final_epochs_run = " << r.final_epochs_run << '\n'
       << "batches_scored = " << r.batches_scored << '\n'
       << "kept_fraction = " << fmt_double(r.kept_fraction) << '\n'
       << "masked_linf = " << fmt_double(r.masked_linf) << '\n'
       << "wall_seconds = " << fmt_double(r.wall_seconds) << '\n'
       << "mask_path = " << r.mask_path << '\n'
       << "config_hash = " << r.config_hash << '\n';
    std::string stages;
    for (const auto& s : r.stages) {
        if (!stages.empty()) stages += ">";
        stages += s;
    }
    os << "stages = " << stages << '\n';
    return os.str();
}

RunReport single_shot_prune(const RunCell& cell) {
    const auto t0 = std::chrono::steady_clock::now();
    RunReport report;
    report.task = task_kind_name(cell.task.kind);
    report.strategy = strategy_name(cell.strategy.kind);
    report.ratio = cell.ratio;
    report.seed = cell.schedule.seed;
    report.rewind_mode = rewind_mode_name(cell.rewind_mode);
    report.config_hash = cell.config_hash;

    auto stage = [&](const std::string& name) {
        report.stages.push_back(name);
        if (cell.stage_log) cell.stage_log(name);
    };

    Dataset dataset = make_task(cell.task);
    auto model = make_model(cell.model, cell.schedule.seed);

    const CompressionSpec comp = CompressionSpec::for_model(*model, cell.ratio);
    report.kept_fraction = compression_to_kept_fraction(comp);

    stage("snapshot");
    Snapshot snap = snapshot(*model, cell.schedule.seed);

    stage("initial_finetune");
    FinetuneResult initial = finetune(*model, dataset, cell.schedule,
                                      cell.schedule.initial_epochs, nullptr);
    report.pre_metric = initial.best_metric;
    report.initial_epochs_run = initial.epochs_run;

    if (cell.rewind_mode == RewindMode::post_finetune) {
        snap = snapshot(*model, cell.schedule.seed);
    }

    stage("accumulate_scores");
    const auto scoring_stream =
        batches(dataset.train, cell.schedule.batch_size,
                mix_seed(cell.schedule.seed, 0x5c0e5u), dataset.regression);
    StrategyConfig strat = cell.strategy;
    strat.noise_seed = mix_seed(cell.schedule.seed, 0x4015eu);
    ImportanceAccumulator acc = accumulate_scores(*model, scoring_stream, strat, dataset.head());
    report.batches_scored = acc.batches_consumed;

    stage("build_mask");
    PruneMask mask = strategy_is_global(strat.kind) ? build_mask_global(acc, comp)
                                                    : build_mask_layerwise(acc, comp);
    mask.seed = cell.schedule.seed;
    mask.config_hash = cell.config_hash;

    std::filesystem::create_directories(cell.out_dir);
    const std::string cell_tag = report.strategy + "_r" + fmt_double(report.ratio) + "_s" +
                                 std::to_string(report.seed);
    report.mask_path = cell.out_dir + "/mask_" + cell_tag + ".dcmask";
    write_mask(mask, report.mask_path);

    stage("rewind");
    rewind(*model, snap);

    stage("apply_mask");
    apply_mask(*model, mask);
    report.post_metric = evaluate(*model, dataset.val, cell.schedule, dataset);

    stage("final_finetune");
    FinetuneResult fin = finetune(*model, dataset, cell.schedule, cell.schedule.final_epochs, &mask);
    report.final_epochs_run = fin.epochs_run;
    report.masked_linf = std::max(fin.masked_linf, masked_linf_norm(*model, mask));

    stage("evaluate");
    report.final_metric = evaluate(*model, dataset.val, cell.schedule, dataset);

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    atomic_write_file(cell.out_dir + "/report_" + cell_tag + ".txt", run_report_kv(report));
    return report;
}

}  // namespace deepcuts
