#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "deepcuts/adam.hpp"
#include "deepcuts/masking.hpp"
#include "deepcuts/model.hpp"
#include "deepcuts/strategies.hpp"
#include "deepcuts/tasks.hpp"

namespace deepcuts {

enum class Metric { accuracy, mse };
enum class RewindMode { pre_finetune, post_finetune };

const char* rewind_mode_name(RewindMode mode);
RewindMode rewind_mode_from_name(const std::string& name);

struct TrainSchedule {
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    int initial_epochs = 3;
    int final_epochs = 8;
    int early_stopping_patience = 3;
    Metric eval_metric = Metric::accuracy;
    std::uint64_t seed = 0;

    void validate() const;
};

// Schedule defaults per task shape: 3/8 epochs for classification, 8/10 for
// regression.
TrainSchedule default_schedule(const Dataset& dataset, std::uint64_t seed);

// Complete copy of parameter values at the rewind point. Restoring implies a
// fresh optimizer.
struct Snapshot {
    std::vector<std::pair<std::string, std::vector<double>>> values;
    std::uint64_t seed = 0;
};

Snapshot snapshot(const Model& model, std::uint64_t seed);
void rewind(Model& model, const Snapshot& snap);

struct FinetuneResult {
    double best_metric = 0.0;
    int epochs_run = 0;
    // max |value| seen on masked-out elements across all epoch checks
    double masked_linf = 0.0;
};

// Early-stopped fine-tuning; the best validation checkpoint is left in the
// model. With a mask, masked elements stay exactly zero throughout.
FinetuneResult finetune(Model& model, const Dataset& dataset, const TrainSchedule& schedule,
                        int epochs, const PruneMask* mask);

double evaluate(Model& model, const std::vector<Example>& examples, const TrainSchedule& schedule,
                const Dataset& dataset);

struct RunReport {
    std::string task;
    std::string strategy;
    double ratio = 1.0;
    std::uint64_t seed = 0;
    std::string rewind_mode;
    double pre_metric = 0.0;    // best initial fine-tune validation metric
    double post_metric = 0.0;   // after rewind + mask, before re-fine-tuning
    double final_metric = 0.0;  // best masked fine-tune validation metric
    int initial_epochs_run = 0;
    int final_epochs_run = 0;
    int batches_scored = 0;
    double kept_fraction = 0.0;
    double masked_linf = 0.0;
    double wall_seconds = 0.0;
    std::string mask_path;
    std::string config_hash;
    std::vector<std::string> stages;  // stage-stamped execution order
};

// runs.csv schema (one header + one row per run).
std::string run_report_csv_header();
std::string run_report_csv_row(const RunReport& report);
// Flat key-value text record.
std::string run_report_kv(const RunReport& report);

struct RunCell {
    TaskSpec task;
    ModelSpec model;
    StrategyConfig strategy;
    double ratio = 1.0;
    TrainSchedule schedule;
    RewindMode rewind_mode = RewindMode::pre_finetune;
    std::string out_dir;
    std::string config_hash;
    // optional stage observer, called as each pipeline stage starts
    std::function<void(const std::string&)> stage_log;
};

// The single-shot pipeline for one (strategy, ratio, seed) cell:
// snapshot -> initial fine-tune -> score -> mask -> rewind -> apply mask ->
// final fine-tune -> evaluate. Persists the mask file and report record.
RunReport single_shot_prune(const RunCell& cell);

}  // namespace deepcuts
