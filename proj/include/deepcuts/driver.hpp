#pragma once

#include <string>
#include <vector>

#include "deepcuts/analysis.hpp"
#include "deepcuts/config.hpp"
#include "deepcuts/lth.hpp"

namespace deepcuts {

// Staged pipeline behind the CLI. Every stage persists its artifact with an
// embedded config hash; with resume enabled a stage whose artifact already
// carries the expected hash is skipped. Artifact layout under out_dir:
//   s<seed>/model_init.dcmodel        rewind-point checkpoint
//   s<seed>/model_trained.dcmodel     best initial fine-tune checkpoint
//   s<seed>/train_meta.txt            pre_metric + epochs + hash
//   s<seed>/scores_<strategy>.dcscore
//   s<seed>/mask_<strategy>_r<ratio>.dcmask
//   s<seed>/report_<strategy>_r<ratio>.txt
//   runs.csv

struct TrainArtifacts {
    std::string init_checkpoint;
    std::string trained_checkpoint;
    std::string meta_file;
    double pre_metric = 0.0;
    int epochs_run = 0;
};

std::string seed_dir(const RunConfig& config, std::uint64_t seed);

// One monolithic-pipeline cell built from a config; feeds single_shot_prune.
RunCell make_cell(const RunConfig& config, const StrategyConfig& strategy, double ratio,
                  std::uint64_t seed);

TrainArtifacts stage_train(const RunConfig& config, std::uint64_t seed);
std::string stage_score(const RunConfig& config, std::uint64_t seed,
                        const StrategyConfig& strategy);
std::string stage_prune(const RunConfig& config, std::uint64_t seed,
                        const StrategyConfig& strategy, double ratio);

// Full sweep: every (strategy, ratio, seed) cell via the staged pipeline,
// `jobs` cells in flight at once. Appends one row per cell to runs.csv in
// deterministic order and returns the reports.
std::vector<RunReport> cmd_run(const RunConfig& config);

// Pairwise mask comparisons grouped by ratio; writes iou CSVs and plot data.
void cmd_analyze(const RunConfig& config, const std::vector<std::string>& mask_files,
                 const std::string& out_dir);

// Aggregates runs.csv in out_dir into per-(task, strategy) metric-vs-ratio
// plot files and a summary table.
void cmd_report(const std::string& out_dir);

}  // namespace deepcuts
