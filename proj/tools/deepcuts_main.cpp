// deepcuts CLI: single-shot pruning pipeline, staged or end-to-end.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error,
// 5 infeasible compression, 1 anything else.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepcuts/driver.hpp"
#include "deepcuts/io.hpp"
#include "deepcuts/util.hpp"

namespace {

using namespace deepcuts;

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> sets;
    std::string out_override;
    int jobs = 0;
    bool resume = false;
};

RunConfig load_config(const CommonArgs& args, bool config_required = true) {
    KvConfig kv;
    if (!args.config_file.empty()) {
        kv = KvConfig::parse_file(args.config_file);
    } else if (config_required) {
        throw ConfigError("a --config file is required");
    }
    for (const std::string& pair : args.sets) kv.set_pair(pair);
    RunConfig rc = RunConfig::from_kv(kv);
    if (!args.out_override.empty()) rc.out_dir = args.out_override;
    if (args.jobs > 0) rc.jobs = args.jobs;
    if (args.resume) rc.resume = true;
    return rc;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_file, "flat key=value configuration file");
    cmd->add_option("-s,--set", args.sets, "override a config key (key=value, repeatable)");
    cmd->add_option("-o,--out", args.out_override, "output directory (overrides config 'out')");
    cmd->add_option("-j,--jobs", args.jobs, "parallel pipeline cells");
    cmd->add_flag("--resume", args.resume, "skip stages whose artifacts match the config hash");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deepcuts: single-shot pruning with interpretability-based importance scores"};
    app.require_subcommand(1);

    CommonArgs train_args, score_args, prune_args, run_args, analyze_args;
    std::string prune_scores;
    double prune_ratio = 0.0;
    std::vector<std::string> analyze_masks;
    std::string report_dir;

    CLI::App* cmd_train_app = app.add_subcommand("train", "initial fine-tune; writes rewind + trained checkpoints");
    add_common(cmd_train_app, train_args);

    CLI::App* cmd_score_app = app.add_subcommand("score", "accumulate importance scores from a trained checkpoint");
    add_common(cmd_score_app, score_args);

    CLI::App* cmd_prune_app = app.add_subcommand("prune", "turn a score file and ratio into a mask file");
    add_common(cmd_prune_app, prune_args);
    cmd_prune_app->add_option("--scores", prune_scores, "score file (defaults to the staged layout)");
    cmd_prune_app->add_option("-r,--ratio", prune_ratio, "compression ratio");

    CLI::App* cmd_run_app = app.add_subcommand("run", "full sweep: train, score, prune, retrain, report");
    add_common(cmd_run_app, run_args);

    CLI::App* cmd_analyze_app = app.add_subcommand("analyze", "pairwise mask IOU comparisons");
    add_common(cmd_analyze_app, analyze_args);
    cmd_analyze_app->add_option("masks", analyze_masks, "mask files to compare")->required();

    CLI::App* cmd_report_app = app.add_subcommand("report", "aggregate runs.csv into summary tables and plot data");
    cmd_report_app->add_option("dir", report_dir, "output directory holding runs.csv")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_train_app->parsed()) {
            const RunConfig rc = load_config(train_args);
            for (std::uint64_t seed : rc.seeds) {
                const TrainArtifacts art = stage_train(rc, seed);
                std::printf("trained seed %llu: pre_metric=%s -> %s\n",
                            static_cast<unsigned long long>(seed),
                            fmt_double(art.pre_metric).c_str(), art.trained_checkpoint.c_str());
            }
        } else if (cmd_score_app->parsed()) {
            const RunConfig rc = load_config(score_args);
            for (std::uint64_t seed : rc.seeds) {
                for (const StrategyConfig& strategy : rc.strategies) {
                    const std::string file = stage_score(rc, seed, strategy);
                    std::printf("scores: %s\n", file.c_str());
                }
            }
        } else if (cmd_prune_app->parsed()) {
            const RunConfig rc = load_config(prune_args);
            std::vector<double> ratios = rc.ratios;
            if (prune_ratio > 0.0) ratios = {prune_ratio};
            if (!prune_scores.empty() && rc.strategies.size() != 1) {
                throw ConfigError("--scores needs exactly one strategy in strategy.list");
            }
            for (std::uint64_t seed : rc.seeds) {
                for (const StrategyConfig& strategy : rc.strategies) {
                    for (double ratio : ratios) {
                        const std::string file = stage_prune(rc, seed, strategy, ratio);
                        std::printf("mask: %s\n", file.c_str());
                    }
                }
            }
        } else if (cmd_run_app->parsed()) {
            const RunConfig rc = load_config(run_args);
            const auto reports = cmd_run(rc);
            for (const RunReport& r : reports) {
                std::printf("%s r%s s%llu: pre=%s post=%s final=%s\n", r.strategy.c_str(),
                            fmt_double(r.ratio).c_str(), static_cast<unsigned long long>(r.seed),
                            fmt_double(r.pre_metric).c_str(), fmt_double(r.post_metric).c_str(),
                            fmt_double(r.final_metric).c_str());
            }
            std::printf("%zu reports -> %s/runs.csv\n", reports.size(), rc.out_dir.c_str());
        } else if (cmd_analyze_app->parsed()) {
            const RunConfig rc = load_config(analyze_args);
            const std::string out = rc.out_dir + "/analysis";
            cmd_analyze(rc, analyze_masks, out);
            std::printf("comparisons -> %s\n", out.c_str());
        } else if (cmd_report_app->parsed()) {
            cmd_report(report_dir);
            std::printf("summary -> %s/summary.csv\n", report_dir.c_str());
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible compression: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
