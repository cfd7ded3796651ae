#include "deepcuts/driver.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include <nlohmann/json.hpp>

#include "deepcuts/io.hpp"
#include "deepcuts/rng.hpp"
#include "deepcuts/util.hpp"

namespace deepcuts {

namespace fs = std::filesystem;

namespace {

// Salts for deriving independent deterministic streams from one run seed;
// shared with lth.cpp's monolithic pipeline so staged == monolithic.
constexpr std::uint64_t kScoreStreamSalt = 0x5c0e5;
constexpr std::uint64_t kNoiseSalt = 0x4015e;

std::string trailer_hash(const std::string& json_text) {
    if (json_text.empty()) return "";
    nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
    if (j.is_discarded()) return "";
    return j.value("config_hash", "");
}

bool artifact_current(const std::string& file, const std::string& magic,
                      const std::string& want_hash) {
    if (!fs::exists(file)) return false;
    try {
        std::string trailer;
        read_container(file, magic, &trailer);
        return trailer_hash(trailer) == want_hash;
    } catch (const Error&) {
        return false;
    }
}

KvConfig parse_kv_file(const std::string& file) { return KvConfig::parse_file(file); }

TrainSchedule schedule_for(const RunConfig& config, std::uint64_t seed) {
    TrainSchedule s = config.schedule;
    s.seed = seed;
    return s;
}

}  // namespace

RunCell make_cell(const RunConfig& config, const StrategyConfig& strategy, double ratio,
                  std::uint64_t seed) {
    Dataset dataset = make_task(config.task);
    RunCell cell;
    cell.task = config.task;
    cell.model = config.resolved_model(dataset);
    cell.strategy = strategy;
    cell.ratio = ratio;
    cell.schedule = schedule_for(config, seed);
    cell.rewind_mode = config.rewind_mode;
    cell.out_dir = seed_dir(config, seed);
    cell.config_hash = config.cell_hash(strategy, ratio, seed);
    return cell;
}

std::string seed_dir(const RunConfig& config, std::uint64_t seed) {
    return config.out_dir + "/s" + std::to_string(seed);
}

TrainArtifacts stage_train(const RunConfig& config, std::uint64_t seed) {
    TrainArtifacts art;
    const std::string dir = seed_dir(config, seed);
    fs::create_directories(dir);
    art.init_checkpoint = dir + "/model_init.dcmodel";
    art.trained_checkpoint = dir + "/model_trained.dcmodel";
    art.meta_file = dir + "/train_meta.txt";
    const std::string want_hash = config.seed_hash(seed);

    if (config.resume && artifact_current(art.init_checkpoint, "DCMODEL", want_hash) &&
        artifact_current(art.trained_checkpoint, "DCMODEL", want_hash) &&
        fs::exists(art.meta_file)) {
        const KvConfig meta = parse_kv_file(art.meta_file);
        if (meta.get_string("config_hash", "") == want_hash) {
            art.pre_metric = meta.get_double("pre_metric", 0.0);
            art.epochs_run = static_cast<int>(meta.get_int("epochs_run", 0));
            return art;
        }
    }

    Dataset dataset = make_task(config.task);
    const ModelSpec spec = config.resolved_model(dataset);
    auto model = make_model(spec, seed);

    nlohmann::json trailer;
    trailer["config_hash"] = want_hash;
    save_checkpoint(*model, art.init_checkpoint, trailer.dump());

    const TrainSchedule schedule = schedule_for(config, seed);
    FinetuneResult fit = finetune(*model, dataset, schedule, schedule.initial_epochs, nullptr);
    save_checkpoint(*model, art.trained_checkpoint, trailer.dump());

    art.pre_metric = fit.best_metric;
    art.epochs_run = fit.epochs_run;
    std::ostringstream meta;
    meta << "pre_metric = " << fmt_double(fit.best_metric) << "\n"
         << "epochs_run = " << fit.epochs_run << "\n"
         << "config_hash = " << want_hash << "\n";
    atomic_write_file(art.meta_file, meta.str());
    return art;
}

std::string stage_score(const RunConfig& config, std::uint64_t seed,
                        const StrategyConfig& strategy) {
    const std::string dir = seed_dir(config, seed);
    const std::string file = dir + "/scores_" + strategy_name(strategy.kind) + ".dcscore";
    const std::string want_hash = config.score_hash(strategy, seed);
    if (config.resume && artifact_current(file, "DCSCORE", want_hash)) return file;

    const TrainArtifacts art = stage_train(config, seed);
    Dataset dataset = make_task(config.task);
    const ModelSpec spec = config.resolved_model(dataset);
    auto model = make_model(spec, seed);
    load_checkpoint(*model, art.trained_checkpoint);

    const auto stream = batches(dataset.train, config.schedule.batch_size,
                                mix_seed(seed, kScoreStreamSalt), dataset.regression);
    StrategyConfig strat = strategy;
    strat.noise_seed = mix_seed(seed, kNoiseSalt);
    ImportanceAccumulator acc = accumulate_scores(*model, stream, strat, dataset.head());
    write_scores(acc, file, want_hash);
    return file;
}

std::string stage_prune(const RunConfig& config, std::uint64_t seed,
                        const StrategyConfig& strategy, double ratio) {
    const std::string dir = seed_dir(config, seed);
    const std::string file =
        dir + "/mask_" + strategy_name(strategy.kind) + "_r" + fmt_double(ratio) + ".dcmask";
    const std::string want_hash = config.cell_hash(strategy, ratio, seed);
    if (config.resume && fs::exists(file)) {
        try {
            if (read_mask(file).config_hash == want_hash) return file;
        } catch (const Error&) {
        }
    }

    const std::string score_file = stage_score(config, seed, strategy);
    ImportanceAccumulator acc = read_scores(score_file);

    Dataset dataset = make_task(config.task);
    const ModelSpec spec = config.resolved_model(dataset);
    auto model = make_model(spec, seed);

    const CompressionSpec comp = CompressionSpec::for_model(*model, ratio);
    PruneMask mask = strategy_is_global(strategy.kind) ? build_mask_global(acc, comp)
                                                       : build_mask_layerwise(acc, comp);
    mask.seed = seed;
    mask.config_hash = want_hash;
    write_mask(mask, file);
    return file;
}

namespace {

RunReport read_report_kv(const std::string& file) {
    const KvConfig kv = parse_kv_file(file);
    RunReport r;
    r.task = kv.get_string("task");
    r.strategy = kv.get_string("strategy");
    r.ratio = kv.get_double("ratio", 1.0);
    r.seed = kv.get_u64("seed", 0);
    r.rewind_mode = kv.get_string("rewind", "pre_finetune");
    r.pre_metric = kv.get_double("pre_metric", 0.0);
    r.post_metric = kv.get_double("post_metric", 0.0);
    r.final_metric = kv.get_double("final_metric", 0.0);
    r.initial_epochs_run = static_cast<int>(kv.get_int("initial_epochs_run", 0));
    r.final_epochs_run = static_cast<int>(kv.get_int("final_epochs_run", 0));
    r.batches_scored = static_cast<int>(kv.get_int("batches_scored", 0));
    r.kept_fraction = kv.get_double("kept_fraction", 0.0);
    r.masked_linf = kv.get_double("masked_linf", 0.0);
    r.wall_seconds = kv.get_double("wall_seconds", 0.0);
    r.mask_path = kv.get_string("mask_path", "");
    r.config_hash = kv.get_string("config_hash", "");
    std::istringstream stages(kv.get_string("stages", ""));
    std::string stage;
    while (std::getline(stages, stage, '>')) {
        if (!stage.empty()) r.stages.push_back(stage);
    }
    return r;
}

// Finalize one cell from the staged artifacts: rewind checkpoint + mask ->
// masked fine-tune -> report. Byte-identical to single_shot_prune given the
// same seeds because every stream seed derivation is shared.
RunReport finalize_cell(const RunConfig& config, std::uint64_t seed,
                        const StrategyConfig& strategy, double ratio,
                        const TrainArtifacts& train, const std::string& mask_file) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string dir = seed_dir(config, seed);
    const std::string tag = std::string(strategy_name(strategy.kind)) + "_r" + fmt_double(ratio);
    const std::string report_file = dir + "/report_" + tag + ".txt";
    const std::string want_hash = config.cell_hash(strategy, ratio, seed);

    if (config.resume && fs::exists(report_file)) {
        try {
            RunReport r = read_report_kv(report_file);
            if (r.config_hash == want_hash) return r;
        } catch (const Error&) {
        }
    }

    Dataset dataset = make_task(config.task);
    const ModelSpec spec = config.resolved_model(dataset);
    auto model = make_model(spec, seed);
    const TrainSchedule schedule = schedule_for(config, seed);

    RunReport report;
    report.task = task_kind_name(config.task.kind);
    report.strategy = strategy_name(strategy.kind);
    report.ratio = ratio;
    report.seed = seed;
    report.rewind_mode = rewind_mode_name(config.rewind_mode);
    report.config_hash = want_hash;
    report.pre_metric = train.pre_metric;
    report.initial_epochs_run = train.epochs_run;
    report.mask_path = mask_file;

    const CompressionSpec comp = CompressionSpec::for_model(*model, ratio);
    report.kept_fraction = compression_to_kept_fraction(comp);

    PruneMask mask = read_mask(mask_file);
    report.batches_scored = read_scores(dir + "/scores_" + strategy_name(strategy.kind) +
                                        ".dcscore").batches_consumed;

    report.stages = {"snapshot", "initial_finetune", "accumulate_scores", "build_mask",
                     "rewind", "apply_mask", "final_finetune", "evaluate"};

    // rewind
    load_checkpoint(*model, config.rewind_mode == RewindMode::pre_finetune
                                ? train.init_checkpoint
                                : train.trained_checkpoint);
    // apply mask
    apply_mask(*model, mask);
    report.post_metric = evaluate(*model, dataset.val, schedule, dataset);
    // final fine-tune
    FinetuneResult fin = finetune(*model, dataset, schedule, schedule.final_epochs, &mask);
    report.final_epochs_run = fin.epochs_run;
    report.masked_linf = std::max(fin.masked_linf, masked_linf_norm(*model, mask));
    report.final_metric = evaluate(*model, dataset.val, schedule, dataset);

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    atomic_write_file(report_file, run_report_kv(report));
    return report;
}

void append_runs_csv(const std::string& out_dir, const std::vector<RunReport>& reports) {
    const std::string file = out_dir + "/runs.csv";
    const bool fresh = !fs::exists(file);
    std::ofstream out(file, std::ios::app);
    if (!out) throw DataError("cannot append to " + file);
    if (fresh) out << run_report_csv_header() << "\n";
    for (const RunReport& r : reports) out << run_report_csv_row(r) << "\n";
}

}  // namespace

std::vector<RunReport> cmd_run(const RunConfig& config) {
    fs::create_directories(config.out_dir);

    struct Cell {
        std::uint64_t seed;
        std::size_t strategy_idx;
        double ratio;
    };
    std::vector<Cell> cells;
    for (std::uint64_t seed : config.seeds) {
        for (std::size_t si = 0; si < config.strategies.size(); ++si) {
            for (double ratio : config.ratios) {
                cells.push_back({seed, si, ratio});
            }
        }
    }

    // Per-seed training and per-(seed, strategy) scoring are shared by their
    // cells; run them first, sequentially per seed.
    std::map<std::uint64_t, TrainArtifacts> trained;
    std::map<std::pair<std::uint64_t, std::size_t>, std::string> mask_files;
    for (std::uint64_t seed : config.seeds) trained[seed] = stage_train(config, seed);
    {
        std::mutex mu;
        std::vector<std::pair<std::uint64_t, std::size_t>> score_jobs;
        for (std::uint64_t seed : config.seeds) {
            for (std::size_t si = 0; si < config.strategies.size(); ++si) {
                score_jobs.push_back({seed, si});
            }
        }
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= score_jobs.size()) return;
                const auto [seed, si] = score_jobs[i];
                stage_score(config, seed, config.strategies[si]);
            }
        };
        std::vector<std::thread> pool;
        const int n_workers = std::min<int>(config.jobs, static_cast<int>(score_jobs.size()));
        for (int t = 1; t < n_workers; ++t) pool.emplace_back(worker);
        worker();
        for (auto& th : pool) th.join();
    }

    std::vector<RunReport> reports(cells.size());
    std::vector<std::string> errors;
    std::mutex err_mu;
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const Cell& cell = cells[i];
            const StrategyConfig& strategy = config.strategies[cell.strategy_idx];
            try {
                const std::string mask_file = stage_prune(config, cell.seed, strategy, cell.ratio);
                reports[i] = finalize_cell(config, cell.seed, strategy, cell.ratio,
                                           trained[cell.seed], mask_file);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mu);
                errors.push_back(std::string(strategy_name(strategy.kind)) + " r" +
                                 fmt_double(cell.ratio) + " s" + std::to_string(cell.seed) +
                                 ": " + e.what());
            }
        }
    };
    std::vector<std::thread> pool;
    const int n_workers = std::min<int>(config.jobs, static_cast<int>(cells.size()));
    for (int t = 1; t < n_workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    if (!errors.empty()) {
        std::string msg = "sweep failed for " + std::to_string(errors.size()) + " cell(s):";
        for (const std::string& e : errors) msg += "\n  " + e;
        throw Error(msg);
    }

    std::sort(reports.begin(), reports.end(), [](const RunReport& a, const RunReport& b) {
        if (a.task != b.task) return a.task < b.task;
        if (a.strategy != b.strategy) return a.strategy < b.strategy;
        if (a.ratio != b.ratio) return a.ratio < b.ratio;
        return a.seed < b.seed;
    });
    append_runs_csv(config.out_dir, reports);
    return reports;
}

void cmd_analyze(const RunConfig& config, const std::vector<std::string>& mask_files,
                 const std::string& out_dir) {
    if (mask_files.size() < 2) throw ValidationError("analyze needs at least 2 mask files");
    struct Loaded {
        PruneMask mask;
        std::string strategy;
        double ratio;
    };
    std::vector<Loaded> loaded;
    for (const std::string& file : mask_files) {
        PruneMask m = read_mask(file);
        if (m.strategy.empty()) {
            throw FormatError("mask file " + file + " carries no strategy provenance");
        }
        const std::string strategy = m.strategy;
        const double ratio = m.ratio;
        loaded.push_back({std::move(m), strategy, ratio});
    }

    Dataset dataset = make_task(config.task);
    const ModelSpec spec = config.resolved_model(dataset);
    std::vector<HeadSlice> heads;
    if (spec.arch == Arch::miniformer) heads = head_map(spec);

    std::vector<ComparisonSet> comparisons;
    std::map<double, std::vector<const Loaded*>> by_ratio;
    for (const Loaded& l : loaded) by_ratio[l.ratio].push_back(&l);
    for (const auto& [ratio, group] : by_ratio) {
        for (std::size_t i = 0; i < group.size(); ++i) {
            for (std::size_t j = i + 1; j < group.size(); ++j) {
                ComparisonSet cs;
                cs.ratio = ratio;
                cs.strategy_a = group[i]->strategy;
                cs.strategy_b = group[j]->strategy;
                cs.comparison = compare_masks(group[i]->mask, group[j]->mask, heads);
                comparisons.push_back(std::move(cs));
            }
        }
    }

    // Reports are optional for analyze; reuse any runs.csv rows in out_dir.
    std::vector<RunReport> reports;
    emit_report(reports, comparisons, out_dir);
}

void cmd_report(const std::string& out_dir) {
    const std::string runs_file = out_dir + "/runs.csv";
    if (!fs::exists(runs_file)) throw DataError("no runs.csv in " + out_dir);
    std::ifstream in(runs_file);
    std::string line;
    if (!std::getline(in, line)) throw DataError("runs.csv is empty");
    if (line != run_report_csv_header()) {
        throw FormatError("runs.csv header does not match the documented schema");
    }
    std::vector<RunReport> reports;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::istringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 10) {
            throw FormatError("runs.csv row has " + std::to_string(cols.size()) +
                              " columns, expected 10: " + line);
        }
        RunReport r;
        r.task = cols[0];
        r.strategy = cols[1];
        r.ratio = std::stod(cols[2]);
        r.seed = std::stoull(cols[3]);
        r.pre_metric = std::stod(cols[4]);
        r.post_metric = std::stod(cols[5]);
        r.final_metric = std::stod(cols[6]);
        r.kept_fraction = std::stod(cols[7]);
        r.wall_seconds = std::stod(cols[8]);
        r.mask_path = cols[9];
        reports.push_back(std::move(r));
    }

    // Summary table: mean final metric per (task, strategy, ratio).
    std::map<std::tuple<std::string, std::string, double>, std::pair<double, int>> agg;
    for (const RunReport& r : reports) {
        auto& cell = agg[{r.task, r.strategy, r.ratio}];
        cell.first += r.final_metric;
        cell.second += 1;
    }
    std::ostringstream table;
    table << "task,strategy,ratio,runs,mean_final_metric\n";
    for (const auto& [key, acc] : agg) {
        table << std::get<0>(key) << ',' << std::get<1>(key) << ',' << fmt_double(std::get<2>(key))
              << ',' << acc.second << ',' << fmt_double(acc.first / acc.second) << "\n";
    }
    atomic_write_file(out_dir + "/summary.csv", table.str());

    emit_report(reports, {}, out_dir + "/figures");
}

}  // namespace deepcuts
