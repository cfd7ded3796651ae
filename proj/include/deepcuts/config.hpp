#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "deepcuts/lth.hpp"
#include "deepcuts/model_spec.hpp"
#include "deepcuts/strategies.hpp"
#include "deepcuts/tasks.hpp"

namespace deepcuts {

// Flat `key = value` configuration with dotted keys. '#' starts a comment;
// blank lines are ignored. Later assignments and --set overrides win.
class KvConfig {
public:
    static KvConfig parse_file(const std::string& file);
    static KvConfig parse_string(const std::string& text, const std::string& origin);

    void set(const std::string& key, const std::string& value);
    // "key=value" as passed to --set.
    void set_pair(const std::string& pair);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& key) const;
    std::vector<double> get_double_list(const std::string& key) const;

    // Sorted `key = value` lines, excluding the given keys; input to the
    // config hash so output location and concurrency never affect artifacts.
    std::string canonical(const std::vector<std::string>& exclude = {}) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
    std::map<std::string, int> lines_;  // origin line per key, for errors
    std::string origin_;

    [[noreturn]] void fail(const std::string& key, const std::string& why) const;
};

struct RunConfig {
    TaskSpec task;
    ModelSpec model;
    std::vector<StrategyConfig> strategies;
    std::vector<double> ratios;
    TrainSchedule schedule;
    std::vector<std::uint64_t> seeds;
    std::string out_dir = "runs";
    RewindMode rewind_mode = RewindMode::pre_finetune;
    int jobs = 1;
    bool resume = false;
    std::string canonical_text;  // hash input

    static RunConfig from_kv(const KvConfig& kv);

    // Hash identifying one (strategy, ratio, seed) cell of this config.
    std::string cell_hash(const StrategyConfig& strategy, double ratio,
                          std::uint64_t seed) const;
    // Hash for per-seed artifacts (checkpoints).
    std::string seed_hash(std::uint64_t seed) const;
    // Hash for per-(strategy, seed) artifacts (score files).
    std::string score_hash(const StrategyConfig& strategy, std::uint64_t seed) const;

    // Model spec with task-dependent fields (vocab, head, input width)
    // resolved against the generated dataset.
    ModelSpec resolved_model(const Dataset& dataset) const;
};

}  // namespace deepcuts
