#include "deepcuts/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "deepcuts/util.hpp"

namespace deepcuts {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::parse_string(const std::string& text, const std::string& origin) {
    KvConfig kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        kv.entries_[key] = value;
        kv.lines_[key] = lineno;
    }
    return kv;
}

KvConfig KvConfig::parse_file(const std::string& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_string(text, file);
}

void KvConfig::set(const std::string& key, const std::string& value) {
    entries_[key] = value;
    lines_[key] = 0;
}

void KvConfig::set_pair(const std::string& pair) {
    const std::size_t eq = pair.find('=');
    if (eq == std::string::npos || trim(pair.substr(0, eq)).empty()) {
        throw ConfigError("--set expects key=value, got '" + pair + "'");
    }
    set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
}

bool KvConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

void KvConfig::fail(const std::string& key, const std::string& why) const {
    auto it = lines_.find(key);
    std::string where = origin_.empty() ? "config" : origin_;
    if (it != lines_.end() && it->second > 0) where += ":" + std::to_string(it->second);
    throw ConfigError(where + ": key '" + key + "': " + why);
}

std::string KvConfig::get_string(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) fail(key, "trailing characters in number '" + it->second + "'");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(key, "not a number: '" + it->second + "'");
    }
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t used = 0;
        const std::int64_t v = std::stoll(it->second, &used);
        if (used != it->second.size()) fail(key, "trailing characters in integer '" + it->second + "'");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(key, "not an integer: '" + it->second + "'");
    }
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t used = 0;
        const std::uint64_t v = std::stoull(it->second, &used);
        if (used != it->second.size()) fail(key, "trailing characters in integer '" + it->second + "'");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(key, "not an unsigned integer: '" + it->second + "'");
    }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    fail(key, "expected true/false, got '" + it->second + "'");
}

std::vector<std::string> KvConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    auto it = entries_.find(key);
    if (it == entries_.end()) return out;
    std::istringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> KvConfig::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& item : get_list(key)) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            fail(key, "list item '" + item + "' is not a number");
        }
    }
    return out;
}

std::string KvConfig::canonical(const std::vector<std::string>& exclude) const {
    std::string out;
    for (const auto& [key, value] : entries_) {
        if (std::find(exclude.begin(), exclude.end(), key) != exclude.end()) continue;
        out += key + " = " + value + "\n";
    }
    return out;
}

RunConfig RunConfig::from_kv(const KvConfig& kv) {
    RunConfig rc;

    rc.task.kind = task_kind_from_name(kv.get_string("task.kind", "planted_classify"));
    rc.task.train_size = static_cast<std::size_t>(kv.get_int("task.train_size", 1200));
    rc.task.val_size = static_cast<std::size_t>(kv.get_int("task.val_size", 0));
    rc.task.vocab = static_cast<std::size_t>(kv.get_int("task.vocab", 48));
    rc.task.seq_len = static_cast<std::size_t>(kv.get_int("task.seq_len", 12));
    rc.task.teacher_sparsity = kv.get_double("task.teacher_sparsity", 0.25);

    const std::string arch = kv.get_string("model.arch", "miniformer");
    if (arch == "miniformer") {
        rc.model.arch = Arch::miniformer;
    } else if (arch == "mlp") {
        rc.model.arch = Arch::mlp;
    } else {
        throw ConfigError("model.arch must be 'miniformer' or 'mlp', got '" + arch + "'");
    }
    rc.model.vocab_size = static_cast<std::size_t>(kv.get_int("model.vocab_size", 0));  // 0: derive
    rc.model.d_model = static_cast<std::size_t>(kv.get_int("model.d_model", 32));
    rc.model.n_layers = static_cast<std::size_t>(kv.get_int("model.n_layers", 4));
    rc.model.n_heads = static_cast<std::size_t>(kv.get_int("model.n_heads", 2));
    rc.model.d_ffn = static_cast<std::size_t>(kv.get_int("model.d_ffn", 64));
    rc.model.max_seq_len = static_cast<std::size_t>(kv.get_int("model.max_seq_len", 32));
    if (kv.has("model.widths")) {
        rc.model.mlp_widths.clear();
        rc.model.mlp_widths.push_back(0);  // input width derived from the task
        for (double w : kv.get_double_list("model.widths")) {
            if (w < 1) throw ConfigError("model.widths entries must be positive");
            rc.model.mlp_widths.push_back(static_cast<std::size_t>(w));
        }
    } else if (rc.model.arch == Arch::mlp) {
        rc.model.mlp_widths = {0, 64, 32};
    }

    std::vector<std::string> strategy_names = kv.get_list("strategy.list");
    if (strategy_names.empty()) strategy_names = {"layer_mag_weight"};
    for (const std::string& name : strategy_names) {
        StrategyConfig sc;
        sc.kind = strategy_from_name(name);
        sc.lambda = kv.get_double("strategy.lambda", 10.0);
        sc.eta = static_cast<int>(kv.get_int("strategy.eta", 10));
        sc.noise_variance = kv.get_double("strategy.noise_variance", 0.01);
        sc.grad_batch_budget = static_cast<int>(kv.get_int("strategy.budget", 0));
        sc.relu_on_activation = kv.get_bool("strategy.relu_on_activation", false);
        sc.validate();
        rc.strategies.push_back(sc);
    }

    rc.ratios = kv.get_double_list("ratio.list");
    if (rc.ratios.empty()) rc.ratios = {2.0, 3.0, 3.5, 4.0};
    for (double r : rc.ratios) {
        if (r < 1.0) throw ConfigError("ratio.list entries must be >= 1, got " + fmt_double(r));
    }

    rc.schedule.batch_size = static_cast<std::size_t>(kv.get_int("schedule.batch_size", 16));
    rc.schedule.learning_rate = kv.get_double("schedule.lr", 1e-3);
    rc.schedule.initial_epochs = static_cast<int>(kv.get_int("schedule.initial_epochs", 3));
    rc.schedule.final_epochs = static_cast<int>(kv.get_int("schedule.final_epochs", 8));
    rc.schedule.early_stopping_patience = static_cast<int>(kv.get_int("schedule.patience", 3));
    rc.schedule.validate();

    // Regression tasks get regression defaults unless the config overrides.
    if (rc.task.kind == TaskKind::toy_pair_regression) {
        rc.schedule.eval_metric = Metric::mse;
        if (!kv.has("schedule.initial_epochs")) rc.schedule.initial_epochs = 8;
        if (!kv.has("schedule.final_epochs")) rc.schedule.final_epochs = 10;
    }

    std::uint64_t default_seed = 0;
    if (const char* env = std::getenv("DEEPCUTS_SEED"); env != nullptr && *env != '\0') {
        try {
            default_seed = std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("DEEPCUTS_SEED is not an unsigned integer: '") + env + "'");
        }
    }
    if (kv.has("seed.list")) {
        for (double s : kv.get_double_list("seed.list")) {
            rc.seeds.push_back(static_cast<std::uint64_t>(s));
        }
    } else {
        rc.seeds.push_back(kv.get_u64("seed", default_seed));
    }
    if (rc.seeds.empty()) throw ConfigError("seed.list must not be empty");

    rc.out_dir = kv.get_string("out", "runs");
    rc.rewind_mode = rewind_mode_from_name(kv.get_string("rewind", "pre_finetune"));
    rc.jobs = static_cast<int>(kv.get_int("jobs", 1));
    if (rc.jobs < 1) throw ConfigError("jobs must be at least 1");
    rc.resume = kv.get_bool("resume", false);

    rc.canonical_text = kv.canonical({"out", "jobs", "resume"});
    return rc;
}

std::string RunConfig::seed_hash(std::uint64_t seed) const {
    return hex64(fnv1a(canonical_text + "|seed=" + std::to_string(seed)));
}

std::string RunConfig::score_hash(const StrategyConfig& strategy, std::uint64_t seed) const {
    std::string tail = std::string("|strategy=") + strategy_name(strategy.kind) +
                       "|lambda=" + fmt_double(strategy.lambda) +
                       "|eta=" + std::to_string(strategy.eta) +
                       "|var=" + fmt_double(strategy.noise_variance) +
                       "|budget=" + std::to_string(strategy.resolved_budget()) +
                       "|relu=" + (strategy.relu_on_activation ? "1" : "0") +
                       "|seed=" + std::to_string(seed);
    return hex64(fnv1a(canonical_text + tail));
}

std::string RunConfig::cell_hash(const StrategyConfig& strategy, double ratio,
                                 std::uint64_t seed) const {
    return hex64(fnv1a(canonical_text + "|cell=" + strategy_name(strategy.kind) + "/" +
                       fmt_double(ratio) + "/" + std::to_string(seed) + "|" +
                       score_hash(strategy, seed)));
}

ModelSpec RunConfig::resolved_model(const Dataset& dataset) const {
    ModelSpec spec = model;
    spec.task_head = dataset.head();
    spec.n_classes = 2;
    if (spec.arch == Arch::miniformer) {
        if (spec.vocab_size == 0) spec.vocab_size = dataset.model_vocab();
        if (spec.vocab_size < dataset.model_vocab()) {
            throw ConfigError("model.vocab_size " + std::to_string(spec.vocab_size) +
                              " is smaller than the task needs (" +
                              std::to_string(dataset.model_vocab()) + ")");
        }
    } else {
        if (spec.mlp_widths.empty() || spec.mlp_widths[0] == 0) {
            if (spec.mlp_widths.empty()) spec.mlp_widths.push_back(0);
            spec.mlp_widths[0] = dataset.model_vocab();
        }
    }
    spec.validate();
    return spec;
}

}  // namespace deepcuts
