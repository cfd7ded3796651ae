#include "deepcuts/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "deepcuts/error.hpp"
#include "deepcuts/rng.hpp"

namespace deepcuts {

const char* task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::planted_classify: return "planted_classify";
        case TaskKind::toy_acceptability: return "toy_acceptability";
        case TaskKind::toy_pair_regression: return "toy_pair_regression";
    }
    return "unknown";
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "planted_classify") return TaskKind::planted_classify;
    if (name == "toy_acceptability") return TaskKind::toy_acceptability;
    if (name == "toy_pair_regression") return TaskKind::toy_pair_regression;
    throw ConfigError("unknown task kind '" + name + "'");
}

namespace {

void validate_spec(const TaskSpec& spec) {
    if (spec.vocab == 0) throw ValidationError("task vocab must be non-empty");
    if (spec.vocab > 256) throw ValidationError("byte-level vocab cannot exceed 256");
    if (spec.seq_len == 0) throw ValidationError("task seq_len must be positive");
    if (spec.train_size == 0) throw ValidationError("train_size must be positive");
    if (spec.kind == TaskKind::planted_classify &&
        (spec.teacher_sparsity <= 0.0 || spec.teacher_sparsity > 1.0)) {
        throw ValidationError("teacher_sparsity must lie in (0, 1]");
    }
}

int random_content_token(Rng& rng, std::size_t vocab) {
    return kByteOffset + static_cast<int>(rng.next_below(vocab));
}

std::vector<int> random_sequence(Rng& rng, std::size_t len, std::size_t vocab) {
    std::vector<int> ids(len);
    for (auto& id : ids) id = random_content_token(rng, vocab);
    return ids;
}

Example wrap_single(std::vector<int> content) {
    Example ex;
    ex.token_ids.reserve(content.size() + 1);
    ex.token_ids.push_back(kCls);
    ex.token_ids.insert(ex.token_ids.end(), content.begin(), content.end());
    ex.segment_ids.assign(ex.token_ids.size(), 0);
    return ex;
}

Example wrap_pair(const std::vector<int>& a, const std::vector<int>& b) {
    Example ex;
    ex.token_ids.push_back(kCls);
    ex.token_ids.insert(ex.token_ids.end(), a.begin(), a.end());
    ex.token_ids.push_back(kSep);
    const std::size_t seg_split = ex.token_ids.size();
    ex.token_ids.insert(ex.token_ids.end(), b.begin(), b.end());
    ex.token_ids.push_back(kSep);
    ex.segment_ids.assign(ex.token_ids.size(), 0);
    for (std::size_t i = seg_split; i < ex.segment_ids.size(); ++i) ex.segment_ids[i] = 1;
    return ex;
}

Dataset make_planted_classify(const TaskSpec& spec) {
    Rng rng(spec.seed);
    Dataset ds;
    ds.kind = spec.kind;
    ds.regression = false;

    const std::size_t support_size =
        std::max<std::size_t>(1, static_cast<std::size_t>(spec.teacher_sparsity *
                                                          static_cast<double>(spec.vocab) + 0.5));
    std::vector<int> candidates(spec.vocab);
    for (std::size_t i = 0; i < spec.vocab; ++i) candidates[i] = kByteOffset + static_cast<int>(i);
    for (std::size_t i = spec.vocab; i-- > 1;) {
        std::swap(candidates[i], candidates[rng.next_below(i + 1)]);
    }
    ds.teacher.token_weights.assign(kByteOffset + spec.vocab, 0.0);
    for (std::size_t i = 0; i < support_size; ++i) {
        const int id = candidates[i];
        ds.teacher.support.push_back(id);
        ds.teacher.token_weights[static_cast<std::size_t>(id)] = rng.next_gaussian();
    }
    std::sort(ds.teacher.support.begin(), ds.teacher.support.end());

    const std::size_t total = spec.train_size + spec.resolved_val_size();
    std::vector<std::vector<int>> sequences(total);
    std::vector<double> scores(total);
    for (std::size_t n = 0; n < total; ++n) {
        sequences[n] = random_sequence(rng, spec.seq_len, spec.vocab);
        double s = 0.0;
        for (int id : sequences[n]) s += ds.teacher.token_weights[static_cast<std::size_t>(id)];
        scores[n] = s;
    }
    // Median threshold keeps the labels balanced.
    std::vector<double> sorted = scores;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(total / 2), sorted.end());
    ds.teacher.threshold = sorted[total / 2];

    for (std::size_t n = 0; n < total; ++n) {
        Example ex = wrap_single(std::move(sequences[n]));
        ex.class_label = scores[n] > ds.teacher.threshold ? 1 : 0;
        (n < spec.train_size ? ds.train : ds.val).push_back(std::move(ex));
    }
    return ds;
}

Dataset make_toy_acceptability(const TaskSpec& spec) {
    Rng rng(spec.seed);
    Dataset ds;
    ds.kind = spec.kind;
    ds.regression = false;

    // Planted bigram grammar: ~8% of ordered pairs are forbidden.
    const std::size_t n_pairs = spec.vocab * spec.vocab;
    const std::size_t n_forbidden = std::max<std::size_t>(1, n_pairs / 12);
    std::set<std::pair<int, int>> forbidden;
    while (forbidden.size() < n_forbidden) {
        forbidden.emplace(random_content_token(rng, spec.vocab),
                          random_content_token(rng, spec.vocab));
    }
    ds.teacher.forbidden_bigrams.assign(forbidden.begin(), forbidden.end());

    auto is_forbidden = [&](int a, int b) { return forbidden.count({a, b}) > 0; };

    const std::size_t total = spec.train_size + spec.resolved_val_size();
    for (std::size_t n = 0; n < total; ++n) {
        std::vector<int> seq(spec.seq_len);
        seq[0] = random_content_token(rng, spec.vocab);
        for (std::size_t t = 1; t < spec.seq_len; ++t) {
            int tok = random_content_token(rng, spec.vocab);
            int guard = 0;
            while (is_forbidden(seq[t - 1], tok) && guard++ < 64) {
                tok = random_content_token(rng, spec.vocab);
            }
            seq[t] = tok;
        }
        const bool acceptable = rng.next_double() < 0.5;
        if (!acceptable && spec.seq_len >= 2) {
            const auto& bad =
                ds.teacher.forbidden_bigrams[rng.next_below(ds.teacher.forbidden_bigrams.size())];
            const std::size_t p = 1 + rng.next_below(spec.seq_len - 1);
            seq[p - 1] = bad.first;
            seq[p] = bad.second;
        }
        // Relabel from the grammar itself so labels are always consistent.
        bool violates = false;
        for (std::size_t t = 1; t < seq.size() && !violates; ++t) {
            violates = is_forbidden(seq[t - 1], seq[t]);
        }
        Example ex = wrap_single(std::move(seq));
        ex.class_label = violates ? 0 : 1;
        (n < spec.train_size ? ds.train : ds.val).push_back(std::move(ex));
    }
    return ds;
}

Dataset make_toy_pair_regression(const TaskSpec& spec) {
    Rng rng(spec.seed);
    Dataset ds;
    ds.kind = spec.kind;
    ds.regression = true;

    const std::size_t total = spec.train_size + spec.resolved_val_size();
    for (std::size_t n = 0; n < total; ++n) {
        std::vector<int> a = random_sequence(rng, spec.seq_len, spec.vocab);
        std::vector<int> b = a;
        const double mutate = rng.next_double();
        for (auto& id : b) {
            if (rng.next_double() < mutate) id = random_content_token(rng, spec.vocab);
        }
        std::set<int> sa(a.begin(), a.end());
        std::set<int> sb(b.begin(), b.end());
        std::size_t inter = 0;
        for (int id : sa) inter += sb.count(id);
        const std::size_t uni = sa.size() + sb.size() - inter;
        Example ex = wrap_pair(a, b);
        ex.float_label = uni == 0 ? 5.0 : 5.0 * static_cast<double>(inter) / static_cast<double>(uni);
        (n < spec.train_size ? ds.train : ds.val).push_back(std::move(ex));
    }
    return ds;
}

}  // namespace

Dataset make_task(const TaskSpec& spec) {
    validate_spec(spec);
    Dataset ds;
    switch (spec.kind) {
        case TaskKind::planted_classify: ds = make_planted_classify(spec); break;
        case TaskKind::toy_acceptability: ds = make_toy_acceptability(spec); break;
        case TaskKind::toy_pair_regression: ds = make_toy_pair_regression(spec); break;
    }
    std::size_t max_id = kSep;
    for (const auto* split : {&ds.train, &ds.val}) {
        for (const Example& ex : *split) {
            for (int id : ex.token_ids) max_id = std::max(max_id, static_cast<std::size_t>(id));
        }
    }
    ds.max_token_id = max_id;
    return ds;
}

Example tokenize_single(const std::string& text, std::size_t max_seq_len) {
    if (max_seq_len < 1) throw ValidationError("max_seq_len must be at least 1");
    Example ex;
    ex.token_ids.push_back(kCls);
    for (unsigned char c : text) {
        if (ex.token_ids.size() >= max_seq_len) break;
        ex.token_ids.push_back(static_cast<int>(c) + kByteOffset);
    }
    ex.segment_ids.assign(ex.token_ids.size(), 0);
    return ex;
}

Example tokenize_pair(const std::string& text_a, const std::string& text_b,
                      std::size_t max_seq_len) {
    if (text_a.empty() && text_b.empty()) {
        throw ValidationError("pair tokenization needs at least one non-empty side");
    }
    if (max_seq_len < 3) throw ValidationError("pair layout needs max_seq_len of at least 3");
    std::size_t la = text_a.size();
    std::size_t lb = text_b.size();
    // Trim the longer side first until CLS + a + SEP + b + SEP fits.
    while (la + lb + 3 > max_seq_len) {
        if (la >= lb && la > 0) {
            --la;
        } else {
            --lb;
        }
    }
    Example ex;
    ex.token_ids.push_back(kCls);
    for (std::size_t i = 0; i < la; ++i) {
        ex.token_ids.push_back(static_cast<int>(static_cast<unsigned char>(text_a[i])) + kByteOffset);
    }
    ex.token_ids.push_back(kSep);
    const std::size_t seg_split = ex.token_ids.size();
    for (std::size_t i = 0; i < lb; ++i) {
        ex.token_ids.push_back(static_cast<int>(static_cast<unsigned char>(text_b[i])) + kByteOffset);
    }
    ex.token_ids.push_back(kSep);
    ex.segment_ids.assign(ex.token_ids.size(), 0);
    for (std::size_t i = seg_split; i < ex.segment_ids.size(); ++i) ex.segment_ids[i] = 1;
    return ex;
}

std::string detokenize_single(const Example& ex) {
    std::string text;
    for (int id : ex.token_ids) {
        if (id == kCls || id == kPad) continue;
        if (id >= kByteOffset && id < kByteOffset + 256) {
            text.push_back(static_cast<char>(id - kByteOffset));
        }
    }
    return text;
}

std::vector<Batch> batches(const std::vector<Example>& examples, std::size_t batch_size,
                           std::uint64_t shuffle_seed, bool regression) {
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(shuffle_seed);
    for (std::size_t i = order.size(); i-- > 1;) {
        std::swap(order[i], order[rng.next_below(i + 1)]);
    }

    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        Batch b;
        std::size_t longest = 0;
        for (std::size_t i = start; i < end; ++i) {
            longest = std::max(longest, examples[order[i]].token_ids.size());
        }
        for (std::size_t i = start; i < end; ++i) {
            const Example& ex = examples[order[i]];
            std::vector<int> ids = ex.token_ids;
            std::vector<int> segs = ex.segment_ids;
            ids.resize(longest, kPad);
            segs.resize(longest, 0);
            b.token_ids.push_back(std::move(ids));
            b.segment_ids.push_back(std::move(segs));
            if (regression) {
                b.float_labels.push_back(ex.float_label);
            } else {
                b.class_labels.push_back(ex.class_label);
            }
        }
        out.push_back(std::move(b));
    }
    return out;
}

void export_dataset(const std::vector<Example>& examples, bool regression,
                    const std::string& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw DataError("cannot write dataset file " + file);
    out.precision(17);
    for (const Example& ex : examples) {
        for (std::size_t i = 0; i < ex.token_ids.size(); ++i) {
            if (i) out << ' ';
            out << ex.token_ids[i];
        }
        out << '\t';
        for (std::size_t i = 0; i < ex.segment_ids.size(); ++i) {
            if (i) out << ' ';
            out << ex.segment_ids[i];
        }
        out << '\t';
        if (regression) {
            out << ex.float_label;
        } else {
            out << ex.class_label;
        }
        out << '\n';
    }
}

std::vector<Example> import_dataset(const std::string& file, bool regression) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot read dataset file " + file);
    std::vector<Example> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t pos = 0;
        for (int f = 0; f < 2; ++f) {
            const std::size_t tab = line.find('\t', pos);
            if (tab == std::string::npos) {
                throw DataError("dataset line " + std::to_string(lineno) + " needs 3 tab-separated fields");
            }
            fields.push_back(line.substr(pos, tab - pos));
            pos = tab + 1;
        }
        fields.push_back(line.substr(pos));
        Example ex;
        std::istringstream ids(fields[0]), segs(fields[1]);
        int v;
        while (ids >> v) ex.token_ids.push_back(v);
        while (segs >> v) ex.segment_ids.push_back(v);
        if (ex.token_ids.size() != ex.segment_ids.size()) {
            throw DataError("dataset line " + std::to_string(lineno) + ": id/segment length mismatch");
        }
        try {
            if (regression) {
                ex.float_label = std::stod(fields[2]);
            } else {
                ex.class_label = std::stoi(fields[2]);
            }
        } catch (const std::exception&) {
            throw DataError("dataset line " + std::to_string(lineno) + ": bad label '" + fields[2] + "'");
        }
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace deepcuts
