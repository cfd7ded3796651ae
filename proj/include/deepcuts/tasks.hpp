#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepcuts/batch.hpp"
#include "deepcuts/error.hpp"
#include "deepcuts/model_spec.hpp"

namespace deepcuts {

// Reserved token ids; byte b maps to id b + kByteOffset.
constexpr int kPad = 0;
constexpr int kCls = 1;
constexpr int kSep = 2;
constexpr int kByteOffset = 3;

enum class TaskKind { planted_classify, toy_acceptability, toy_pair_regression };

const char* task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

struct Example {
    std::vector<int> token_ids;
    std::vector<int> segment_ids;
    int class_label = 0;
    double float_label = 0.0;
};

struct TaskSpec {
    TaskKind kind = TaskKind::planted_classify;
    std::size_t train_size = 1200;
    std::size_t val_size = 0;  // 0 -> 10% of train_size
    std::uint64_t seed = 0;
    // generator parameters
    std::size_t vocab = 48;           // distinct byte values used by the generator
    std::size_t seq_len = 12;         // content tokens per sentence (before CLS/SEP)
    double teacher_sparsity = 0.25;   // fraction of vocab the planted teacher uses

    std::size_t resolved_val_size() const {
        return val_size > 0 ? val_size : std::max<std::size_t>(1, train_size / 10);
    }
};

// Ground truth retained by generated datasets: the sparse teacher (planted
// classification) or the forbidden-bigram set (acceptability).
struct TeacherInfo {
    std::vector<double> token_weights;  // indexed by token id; zero off support
    std::vector<int> support;           // token ids with nonzero teacher weight
    std::vector<std::pair<int, int>> forbidden_bigrams;
    double threshold = 0.0;
};

struct Dataset {
    TaskKind kind = TaskKind::planted_classify;
    bool regression = false;
    std::vector<Example> train;
    std::vector<Example> val;
    TeacherInfo teacher;
    std::size_t max_token_id = 0;

    TaskHead head() const {
        return regression ? TaskHead::scaled_sigmoid_regressor : TaskHead::classifier;
    }
    // Smallest vocab size a model needs for this dataset.
    std::size_t model_vocab() const { return max_token_id + 1; }
};

Dataset make_task(const TaskSpec& spec);

Example tokenize_single(const std::string& text, std::size_t max_seq_len);
Example tokenize_pair(const std::string& text_a, const std::string& text_b,
                      std::size_t max_seq_len);
// Inverse of tokenize_single for unpadded examples.
std::string detokenize_single(const Example& ex);

// Deterministic shuffled batch stream over one pass of the examples; the
// final partial batch is included; sequences are padded to the longest in
// each batch.
std::vector<Batch> batches(const std::vector<Example>& examples, std::size_t batch_size,
                           std::uint64_t shuffle_seed, bool regression);

// Line format: token ids space-separated, tab, segment ids, tab, label.
void export_dataset(const std::vector<Example>& examples, bool regression,
                    const std::string& file);
std::vector<Example> import_dataset(const std::string& file, bool regression);

}  // namespace deepcuts
