#pragma once

#include <cstddef>
#include <vector>

namespace deepcuts {

// One minibatch of tokenized examples, already padded to a common length.
// Classification batches fill class_labels, regression batches float_labels.
struct Batch {
    std::vector<std::vector<int>> token_ids;
    std::vector<std::vector<int>> segment_ids;
    std::vector<int> class_labels;
    std::vector<double> float_labels;

    std::size_t size() const { return token_ids.size(); }
    std::size_t seq_len() const { return token_ids.empty() ? 0 : token_ids[0].size(); }
};

}  // namespace deepcuts
