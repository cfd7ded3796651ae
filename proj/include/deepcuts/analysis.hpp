#pragma once

#include <map>
#include <string>
#include <vector>

#include "deepcuts/lth.hpp"
#include "deepcuts/masking.hpp"
#include "deepcuts/model_spec.hpp"

namespace deepcuts {

// IOU (Jaccard similarity) of the kept sets of two masks, per tensor and
// aggregated. Defined as 1 when both kept sets are empty.
struct MaskComparison {
    std::map<std::string, double> per_tensor;
    std::map<std::size_t, double> per_layer;               // encoder layer -> mean IOU
    std::map<std::pair<std::size_t, std::size_t>, double> per_head;  // (layer, head)
    double mean_iou = 1.0;
    double min_iou = 1.0;
};

// Per-tensor IOU map; masks must cover identical tensors with identical
// element counts.
std::map<std::string, double> mask_iou(const PruneMask& a, const PruneMask& b);

// Head h owns rows [h*dh, (h+1)*dh) of the Q/K/V projection weights, the
// matching bias slices, and the matching columns of the attention output
// projection. The output-projection bias is not head-partitioned.
struct HeadSlice {
    std::size_t layer = 0;
    std::size_t head = 0;
    // (tensor path, flat element indices owned by this head)
    std::vector<std::pair<std::string, std::vector<std::size_t>>> pieces;
};

std::vector<HeadSlice> head_map(const ModelSpec& spec);

std::map<std::pair<std::size_t, std::size_t>, double> head_iou(
    const PruneMask& a, const PruneMask& b, const std::vector<HeadSlice>& heads);

MaskComparison compare_masks(const PruneMask& a, const PruneMask& b,
                             const std::vector<HeadSlice>& heads);

// Symmetric strategy-by-strategy matrices of mean / min per-tensor IOU.
struct IouMatrix {
    std::vector<std::string> strategies;
    std::vector<std::vector<double>> mean;
    std::vector<std::vector<double>> min;
};

IouMatrix iou_matrix(const std::vector<std::pair<std::string, const PruneMask*>>& masks);

// Writes runs.csv, iou_matrix.csv, head_iou.csv, and two-column plot-data
// files into out_dir. CSV schemas:
//   iou_matrix.csv: ratio,strategy_a,strategy_b,mean_iou,min_iou
//   head_iou.csv:   ratio,strategy_a,strategy_b,layer,head,iou
struct ComparisonSet {
    double ratio = 1.0;
    std::string strategy_a;
    std::string strategy_b;
    MaskComparison comparison;
};

void emit_report(const std::vector<RunReport>& reports,
                 const std::vector<ComparisonSet>& comparisons, const std::string& out_dir);

}  // namespace deepcuts
