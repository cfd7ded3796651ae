#include "deepcuts/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <sstream>

#include "deepcuts/io.hpp"
#include "deepcuts/util.hpp"

namespace deepcuts {

namespace {

void check_coverage(const PruneMask& a, const PruneMask& b) {
    if (a.tensors.size() != b.tensors.size()) {
        throw ShapeError("masks cover different tensor counts: " +
                         std::to_string(a.tensors.size()) + " vs " +
                         std::to_string(b.tensors.size()));
    }
    for (const MaskTensor& ta : a.tensors) {
        const MaskTensor* tb = b.find(ta.path);
        if (tb == nullptr) throw ShapeError("mask coverage mismatch: " + ta.path + " missing");
        if (tb->bits.size() != ta.bits.size()) {
            throw ShapeError("mask element count mismatch at " + ta.path);
        }
    }
}

double iou_of(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < n; ++i) {
        inter += (a[i] & b[i]);
        uni += (a[i] | b[i]);
    }
    if (uni == 0) return 1.0;  // both kept sets empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// encoder.layer<k>... -> k
bool layer_of(const std::string& path, std::size_t* layer) {
    constexpr const char* kPrefix = "encoder.layer";
    if (path.rfind(kPrefix, 0) != 0) return false;
    std::size_t pos = std::string(kPrefix).size();
    if (pos >= path.size() || !std::isdigit(static_cast<unsigned char>(path[pos]))) return false;
    *layer = 0;
    while (pos < path.size() && std::isdigit(static_cast<unsigned char>(path[pos]))) {
        *layer = *layer * 10 + static_cast<std::size_t>(path[pos] - '0');
        ++pos;
    }
    return true;
}

}  // namespace

std::map<std::string, double> mask_iou(const PruneMask& a, const PruneMask& b) {
    check_coverage(a, b);
    std::map<std::string, double> out;
    for (const MaskTensor& ta : a.tensors) {
        const MaskTensor* tb = b.find(ta.path);
        out[ta.path] = iou_of(ta.bits.data(), tb->bits.data(), ta.bits.size());
    }
    return out;
}

std::vector<HeadSlice> head_map(const ModelSpec& spec) {
    if (spec.arch != Arch::miniformer) {
        throw ValidationError("head map is only defined for the miniformer architecture");
    }
    spec.validate();
    const std::size_t dh = spec.d_model / spec.n_heads;
    std::vector<HeadSlice> out;
    for (std::size_t l = 0; l < spec.n_layers; ++l) {
        const std::string prefix = "encoder.layer" + std::to_string(l) + ".attn.";
        for (std::size_t h = 0; h < spec.n_heads; ++h) {
            HeadSlice slice;
            slice.layer = l;
            slice.head = h;
            for (const char* proj : {"q_proj", "k_proj", "v_proj"}) {
                // rows [h*dh, (h+1)*dh) of the (d_model x d_model) weight
                std::vector<std::size_t> widx;
                widx.reserve(dh * spec.d_model);
                for (std::size_t r = h * dh; r < (h + 1) * dh; ++r) {
                    for (std::size_t c = 0; c < spec.d_model; ++c) {
                        widx.push_back(r * spec.d_model + c);
                    }
                }
                slice.pieces.emplace_back(prefix + proj + ".weight", std::move(widx));
                std::vector<std::size_t> bidx;
                for (std::size_t r = h * dh; r < (h + 1) * dh; ++r) bidx.push_back(r);
                slice.pieces.emplace_back(prefix + proj + ".bias", std::move(bidx));
            }
            // columns [h*dh, (h+1)*dh) of the output projection weight
            std::vector<std::size_t> oidx;
            oidx.reserve(dh * spec.d_model);
            for (std::size_t r = 0; r < spec.d_model; ++r) {
                for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
                    oidx.push_back(r * spec.d_model + c);
                }
            }
            slice.pieces.emplace_back(prefix + "o_proj.weight", std::move(oidx));
            out.push_back(std::move(slice));
        }
    }
    return out;
}

std::map<std::pair<std::size_t, std::size_t>, double> head_iou(
    const PruneMask& a, const PruneMask& b, const std::vector<HeadSlice>& heads) {
    check_coverage(a, b);
    std::map<std::pair<std::size_t, std::size_t>, double> out;
    for (const HeadSlice& slice : heads) {
        std::size_t inter = 0, uni = 0;
        for (const auto& [path, indices] : slice.pieces) {
            const MaskTensor* ta = a.find(path);
            const MaskTensor* tb = b.find(path);
            if (ta == nullptr || tb == nullptr) {
                throw ShapeError("head map tensor " + path + " missing from masks");
            }
            for (std::size_t idx : indices) {
                if (idx >= ta->bits.size()) {
                    throw ShapeError("head map index " + std::to_string(idx) +
                                     " out of range for " + path);
                }
                inter += (ta->bits[idx] & tb->bits[idx]);
                uni += (ta->bits[idx] | tb->bits[idx]);
            }
        }
        out[{slice.layer, slice.head}] = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return out;
}

MaskComparison compare_masks(const PruneMask& a, const PruneMask& b,
                             const std::vector<HeadSlice>& heads) {
    MaskComparison cmp;
    cmp.per_tensor = mask_iou(a, b);
    double sum = 0.0;
    double mn = 1.0;
    std::map<std::size_t, std::pair<double, std::size_t>> layer_sums;
    for (const auto& [path, iou] : cmp.per_tensor) {
        sum += iou;
        mn = std::min(mn, iou);
        std::size_t layer = 0;
        if (layer_of(path, &layer)) {
            layer_sums[layer].first += iou;
            layer_sums[layer].second += 1;
        }
    }
    cmp.mean_iou = cmp.per_tensor.empty() ? 1.0 : sum / static_cast<double>(cmp.per_tensor.size());
    cmp.min_iou = cmp.per_tensor.empty() ? 1.0 : mn;
    for (const auto& [layer, acc] : layer_sums) {
        cmp.per_layer[layer] = acc.first / static_cast<double>(acc.second);
    }
    if (!heads.empty()) cmp.per_head = head_iou(a, b, heads);
    return cmp;
}

IouMatrix iou_matrix(const std::vector<std::pair<std::string, const PruneMask*>>& masks) {
    if (masks.size() < 2) throw ValidationError("iou_matrix needs at least 2 masks");
    IouMatrix m;
    const std::size_t n = masks.size();
    for (const auto& [name, mask] : masks) {
        (void)mask;
        m.strategies.push_back(name);
    }
    m.mean.assign(n, std::vector<double>(n, 1.0));
    m.min.assign(n, std::vector<double>(n, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto per_tensor = mask_iou(*masks[i].second, *masks[j].second);
            double sum = 0.0, mn = 1.0;
            for (const auto& [path, iou] : per_tensor) {
                sum += iou;
                mn = std::min(mn, iou);
            }
            const double mean = per_tensor.empty() ? 1.0 : sum / static_cast<double>(per_tensor.size());
            m.mean[i][j] = m.mean[j][i] = mean;
            m.min[i][j] = m.min[j][i] = per_tensor.empty() ? 1.0 : mn;
        }
    }
    return m;
}

void emit_report(const std::vector<RunReport>& reports,
                 const std::vector<ComparisonSet>& comparisons, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw DataError("cannot create output directory " + out_dir);

    {
        std::string csv = run_report_csv_header() + "\n";
        for (const RunReport& r : reports) csv += run_report_csv_row(r) + "\n";
        atomic_write_file(out_dir + "/runs.csv", csv);
    }
    {
        std::string csv = "ratio,strategy_a,strategy_b,mean_iou,min_iou\n";
        for (const ComparisonSet& c : comparisons) {
            csv += fmt_double(c.ratio) + "," + c.strategy_a + "," + c.strategy_b + "," +
                   fmt_double(c.comparison.mean_iou) + "," + fmt_double(c.comparison.min_iou) + "\n";
        }
        atomic_write_file(out_dir + "/iou_matrix.csv", csv);
    }
    {
        std::string csv = "ratio,strategy_a,strategy_b,layer,head,iou\n";
        for (const ComparisonSet& c : comparisons) {
            for (const auto& [lh, iou] : c.comparison.per_head) {
                csv += fmt_double(c.ratio) + "," + c.strategy_a + "," + c.strategy_b + "," +
                       std::to_string(lh.first) + "," + std::to_string(lh.second) + "," +
                       fmt_double(iou) + "\n";
            }
        }
        atomic_write_file(out_dir + "/head_iou.csv", csv);
    }

    // Plot data: metric vs compression ratio, one file per (task, strategy).
    std::map<std::pair<std::string, std::string>, std::map<double, std::pair<double, std::size_t>>> curves;
    for (const RunReport& r : reports) {
        auto& cell = curves[{r.task, r.strategy}][r.ratio];
        cell.first += r.final_metric;
        cell.second += 1;
    }
    for (const auto& [key, points] : curves) {
        std::ostringstream os;
        os << "# figure: task metric vs compression ratio\n";
        os << "# task=" << key.first << " strategy=" << key.second << "\n";
        os << "# x=compression_ratio y=mean_final_metric\n";
        for (const auto& [ratio, acc] : points) {
            os << fmt_double(ratio) << " " << fmt_double(acc.first / static_cast<double>(acc.second))
               << "\n";
        }
        atomic_write_file(out_dir + "/fig_metric_" + key.first + "_" + key.second + ".txt", os.str());
    }

    // Plot data: per-layer mean IOU for each compared strategy pair.
    for (const ComparisonSet& c : comparisons) {
        std::ostringstream os;
        os << "# figure: per-layer mask IOU\n";
        os << "# strategies=" << c.strategy_a << " vs " << c.strategy_b
           << " ratio=" << fmt_double(c.ratio) << "\n";
        os << "# x=encoder_layer y=mean_iou\n";
        for (const auto& [layer, iou] : c.comparison.per_layer) {
            os << layer << " " << fmt_double(iou) << "\n";
        }
        atomic_write_file(out_dir + "/fig_layer_iou_" + c.strategy_a + "_vs_" + c.strategy_b +
                              "_r" + fmt_double(c.ratio) + ".txt",
                          os.str());
        if (!c.comparison.per_head.empty()) {
            std::size_t n_heads = 0;
            for (const auto& [lh, iou] : c.comparison.per_head) {
                n_heads = std::max(n_heads, lh.second + 1);
            }
            std::ostringstream hs;
            hs << "# figure: per-attention-head mask IOU\n";
            hs << "# strategies=" << c.strategy_a << " vs " << c.strategy_b
               << " ratio=" << fmt_double(c.ratio) << "\n";
            hs << "# x=layer*n_heads+head y=iou\n";
            for (const auto& [lh, iou] : c.comparison.per_head) {
                hs << (lh.first * n_heads + lh.second) << " " << fmt_double(iou) << "\n";
            }
            atomic_write_file(out_dir + "/fig_head_iou_" + c.strategy_a + "_vs_" + c.strategy_b +
                                  "_r" + fmt_double(c.ratio) + ".txt",
                              hs.str());
        }
    }
}

}  // namespace deepcuts
