#include "deepcuts/masking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "deepcuts/io.hpp"

namespace deepcuts {

CompressionSpec CompressionSpec::for_model(const Model& model, double ratio) {
    return CompressionSpec{ratio, model.n_total(), model.n_prunable()};
}

double CompressionSpec::max_ratio() const {
    const std::size_t fixed = n_total - n_prunable;
    if (fixed == 0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(n_total) / static_cast<double>(fixed);
}

double compression_to_kept_fraction(const CompressionSpec& spec) {
    if (spec.ratio < 1.0) throw ValidationError("compression ratio must be at least 1");
    if (spec.n_prunable > spec.n_total) {
        throw ValidationError("prunable count exceeds total parameter count");
    }
    if (spec.n_prunable == 0) throw ValidationError("model has no prunable parameters");
    const double target_kept = static_cast<double>(spec.n_total) / spec.ratio;
    const double fixed = static_cast<double>(spec.n_total - spec.n_prunable);
    const double f = (target_kept - fixed) / static_cast<double>(spec.n_prunable);
    if (f <= 0.0) {
        std::ostringstream os;
        os << "compression ratio " << spec.ratio
           << " is infeasible: non-prunable parameters alone cap the ratio at "
           << spec.max_ratio();
        throw InfeasibleError(os.str());
    }
    return f;
}

MaskTensor* PruneMask::find(const std::string& path) {
    for (auto& t : tensors) {
        if (t.path == path) return &t;
    }
    return nullptr;
}

const MaskTensor* PruneMask::find(const std::string& path) const {
    for (const auto& t : tensors) {
        if (t.path == path) return &t;
    }
    return nullptr;
}

std::uint64_t PruneMask::kept_total() const {
    std::uint64_t n = 0;
    for (const auto& t : tensors) n += t.kept;
    return n;
}

std::uint64_t PruneMask::element_total() const {
    std::uint64_t n = 0;
    for (const auto& t : tensors) n += t.bits.size();
    return n;
}

namespace {

std::uint64_t round_half_up(double x) {
    return static_cast<std::uint64_t>(std::floor(x + 0.5));
}

void check_scores(const ImportanceAccumulator& acc) {
    for (const auto& e : acc.entries) {
        for (double v : e.scores.values) {
            if (!std::isfinite(v) || v < 0.0) {
                throw NumericError("importance scores for " + e.path +
                                   " contain negative or non-finite values");
            }
        }
    }
}

PruneMask mask_shell(const ImportanceAccumulator& acc, const CompressionSpec& spec,
                     const char* scope) {
    PruneMask mask;
    mask.strategy = strategy_name(acc.config.kind);
    mask.ratio = spec.ratio;
    mask.scope = scope;
    for (const auto& e : acc.entries) {
        MaskTensor t;
        t.path = e.path;
        t.bits.assign(e.scores.size(), 0);
        mask.tensors.push_back(std::move(t));
    }
    return mask;
}

}  // namespace

PruneMask build_mask_layerwise(const ImportanceAccumulator& acc, const CompressionSpec& spec) {
    const double f = compression_to_kept_fraction(spec);
    check_scores(acc);
    PruneMask mask = mask_shell(acc, spec, "layerwise");
    for (std::size_t ti = 0; ti < acc.entries.size(); ++ti) {
        const auto& scores = acc.entries[ti].scores.values;
        MaskTensor& t = mask.tensors[ti];
        const std::uint64_t keep = std::min<std::uint64_t>(
            scores.size(), round_half_up(f * static_cast<double>(scores.size())));
        std::vector<std::uint32_t> order(scores.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            return scores[a] > scores[b];
        });
        for (std::uint64_t i = 0; i < keep; ++i) t.bits[order[i]] = 1;
        t.kept = keep;
    }
    return mask;
}

PruneMask build_mask_global(const ImportanceAccumulator& acc, const CompressionSpec& spec) {
    const double f = compression_to_kept_fraction(spec);
    check_scores(acc);
    PruneMask mask = mask_shell(acc, spec, "global");

    std::size_t total = 0;
    for (const auto& e : acc.entries) total += e.scores.size();
    if (total != spec.n_prunable) {
        throw ShapeError("score coverage (" + std::to_string(total) +
                         " elements) does not match n_prunable (" +
                         std::to_string(spec.n_prunable) + ")");
    }

    struct Item {
        double score;
        std::uint32_t tensor;
        std::uint32_t index;
    };
    std::vector<Item> items;
    items.reserve(total);
    for (std::size_t ti = 0; ti < acc.entries.size(); ++ti) {
        const auto& scores = acc.entries[ti].scores.values;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            items.push_back({scores[i], static_cast<std::uint32_t>(ti),
                             static_cast<std::uint32_t>(i)});
        }
    }
    const std::uint64_t keep =
        std::min<std::uint64_t>(total, round_half_up(f * static_cast<double>(spec.n_prunable)));
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.tensor != b.tensor) return a.tensor < b.tensor;
        return a.index < b.index;
    });
    for (std::uint64_t i = 0; i < keep; ++i) {
        MaskTensor& t = mask.tensors[items[i].tensor];
        t.bits[items[i].index] = 1;
        t.kept += 1;
    }
    return mask;
}

void apply_mask(Model& model, const PruneMask& mask) {
    std::size_t covered = 0;
    for (const Parameter* p : model.params()) {
        if (p->prunable) covered += 1;
    }
    if (covered != mask.tensors.size()) {
        throw ShapeError("mask covers " + std::to_string(mask.tensors.size()) +
                         " tensors, model has " + std::to_string(covered) + " prunable tensors");
    }
    for (const MaskTensor& t : mask.tensors) {
        Parameter* p = model.find_param(t.path);
        if (p == nullptr || !p->prunable) {
            throw ShapeError("mask tensor " + t.path + " is not a prunable model parameter");
        }
        if (p->tensor.size() != t.bits.size()) {
            throw ShapeError("mask size mismatch at " + t.path + ": " +
                             std::to_string(t.bits.size()) + " bits vs " +
                             std::to_string(p->tensor.size()) + " elements");
        }
        for (std::size_t i = 0; i < t.bits.size(); ++i) {
            if (t.bits[i] == 0) p->tensor.values[i] = 0.0;
        }
    }
}

double masked_linf_norm(const Model& model, const PruneMask& mask) {
    double worst = 0.0;
    for (const MaskTensor& t : mask.tensors) {
        const Parameter* p = model.find_param(t.path);
        if (p == nullptr) throw ShapeError("mask tensor " + t.path + " missing from model");
        for (std::size_t i = 0; i < t.bits.size(); ++i) {
            if (t.bits[i] == 0) worst = std::max(worst, std::fabs(p->tensor.values[i]));
        }
    }
    return worst;
}

void write_mask(const PruneMask& mask, const std::string& file) {
    std::string out = "DCMASK";
    auto put_u16 = [&](std::uint16_t v) {
        out.push_back(static_cast<char>(v & 0xff));
        out.push_back(static_cast<char>((v >> 8) & 0xff));
    };
    auto put_u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    auto put_u64 = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put_u16(1);
    put_u32(static_cast<std::uint32_t>(mask.tensors.size()));
    for (const MaskTensor& t : mask.tensors) {
        put_u16(static_cast<std::uint16_t>(t.path.size()));
        out += t.path;
        put_u64(t.bits.size());
        put_u64(t.kept);
        std::uint8_t byte = 0;
        for (std::size_t i = 0; i < t.bits.size(); ++i) {
            if (t.bits[i]) byte |= static_cast<std::uint8_t>(1u << (i % 8));
            if (i % 8 == 7) {
                out.push_back(static_cast<char>(byte));
                byte = 0;
            }
        }
        if (t.bits.size() % 8 != 0) out.push_back(static_cast<char>(byte));
    }
    nlohmann::json j;
    j["strategy"] = mask.strategy;
    j["ratio"] = mask.ratio;
    j["seed"] = mask.seed;
    j["scope"] = mask.scope;
    if (!mask.config_hash.empty()) j["config_hash"] = mask.config_hash;
    const std::string trailer = j.dump();
    put_u32(static_cast<std::uint32_t>(trailer.size()));
    out += trailer;
    atomic_write_file(file, out);
}

PruneMask read_mask(const std::string& file) {
    const std::string data = read_file_bytes(file);
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (pos + n > data.size()) throw FormatError("truncated mask file " + file);
    };
    auto get_u16 = [&]() -> std::uint16_t {
        need(2);
        std::uint16_t v = static_cast<std::uint8_t>(data[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(data[pos + 1])) << 8);
        pos += 2;
        return v;
    };
    auto get_u32 = [&]() -> std::uint32_t {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[pos + static_cast<std::size_t>(i)])) << (8 * i);
        pos += 4;
        return v;
    };
    auto get_u64 = [&]() -> std::uint64_t {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data[pos + static_cast<std::size_t>(i)])) << (8 * i);
        pos += 8;
        return v;
    };

    need(6);
    if (data.substr(0, 6) != "DCMASK") throw FormatError("bad magic in mask file " + file);
    pos = 6;
    const std::uint16_t version = get_u16();
    if (version != 1) throw FormatError("unsupported mask version in " + file);
    const std::uint32_t count = get_u32();
    PruneMask mask;
    for (std::uint32_t ti = 0; ti < count; ++ti) {
        MaskTensor t;
        const std::uint16_t plen = get_u16();
        need(plen);
        t.path = data.substr(pos, plen);
        pos += plen;
        const std::uint64_t n_elem = get_u64();
        t.kept = get_u64();
        const std::size_t n_bytes = static_cast<std::size_t>((n_elem + 7) / 8);
        need(n_bytes);
        t.bits.assign(n_elem, 0);
        std::uint64_t popcount = 0;
        for (std::uint64_t i = 0; i < n_elem; ++i) {
            const std::uint8_t byte = static_cast<std::uint8_t>(data[pos + static_cast<std::size_t>(i / 8)]);
            t.bits[i] = (byte >> (i % 8)) & 1u;
            popcount += t.bits[i];
        }
        pos += n_bytes;
        if (popcount != t.kept) {
            throw FormatError("mask file " + file + ": kept count " + std::to_string(t.kept) +
                              " does not match popcount " + std::to_string(popcount) + " at " + t.path);
        }
        mask.tensors.push_back(std::move(t));
    }
    if (pos < data.size()) {
        const std::uint32_t tlen = get_u32();
        need(tlen);
        nlohmann::json j = nlohmann::json::parse(data.substr(pos, tlen), nullptr, false);
        if (!j.is_discarded()) {
            mask.strategy = j.value("strategy", "");
            mask.ratio = j.value("ratio", 1.0);
            mask.seed = j.value("seed", std::uint64_t{0});
            mask.scope = j.value("scope", "");
            mask.config_hash = j.value("config_hash", "");
        }
        pos += tlen;
    }
    return mask;
}

}  // namespace deepcuts
