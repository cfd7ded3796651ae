#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepcuts/model.hpp"
#include "deepcuts/strategies.hpp"

namespace deepcuts {

// Compression ratio accounting: ratio = n_total / n_kept_total, counting
// every model parameter; only the prunable set can be cut, so the kept
// fraction of prunable parameters is
//   f = (n_total / ratio - (n_total - n_prunable)) / n_prunable.
struct CompressionSpec {
    double ratio = 1.0;
    std::size_t n_total = 0;
    std::size_t n_prunable = 0;

    static CompressionSpec for_model(const Model& model, double ratio);
    double max_ratio() const;
};

// Throws InfeasibleError (naming the max achievable ratio) when even an
// empty prunable set cannot reach the ratio.
double compression_to_kept_fraction(const CompressionSpec& spec);

struct MaskTensor {
    std::string path;
    std::vector<std::uint8_t> bits;  // one byte per element, 0 or 1
    std::uint64_t kept = 0;
};

struct PruneMask {
    std::vector<MaskTensor> tensors;
    // provenance
    std::string strategy;
    double ratio = 1.0;
    std::uint64_t seed = 0;
    std::string scope;  // "layerwise" or "global"
    std::string config_hash;

    MaskTensor* find(const std::string& path);
    const MaskTensor* find(const std::string& path) const;
    std::uint64_t kept_total() const;
    std::uint64_t element_total() const;
};

// Each tensor independently keeps its round-half-up(f * n_elements) highest
// scores; ties keep the lower flat index.
PruneMask build_mask_layerwise(const ImportanceAccumulator& acc, const CompressionSpec& spec);

// One pooled threshold; kept total is exactly round-half-up(f * n_prunable);
// ties keep the earlier tensor, then the lower flat index.
PruneMask build_mask_global(const ImportanceAccumulator& acc, const CompressionSpec& spec);

// Zeroes masked elements in place. Keeping them at zero across optimizer
// steps is Adam's side of the contract.
void apply_mask(Model& model, const PruneMask& mask);

// L-infinity norm of the masked-out elements; 0 when the mask is honored.
double masked_linf_norm(const Model& model, const PruneMask& mask);

// DCMASK file format:
//   magic "DCMASK", version u16 LE, tensor count u32 LE;
//   per tensor: path (u16 LE length + UTF-8), element count u64 LE,
//   kept count u64 LE, bits packed little-endian LSB-first padded to a
//   whole byte;
//   trailer: u32 LE length + provenance JSON text.
void write_mask(const PruneMask& mask, const std::string& file);
PruneMask read_mask(const std::string& file);

}  // namespace deepcuts
