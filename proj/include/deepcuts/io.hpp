#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepcuts/model.hpp"

namespace deepcuts {

// Binary container shared by checkpoints and score files:
//
//   magic            7 bytes ("DCMODEL") or as given ("DCSCORE")
//   format version   u16 LE
//   tensor count     u32 LE
//   per tensor:
//     path           u16 LE length + UTF-8 bytes
//     kind           u8
//     rank           u8
//     dims           rank x u32 LE
//     values         little-endian f64, row-major
//   optional trailer u32 LE length + UTF-8 JSON text
//
// Readers that stop after the tensors remain valid; the trailer carries
// provenance (config hash, strategy settings).

constexpr std::uint16_t kContainerVersion = 1;

struct ContainerEntry {
    std::string path;
    ParamKind kind = ParamKind::dense_weight;
    Tensor tensor;
};

void write_container(const std::string& file, const std::string& magic,
                     const std::vector<ContainerEntry>& entries,
                     const std::string& json_trailer);

// Throws FormatError on magic/version mismatch or truncation.
std::vector<ContainerEntry> read_container(const std::string& file, const std::string& magic,
                                           std::string* json_trailer);

// Checkpoints ("DCMODEL").
void save_checkpoint(const Model& model, const std::string& file,
                     const std::string& json_trailer = "");
// Loads values into an existing model; every path and shape must match.
void load_checkpoint(Model& model, const std::string& file);

// Atomic file replace: writes `file + ".tmp"` then renames.
void atomic_write_file(const std::string& file, const std::string& bytes);

std::string read_file_bytes(const std::string& file);

}  // namespace deepcuts
