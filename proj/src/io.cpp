#include "deepcuts/io.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace deepcuts {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    put_u64(out, bits);
}

struct Reader {
    const std::string& data;
    std::size_t pos = 0;
    std::string what;

    void need(std::size_t n) const {
        if (pos + n > data.size()) throw FormatError("truncated file: " + what);
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data[pos++]);
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint8_t>(data[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(data[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[pos + static_cast<std::size_t>(i)])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data[pos + static_cast<std::size_t>(i)])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, sizeof d);
        return d;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

std::string read_file_bytes(const std::string& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw FormatError("cannot open " + file);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void atomic_write_file(const std::string& file, const std::string& bytes) {
    const std::string tmp = file + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw FormatError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, file);
}

void write_container(const std::string& file, const std::string& magic,
                     const std::vector<ContainerEntry>& entries,
                     const std::string& json_trailer) {
    std::string out;
    out += magic;
    put_u16(out, kContainerVersion);
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const ContainerEntry& e : entries) {
        if (e.path.size() > 0xffff) throw FormatError("parameter path too long: " + e.path);
        if (e.tensor.rank() > 0xff) throw FormatError("tensor rank too large at " + e.path);
        put_u16(out, static_cast<std::uint16_t>(e.path.size()));
        out += e.path;
        out.push_back(static_cast<char>(e.kind));
        out.push_back(static_cast<char>(e.tensor.rank()));
        for (std::size_t d : e.tensor.shape) put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : e.tensor.values) put_f64(out, v);
    }
    if (!json_trailer.empty()) {
        put_u32(out, static_cast<std::uint32_t>(json_trailer.size()));
        out += json_trailer;
    }
    atomic_write_file(file, out);
}

std::vector<ContainerEntry> read_container(const std::string& file, const std::string& magic,
                                           std::string* json_trailer) {
    const std::string bytes = read_file_bytes(file);
    Reader r{bytes, 0, file};
    if (r.bytes(magic.size()) != magic) throw FormatError("bad magic in " + file);
    const std::uint16_t version = r.u16();
    if (version != kContainerVersion) {
        throw FormatError("unsupported version " + std::to_string(version) + " in " + file);
    }
    const std::uint32_t count = r.u32();
    std::vector<ContainerEntry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ContainerEntry e;
        const std::uint16_t plen = r.u16();
        e.path = r.bytes(plen);
        e.kind = param_kind_from_byte(r.u8());
        const std::uint8_t rank = r.u8();
        std::vector<std::size_t> shape(rank);
        for (std::uint8_t d = 0; d < rank; ++d) shape[d] = r.u32();
        const std::size_t n = shape_size(shape);
        std::vector<double> vals(n);
        for (std::size_t j = 0; j < n; ++j) vals[j] = r.f64();
        e.tensor = Tensor::from(std::move(shape), std::move(vals));
        entries.push_back(std::move(e));
    }
    if (json_trailer != nullptr) {
        json_trailer->clear();
        if (r.pos < bytes.size()) {
            const std::uint32_t tlen = r.u32();
            *json_trailer = r.bytes(tlen);
        }
    }
    return entries;
}

void save_checkpoint(const Model& model, const std::string& file, const std::string& json_trailer) {
    std::vector<ContainerEntry> entries;
    entries.reserve(model.params().size());
    for (const Parameter* p : model.params()) {
        ContainerEntry e;
        e.path = p->path;
        e.kind = p->kind;
        e.tensor.shape = p->tensor.shape;
        e.tensor.values = p->tensor.values;
        entries.push_back(std::move(e));
    }
    write_container(file, "DCMODEL", entries, json_trailer);
}

void load_checkpoint(Model& model, const std::string& file) {
    const auto entries = read_container(file, "DCMODEL", nullptr);
    if (entries.size() != model.params().size()) {
        throw FormatError("checkpoint " + file + " has " + std::to_string(entries.size()) +
                          " tensors, model expects " + std::to_string(model.params().size()));
    }
    for (const ContainerEntry& e : entries) {
        Parameter* p = model.find_param(e.path);
        if (p == nullptr) throw FormatError("checkpoint tensor " + e.path + " not in model");
        if (p->tensor.shape != e.tensor.shape) {
            throw FormatError("checkpoint shape mismatch at " + e.path + ": " +
                              shape_str(e.tensor.shape) + " vs " + shape_str(p->tensor.shape));
        }
        p->tensor.values = e.tensor.values;
    }
}

}  // namespace deepcuts
