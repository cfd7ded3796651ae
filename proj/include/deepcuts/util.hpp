#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

namespace deepcuts {

// Shortest decimal form that round-trips a double (used for file names and
// CSV cells).
inline std::string fmt_double(double v) {
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(buf, "%lf", &back);
        if (back == v) break;
    }
    return buf;
}

inline std::uint64_t fnv1a(const std::string& data, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace deepcuts
