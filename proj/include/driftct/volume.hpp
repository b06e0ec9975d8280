#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "driftct/errors.hpp"

// 3-d scalar volumes with spacing metadata, plus the on-disk pair format:
// a text header `<stem>.vhdr` and a raw little-endian float32 payload
// `<stem>.vraw` in C order (z, y, x). Values are doubles in memory.
//
// Header layout (one field per line, fixed order):
//   driftvol 1
//   shape <nz> <ny> <nx>
//   spacing <sz> <sy> <sx>
//   dtype float32
//   modality <condition|target>

namespace driftct {

enum class Modality { condition, target };

inline const char* modality_name(Modality m) {
    return m == Modality::condition ? "condition" : "target";
}

struct Volume {
    std::array<std::size_t, 3> shape{0, 0, 0};   // nz, ny, nx
    std::array<double, 3> spacing{1.0, 1.0, 1.0}; // sz, sy, sx in mm
    Modality modality = Modality::condition;
    std::vector<double> values;                   // C order (z, y, x)

    std::size_t numel() const { return shape[0] * shape[1] * shape[2]; }

    double& at(std::size_t z, std::size_t y, std::size_t x) {
        return values[(z * shape[1] + y) * shape[2] + x];
    }
    double at(std::size_t z, std::size_t y, std::size_t x) const {
        return values[(z * shape[1] + y) * shape[2] + x];
    }

    const double* slice(std::size_t z) const { return values.data() + z * shape[1] * shape[2]; }
    double* slice(std::size_t z) { return values.data() + z * shape[1] * shape[2]; }

    void validate() const {
        if (numel() != values.size()) {
            throw ValueError("volume: shape/value count mismatch: " + std::to_string(numel()) +
                             " vs " + std::to_string(values.size()));
        }
        for (double s : spacing) {
            if (!(s > 0.0) || !std::isfinite(s)) {
                throw ValueError("volume: spacing must be strictly positive");
            }
        }
        for (double v : values) {
            if (!std::isfinite(v)) throw ValueError("volume: non-finite value");
        }
    }

    static Volume make(std::array<std::size_t, 3> shape, std::array<double, 3> spacing,
                       Modality modality, double fill = 0.0) {
        Volume v;
        v.shape = shape;
        v.spacing = spacing;
        v.modality = modality;
        v.values.assign(shape[0] * shape[1] * shape[2], fill);
        return v;
    }
};

namespace detail {

inline std::filesystem::path raw_path_for(const std::filesystem::path& header_path) {
    auto p = header_path;
    p.replace_extension(".vraw");
    return p;
}

inline bool host_is_little_endian() {
    const std::uint16_t probe = 1;
    std::uint8_t byte;
    std::memcpy(&byte, &probe, 1);
    return byte == 1;
}

inline void byteswap_f32(std::vector<float>& v) {
    for (float& f : v) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        u = ((u & 0xff000000u) >> 24) | ((u & 0x00ff0000u) >> 8) | ((u & 0x0000ff00u) << 8) |
            ((u & 0x000000ffu) << 24);
        std::memcpy(&f, &u, 4);
    }
}

} // namespace detail

inline void write_volume(const std::filesystem::path& header_path, const Volume& v) {
    v.validate();
    const auto raw_path = detail::raw_path_for(header_path);
    {
        std::ofstream hdr(header_path);
        if (!hdr) throw FormatError("cannot write header " + header_path.string());
        hdr << "driftvol 1\n";
        hdr << "shape " << v.shape[0] << ' ' << v.shape[1] << ' ' << v.shape[2] << '\n';
        std::ostringstream sp;
        sp.precision(17);
        sp << "spacing " << v.spacing[0] << ' ' << v.spacing[1] << ' ' << v.spacing[2];
        hdr << sp.str() << '\n';
        hdr << "dtype float32\n";
        hdr << "modality " << modality_name(v.modality) << '\n';
    }
    std::vector<float> payload(v.values.size());
    for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<float>(v.values[i]);
    if (!detail::host_is_little_endian()) detail::byteswap_f32(payload);
    std::ofstream raw(raw_path, std::ios::binary);
    if (!raw) throw FormatError("cannot write payload " + raw_path.string());
    raw.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!raw) throw FormatError("short write to " + raw_path.string());
}

inline Volume read_volume(const std::filesystem::path& header_path) {
    std::ifstream hdr(header_path);
    if (!hdr) throw FormatError("cannot open header " + header_path.string());
    std::string magic;
    int version = -1;
    hdr >> magic >> version;
    if (magic != "driftvol") {
        throw FormatError(header_path.string() + ": not a driftvol header (magic '" + magic +
                          "')");
    }
    if (version != 1) {
        throw FormatError(header_path.string() + ": unsupported driftvol version " +
                          std::to_string(version));
    }
    Volume v;
    std::string key;
    std::string dtype;
    std::string modality;
    long long nz = -1, ny = -1, nx = -1;
    while (hdr >> key) {
        if (key == "shape") {
            hdr >> nz >> ny >> nx;
        } else if (key == "spacing") {
            hdr >> v.spacing[0] >> v.spacing[1] >> v.spacing[2];
        } else if (key == "dtype") {
            hdr >> dtype;
        } else if (key == "modality") {
            hdr >> modality;
        } else {
            throw FormatError(header_path.string() + ": unknown header field '" + key + "'");
        }
    }
    if (nz < 0 || ny < 0 || nx < 0) {
        throw FormatError(header_path.string() + ": missing or negative shape");
    }
    for (double s : v.spacing) {
        if (!(s > 0.0)) throw FormatError(header_path.string() + ": non-positive spacing");
    }
    if (dtype != "float32") {
        throw FormatError(header_path.string() + ": unsupported dtype '" + dtype + "'");
    }
    if (modality == "condition") {
        v.modality = Modality::condition;
    } else if (modality == "target") {
        v.modality = Modality::target;
    } else {
        throw FormatError(header_path.string() + ": unknown modality '" + modality + "'");
    }
    v.shape = {static_cast<std::size_t>(nz), static_cast<std::size_t>(ny),
               static_cast<std::size_t>(nx)};

    const auto raw_path = detail::raw_path_for(header_path);
    std::ifstream raw(raw_path, std::ios::binary | std::ios::ate);
    if (!raw) throw FormatError("cannot open payload " + raw_path.string());
    const auto actual = static_cast<std::size_t>(raw.tellg());
    const std::size_t expected = v.numel() * sizeof(float);
    if (actual != expected) {
        throw FormatError(raw_path.string() + ": payload holds " + std::to_string(actual) +
                          " bytes, header implies " + std::to_string(expected));
    }
    raw.seekg(0);
    std::vector<float> payload(v.numel());
    raw.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(expected));
    if (!raw) throw FormatError("short read from " + raw_path.string());
    if (!detail::host_is_little_endian()) detail::byteswap_f32(payload);
    v.values.assign(payload.begin(), payload.end());
    return v;
}

// 8-bit PGM preview of one slice: values clamped to [0,1] and scaled to 0..255.
inline void write_pgm(const std::filesystem::path& path, const double* values, std::size_t ny,
                      std::size_t nx) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out << "P5\n" << nx << ' ' << ny << "\n255\n";
    std::vector<unsigned char> row(nx);
    for (std::size_t y = 0; y < ny; ++y) {
        for (std::size_t x = 0; x < nx; ++x) {
            const double v = std::clamp(values[y * nx + x], 0.0, 1.0);
            row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(nx));
    }
}

} // namespace driftct
