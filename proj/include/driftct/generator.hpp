#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "driftct/nn_ops.hpp"
#include "driftct/rng.hpp"
#include "driftct/tensor.hpp"

// The conditional generator: a small UNet-like encoder-decoder mapping a
// conditioning image plus a noise field to one output channel in a single
// forward pass. Noise enters as extra input channels scaled by noise_scale.
// Downsampling is a stride-2 convolution; upsampling is nearest-neighbor x2
// followed by a convolution over the concatenated skip.

namespace driftct {

struct GeneratorSpec {
    std::size_t in_channels = 2; // condition channels + noise channels
    std::size_t base_width = 16;
    std::size_t depth = 3;
    std::size_t noise_channels = 1;
    double noise_scale = 1.0;
    double lrelu_slope = 0.1;

    std::size_t cond_channels() const { return in_channels - noise_channels; }

    void validate() const {
        if (depth < 1) throw ValueError("generator: depth must be >= 1");
        if (noise_channels < 1) throw ValueError("generator: noise_channels must be >= 1");
        if (in_channels <= noise_channels) {
            throw ValueError("generator: in_channels must exceed noise_channels");
        }
        if (base_width < 1) throw ValueError("generator: base_width must be >= 1");
        if (noise_scale < 0.0) throw ValueError("generator: noise_scale must be >= 0");
    }

    bool operator==(const GeneratorSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const GeneratorSpec& s) {
    j = nlohmann::json{{"in_channels", s.in_channels}, {"base_width", s.base_width},
                       {"depth", s.depth},             {"noise_channels", s.noise_channels},
                       {"noise_scale", s.noise_scale}, {"lrelu_slope", s.lrelu_slope}};
}

inline void from_json(const nlohmann::json& j, GeneratorSpec& s) {
    j.at("in_channels").get_to(s.in_channels);
    j.at("base_width").get_to(s.base_width);
    j.at("depth").get_to(s.depth);
    j.at("noise_channels").get_to(s.noise_channels);
    j.at("noise_scale").get_to(s.noise_scale);
    j.at("lrelu_slope").get_to(s.lrelu_slope);
}

struct GeneratorParams {
    GeneratorSpec spec;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, Tensor>> items;

    Tensor& find(const std::string& name) {
        for (auto& [n, t] : items) {
            if (n == name) return t;
        }
        throw ValueError("generator: no parameter named '" + name + "'");
    }
    const Tensor& find(const std::string& name) const {
        return const_cast<GeneratorParams*>(this)->find(name);
    }

    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        out.reserve(items.size());
        for (const auto& [n, t] : items) out.push_back(t);
        return out;
    }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items) n += t.numel();
        return n;
    }
};

// Single source of truth for parameter names and shapes at a given spec.
inline std::vector<std::pair<std::string, Shape>> parameter_layout(const GeneratorSpec& spec) {
    spec.validate();
    const std::size_t v = spec.base_width;
    std::vector<std::pair<std::string, Shape>> layout;
    const auto conv = [&](const std::string& name, std::size_t cin, std::size_t cout) {
        layout.emplace_back(name + ".w", Shape{cout, cin, 3, 3});
        layout.emplace_back(name + ".b", Shape{cout});
    };
    conv("stem.conv", spec.in_channels, v);
    for (std::size_t i = 1; i <= spec.depth; ++i) {
        const std::size_t cin = v << (i - 1);
        const std::size_t cout = v << i;
        conv("down" + std::to_string(i) + ".conv1", cin, cout);
        conv("down" + std::to_string(i) + ".conv2", cout, cout);
    }
    for (std::size_t i = spec.depth; i >= 1; --i) {
        const std::size_t cbelow = v << i;
        const std::size_t cskip = v << (i - 1);
        conv("up" + std::to_string(i) + ".conv", cbelow + cskip, cskip);
    }
    conv("head.conv", v, 1);
    return layout;
}

// He-style fan-in init for the leaky-relu nonlinearity; biases start at zero.
inline GeneratorParams init_params(const GeneratorSpec& spec, std::uint64_t seed) {
    GeneratorParams params;
    params.spec = spec;
    params.seed = seed;
    auto rng = make_rng(seed, 0x6e65);
    const double gain = std::sqrt(2.0 / (1.0 + spec.lrelu_slope * spec.lrelu_slope));
    for (const auto& [name, shape] : parameter_layout(spec)) {
        if (shape.size() == 4) {
            const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
            params.items.emplace_back(
                name, Tensor::randn(shape, rng, gain / std::sqrt(fan_in), true));
        } else {
            params.items.emplace_back(name, Tensor::zeros(shape, true));
        }
    }
    return params;
}

namespace detail {

inline std::atomic<std::uint64_t>& forward_counter() {
    static std::atomic<std::uint64_t> count{0};
    return count;
}

} // namespace detail

// Total number of generator forward passes run by this process. The one-step
// inference contract is asserted against deltas of this counter.
inline std::uint64_t forward_pass_count() {
    return detail::forward_counter().load(std::memory_order_relaxed);
}

struct GenerateOptions {
    bool disable_skips = false; // test hook: zeros out skip connections
};

// One forward pass: m is [N, cond, H, W], eps is [N, noise, H, W] drawn by the
// caller from a standard normal. Returns [N, 1, H, W], linear output.
inline Tensor generate(const Tensor& m, const Tensor& eps, const GeneratorParams& params,
                       const GenerateOptions& opts = {}) {
    const GeneratorSpec& spec = params.spec;
    spec.validate();
    const auto& ms = m.shape();
    if (ms.size() != 4 || ms[1] != spec.cond_channels()) {
        throw ShapeError("generate: condition must be [N, " +
                         std::to_string(spec.cond_channels()) + ", H, W], got " +
                         shape_str(ms));
    }
    const auto& es = eps.shape();
    if (es.size() != 4 || es[0] != ms[0] || es[1] != spec.noise_channels || es[2] != ms[2] ||
        es[3] != ms[3]) {
        throw ShapeError("generate: noise must be [N, " + std::to_string(spec.noise_channels) +
                         ", H, W] matching the condition batch, got " + shape_str(es));
    }
    const std::size_t div = std::size_t{1} << spec.depth;
    if (ms[2] % div != 0 || ms[3] % div != 0) {
        const auto up = [div](std::size_t n) { return ((n + div - 1) / div) * div; };
        throw ValueError("generate: spatial size " + std::to_string(ms[2]) + "x" +
                         std::to_string(ms[3]) + " not divisible by 2^depth = " +
                         std::to_string(div) + "; pad to " + std::to_string(up(ms[2])) + "x" +
                         std::to_string(up(ms[3])));
    }

    detail::forward_counter().fetch_add(1, std::memory_order_relaxed);
    const double slope = spec.lrelu_slope;
    const auto block = [&](const Tensor& x, const std::string& name, std::size_t stride) {
        return leaky_relu(
            conv2d(x, params.find(name + ".w"), params.find(name + ".b"), stride), slope);
    };

    Tensor cur = block(concat_channels(m, scalar_mul(eps, spec.noise_scale)), "stem.conv", 1);
    std::vector<Tensor> skips;
    skips.push_back(cur);
    for (std::size_t i = 1; i <= spec.depth; ++i) {
        const std::string down = "down" + std::to_string(i);
        cur = block(cur, down + ".conv1", 2);
        cur = block(cur, down + ".conv2", 1);
        if (i < spec.depth) skips.push_back(cur);
    }
    for (std::size_t i = spec.depth; i >= 1; --i) {
        cur = upsample_nearest2(cur);
        Tensor skip = skips[i - 1];
        if (opts.disable_skips) skip = scalar_mul(skip, 0.0);
        cur = block(concat_channels(skip, cur), "up" + std::to_string(i) + ".conv", 1);
    }
    return conv2d(cur, params.find("head.conv.w"), params.find("head.conv.b"), 1);
}

// ---------------------------------------------------------------------------
// Checkpoint format: "DRIFTCKPT\n" magic, uint32 LE version, uint64 LE header
// length, JSON header {spec, seed, tensor manifest}, then the parameter blobs
// as little-endian float64 in manifest order.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCkptMagic[10] = {'D', 'R', 'I', 'F', 'T', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint32_t kCkptVersion = 1;

inline void byteswap_f64(std::vector<double>& v) {
    for (double& d : v) {
        std::uint64_t u;
        std::memcpy(&u, &d, 8);
        u = __builtin_bswap64(u);
        std::memcpy(&d, &u, 8);
    }
}

inline bool ckpt_host_le() {
    const std::uint16_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    return b == 1;
}

} // namespace detail

inline void save_params(const std::filesystem::path& path, const GeneratorParams& params) {
    nlohmann::json header;
    header["spec"] = params.spec;
    header["seed"] = params.seed;
    auto& manifest = header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : params.items) {
        manifest.push_back({{"name", name}, {"shape", t.shape()}});
    }
    const std::string hdr = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint " + path.string());
    out.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    const std::uint32_t version = detail::kCkptVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const std::uint64_t hlen = hdr.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    for (const auto& [name, t] : params.items) {
        std::vector<double> blob(t.values().begin(), t.values().end());
        if (!detail::ckpt_host_le()) detail::byteswap_f64(blob);
        out.write(reinterpret_cast<const char*>(blob.data()),
                  static_cast<std::streamsize>(blob.size() * 8));
    }
    if (!out) throw FormatError("short write to " + path.string());
}

// Loads a checkpoint. When expected is given, every tensor shape is checked
// against the expected spec's layout; the first mismatch is named.
inline GeneratorParams load_params(const std::filesystem::path& path,
                                   const GeneratorSpec* expected = nullptr) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    const auto file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);

    char magic[sizeof(detail::kCkptMagic)];
    if (file_size < sizeof(magic) + 12 ||
        !in.read(magic, sizeof(magic)) ||
        std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0) {
        throw FormatError(path.string() + ": not a checkpoint (bad magic)");
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != detail::kCkptVersion) {
        throw FormatError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version));
    }
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    if (sizeof(magic) + 12 + hlen > file_size) {
        throw FormatError(path.string() + ": truncated header");
    }
    std::string hdr(hlen, '\0');
    in.read(hdr.data(), static_cast<std::streamsize>(hlen));

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hdr);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": unreadable checkpoint header: " + e.what());
    }
    GeneratorParams params;
    try {
        params.spec = header.at("spec").get<GeneratorSpec>();
        params.seed = header.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": incomplete checkpoint header: " + e.what());
    }

    std::uint64_t payload = 0;
    std::vector<std::pair<std::string, Shape>> manifest;
    for (const auto& entry : header.at("tensors")) {
        manifest.emplace_back(entry.at("name").get<std::string>(),
                              entry.at("shape").get<Shape>());
        payload += shape_numel(manifest.back().second) * 8;
    }
    const std::uint64_t expected_size = sizeof(magic) + 12 + hlen + payload;
    if (file_size != expected_size) {
        throw FormatError(path.string() + ": payload holds " +
                          std::to_string(file_size - sizeof(magic) - 12 - hlen) +
                          " bytes, manifest implies " + std::to_string(payload));
    }

    const auto layout = parameter_layout(expected ? *expected : params.spec);
    if (manifest.size() != layout.size()) {
        throw FormatError(path.string() + ": checkpoint has " +
                          std::to_string(manifest.size()) + " tensors, spec implies " +
                          std::to_string(layout.size()));
    }
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        if (manifest[i].first != layout[i].first || manifest[i].second != layout[i].second) {
            throw FormatError(path.string() + ": tensor '" + manifest[i].first + "' has shape " +
                              shape_str(manifest[i].second) + ", spec implies '" +
                              layout[i].first + "' of shape " + shape_str(layout[i].second));
        }
    }
    if (expected && !(params.spec == *expected)) {
        throw FormatError(path.string() + ": checkpoint spec does not match the requested spec");
    }

    for (const auto& [name, shape] : manifest) {
        std::vector<double> blob(shape_numel(shape));
        in.read(reinterpret_cast<char*>(blob.data()),
                static_cast<std::streamsize>(blob.size() * 8));
        if (!detail::ckpt_host_le()) detail::byteswap_f64(blob);
        params.items.emplace_back(name, Tensor(shape, std::move(blob), true));
    }
    if (!in) throw FormatError("short read from " + path.string());
    return params;
}

} // namespace driftct
