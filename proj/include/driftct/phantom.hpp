#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "driftct/rng.hpp"
#include "driftct/volume.hpp"

// Procedural paired phantoms: an elliptical body with embedded bone ellipsoids,
// rendered twice from one shared label field. The target is a CT-like
// piecewise intensity map (bone bright); the condition is an MR-like map
// (bone dark, soft tissue bright) under a smooth multiplicative bias field.
// Both carry per-voxel noise. Fully deterministic per (seed, subject index).

namespace driftct {

struct PairedSample {
    std::string subject;
    Volume m; // condition
    Volume c; // target
};

struct PhantomSpec {
    std::size_t size = 64;   // in-plane ny = nx
    std::size_t slices = 1;
    std::array<std::size_t, 2> body_count_range{1, 2};
    std::array<std::size_t, 2> bone_count_range{2, 4};

    struct Range {
        double lo, hi;
    };
    // target, HU-analog
    Range target_background{-1000.0, -950.0};
    Range target_soft{0.0, 100.0};
    Range target_bone{800.0, 1200.0};
    // condition, scanner-arbitrary units
    Range cond_background{20.0, 40.0};
    Range cond_soft{600.0, 800.0};
    Range cond_bone{120.0, 220.0};

    double bias_strength = 0.15;
    // noise sigma as a fraction of each modality's full class-intensity span
    double noise_level = 0.01;
    std::uint64_t seed = 0;

    void validate() const {
        if (size < 8) throw ValueError("phantom: size must be >= 8");
        if (slices == 0) throw ValueError("phantom: slices must be >= 1");
        if (body_count_range[0] < 1 || body_count_range[0] > body_count_range[1] ||
            bone_count_range[0] > bone_count_range[1]) {
            throw ValueError("phantom: invalid ellipse count range");
        }
        if (bias_strength < 0.0 || noise_level < 0.0) {
            throw ValueError("phantom: bias/noise must be >= 0");
        }
    }
};

namespace detail {

struct Ellipsoid {
    double cz, cy, cx;
    double az, ay, ax;

    bool contains(double z, double y, double x) const {
        const double dz = (z - cz) / az;
        const double dy = (y - cy) / ay;
        const double dx = (x - cx) / ax;
        return dz * dz + dy * dy + dx * dx <= 1.0;
    }
};

} // namespace detail

// Tissue labels of one phantom: 0 background, 1 soft tissue, 2 bone.
inline std::vector<std::uint8_t> phantom_labels(const PhantomSpec& spec,
                                                std::uint64_t subject_index) {
    spec.validate();
    auto rng = make_rng(spec.seed, subject_index);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double s = static_cast<double>(spec.size);
    const double nz = static_cast<double>(spec.slices);

    const auto count_in = [&](const std::array<std::size_t, 2>& r) {
        return r[0] + (r[1] > r[0] ? rng() % (r[1] - r[0] + 1) : 0);
    };

    std::vector<detail::Ellipsoid> body;
    const std::size_t n_body = count_in(spec.body_count_range);
    for (std::size_t i = 0; i < n_body; ++i) {
        detail::Ellipsoid e;
        e.cy = s * (0.46 + 0.08 * unit(rng));
        e.cx = s * (0.46 + 0.08 * unit(rng));
        e.cz = nz * 0.5;
        e.ay = s * (0.28 + 0.14 * unit(rng));
        e.ax = s * (0.28 + 0.14 * unit(rng));
        e.az = std::max(1.0, nz * (0.55 + 0.25 * unit(rng)));
        body.push_back(e);
    }

    std::vector<detail::Ellipsoid> bone;
    const std::size_t n_bone = count_in(spec.bone_count_range);
    for (std::size_t i = 0; i < n_bone; ++i) {
        detail::Ellipsoid e;
        const auto& host = body[i % body.size()];
        // keep the bone center well inside its host ellipse
        const double angle = 2.0 * 3.14159265358979323846 * unit(rng);
        const double radial = 0.55 * unit(rng);
        e.cy = host.cy + radial * host.ay * std::sin(angle);
        e.cx = host.cx + radial * host.ax * std::cos(angle);
        e.cz = nz * 0.5;
        e.ay = s * (0.05 + 0.08 * unit(rng));
        e.ax = s * (0.05 + 0.08 * unit(rng));
        e.az = std::max(1.0, nz * (0.35 + 0.45 * unit(rng)));
        bone.push_back(e);
    }

    std::vector<std::uint8_t> labels(spec.slices * spec.size * spec.size, 0);
    std::size_t idx = 0;
    for (std::size_t z = 0; z < spec.slices; ++z) {
        for (std::size_t y = 0; y < spec.size; ++y) {
            for (std::size_t x = 0; x < spec.size; ++x, ++idx) {
                const double zc = static_cast<double>(z) + 0.5;
                const double yc = static_cast<double>(y) + 0.5;
                const double xc = static_cast<double>(x) + 0.5;
                bool in_body = false;
                for (const auto& e : body) in_body = in_body || e.contains(zc, yc, xc);
                if (!in_body) continue;
                bool in_bone = false;
                for (const auto& e : bone) in_bone = in_bone || e.contains(zc, yc, xc);
                labels[idx] = in_bone ? 2 : 1;
            }
        }
    }
    return labels;
}

inline PairedSample generate_phantom_pair(const PhantomSpec& spec, std::uint64_t subject_index) {
    const auto labels = phantom_labels(spec, subject_index);

    // intensity draws continue the geometry stream so one rng covers the pair
    auto rng = make_rng(mix_seed(spec.seed, subject_index), 0x9d);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto draw = [&](PhantomSpec::Range r) { return r.lo + (r.hi - r.lo) * unit(rng); };

    const std::array<double, 3> targ_class = {draw(spec.target_background),
                                              draw(spec.target_soft), draw(spec.target_bone)};
    const std::array<double, 3> cond_class = {draw(spec.cond_background),
                                              draw(spec.cond_soft), draw(spec.cond_bone)};
    const double targ_span = spec.target_bone.hi - spec.target_background.lo;
    const double cond_span = spec.cond_soft.hi - spec.cond_background.lo;

    // smooth bias over the condition image
    const double fy = 0.4 + 0.8 * unit(rng);
    const double fx = 0.4 + 0.8 * unit(rng);
    const double py = unit(rng);
    const double px = unit(rng);
    const double two_pi = 2.0 * 3.14159265358979323846;
    const double s = static_cast<double>(spec.size);

    PairedSample pair;
    char name[32];
    std::snprintf(name, sizeof(name), "s%04llu", static_cast<unsigned long long>(subject_index));
    pair.subject = name;
    pair.c = Volume::make({spec.slices, spec.size, spec.size}, {1.0, 1.0, 1.0},
                          Modality::target);
    pair.m = Volume::make({spec.slices, spec.size, spec.size}, {1.0, 1.0, 1.0},
                          Modality::condition);

    std::normal_distribution<double> noise(0.0, 1.0);
    std::size_t idx = 0;
    for (std::size_t z = 0; z < spec.slices; ++z) {
        for (std::size_t y = 0; y < spec.size; ++y) {
            const double by = std::sin(two_pi * (fy * static_cast<double>(y) / s + py));
            for (std::size_t x = 0; x < spec.size; ++x, ++idx) {
                const std::uint8_t lab = labels[idx];
                const double bias =
                    1.0 + spec.bias_strength * by *
                              std::sin(two_pi * (fx * static_cast<double>(x) / s + px));
                pair.c.values[idx] =
                    targ_class[lab] + spec.noise_level * targ_span * noise(rng);
                pair.m.values[idx] =
                    cond_class[lab] * bias + spec.noise_level * cond_span * noise(rng);
            }
        }
    }
    return pair;
}

} // namespace driftct
