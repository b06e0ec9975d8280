#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "driftct/volume.hpp"

// The preprocessing operator applied to every volume before training or
// inference, in fixed order: isotropic resampling, central crop or zero pad
// to a uniform in-plane size, then per-scan intensity normalization to [0,1].

namespace driftct {

struct PrepConfig {
    std::array<double, 3> target_spacing{1.0, 1.0, 1.0};
    std::size_t target_inplane = 64;
    // condition scans: percentile clip then min-max
    double clip_lo_percentile = 0.5;
    double clip_hi_percentile = 99.5;
    // target scans: fixed physical window
    double window_lo = -1000.0;
    double window_hi = 2000.0;

    void validate() const {
        for (double s : target_spacing) {
            if (!(s > 0.0)) throw ValueError("prep: target spacing must be > 0");
        }
        if (target_inplane == 0) throw ValueError("prep: target in-plane size must be > 0");
        if (!(clip_lo_percentile >= 0.0 && clip_hi_percentile <= 100.0 &&
              clip_lo_percentile < clip_hi_percentile)) {
            throw ValueError("prep: invalid clip percentiles");
        }
        if (!(window_lo < window_hi)) throw ValueError("prep: invalid intensity window");
    }
};

// Per-scan record of the applied intensity mapping, kept for inversion at
// export time. normalized = (clamp(raw, lo, hi) - lo) / (hi - lo).
struct NormalizationRecord {
    double lo = 0.0;
    double hi = 1.0;
    bool constant_input = false;
    Modality modality = Modality::condition;

    double invert(double normalized) const { return lo + normalized * (hi - lo); }
};

// Linear-interpolated percentile of the values (p in [0, 100]), selection
// based rather than a full sort.
inline double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw ValueError("percentile: empty input");
    if (!(p >= 0.0 && p <= 100.0)) throw ValueError("percentile: p out of range");
    const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo),
                     values.end());
    const double vlo = values[lo];
    const double frac = rank - static_cast<double>(lo);
    if (frac == 0.0 || lo + 1 == values.size()) return vlo;
    const double vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1,
                                         values.end());
    return vlo + frac * (vhi - vlo);
}

// Trilinear resampling onto the target grid. Output shape is
// round(shape * spacing / target), voxel centers at index * spacing, edge
// clamped. Exact identity (bit-equal) when the spacing already matches.
inline Volume resample_isotropic(const Volume& v, std::array<double, 3> target_spacing) {
    v.validate();
    for (double s : target_spacing) {
        if (!(s > 0.0)) throw ValueError("resample: target spacing must be > 0");
    }
    if (v.spacing == target_spacing) return v;

    Volume out;
    out.modality = v.modality;
    out.spacing = target_spacing;
    for (int a = 0; a < 3; ++a) {
        const double extent = static_cast<double>(v.shape[a]) * v.spacing[a];
        out.shape[a] = static_cast<std::size_t>(
            std::max(1.0, std::round(extent / target_spacing[a])));
    }
    out.values.resize(out.numel());

    const auto sample = [&](double z, double y, double x) {
        const auto clamp_idx = [](double t, std::size_t n) {
            return std::clamp(t, 0.0, static_cast<double>(n - 1));
        };
        z = clamp_idx(z, v.shape[0]);
        y = clamp_idx(y, v.shape[1]);
        x = clamp_idx(x, v.shape[2]);
        const std::size_t z0 = static_cast<std::size_t>(z);
        const std::size_t y0 = static_cast<std::size_t>(y);
        const std::size_t x0 = static_cast<std::size_t>(x);
        const std::size_t z1 = std::min(z0 + 1, v.shape[0] - 1);
        const std::size_t y1 = std::min(y0 + 1, v.shape[1] - 1);
        const std::size_t x1 = std::min(x0 + 1, v.shape[2] - 1);
        const double fz = z - static_cast<double>(z0);
        const double fy = y - static_cast<double>(y0);
        const double fx = x - static_cast<double>(x0);
        const auto lerp = [](double a, double b, double t) { return a + t * (b - a); };
        const double c00 = lerp(v.at(z0, y0, x0), v.at(z0, y0, x1), fx);
        const double c01 = lerp(v.at(z0, y1, x0), v.at(z0, y1, x1), fx);
        const double c10 = lerp(v.at(z1, y0, x0), v.at(z1, y0, x1), fx);
        const double c11 = lerp(v.at(z1, y1, x0), v.at(z1, y1, x1), fx);
        return lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
    };

    std::size_t idx = 0;
    for (std::size_t z = 0; z < out.shape[0]; ++z) {
        const double zi = static_cast<double>(z) * target_spacing[0] / v.spacing[0];
        for (std::size_t y = 0; y < out.shape[1]; ++y) {
            const double yi = static_cast<double>(y) * target_spacing[1] / v.spacing[1];
            for (std::size_t x = 0; x < out.shape[2]; ++x) {
                const double xi = static_cast<double>(x) * target_spacing[2] / v.spacing[2];
                out.values[idx++] = sample(zi, yi, xi);
            }
        }
    }
    return out;
}

// Symmetric in-plane center crop (when larger) or zero pad (when smaller).
// Odd remainders put the extra row/column on the high-index side.
inline Volume crop_or_pad(const Volume& v, std::size_t target_inplane) {
    if (target_inplane == 0) throw ValueError("crop_or_pad: target must be > 0");
    const std::size_t t = target_inplane;
    if (v.shape[1] == t && v.shape[2] == t) return v;

    Volume out = Volume::make({v.shape[0], t, t}, v.spacing, v.modality, 0.0);
    // signed offset of the output window inside the input, per axis
    const auto offset = [&](std::size_t n) {
        return (static_cast<std::ptrdiff_t>(n) - static_cast<std::ptrdiff_t>(t)) / 2;
    };
    const std::ptrdiff_t oy = offset(v.shape[1]);
    const std::ptrdiff_t ox = offset(v.shape[2]);
    for (std::size_t z = 0; z < v.shape[0]; ++z) {
        for (std::size_t y = 0; y < t; ++y) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) + oy;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(v.shape[1])) continue;
            for (std::size_t x = 0; x < t; ++x) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x) + ox;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(v.shape[2])) continue;
                out.at(z, y, x) = v.at(z, static_cast<std::size_t>(iy),
                                       static_cast<std::size_t>(ix));
            }
        }
    }
    return out;
}

// Per-scan intensity normalization to [0,1]. Condition scans clip at the
// configured percentiles then min-max; target scans clip to the fixed window.
// A constant scan maps to all-0.5 and is flagged in the record.
inline std::pair<Volume, NormalizationRecord> normalize(const Volume& v,
                                                        const PrepConfig& cfg) {
    cfg.validate();
    v.validate();
    NormalizationRecord rec;
    rec.modality = v.modality;
    if (v.modality == Modality::condition) {
        rec.lo = percentile(v.values, cfg.clip_lo_percentile);
        rec.hi = percentile(v.values, cfg.clip_hi_percentile);
    } else {
        rec.lo = cfg.window_lo;
        rec.hi = cfg.window_hi;
    }
    Volume out = v;
    if (!(rec.hi > rec.lo)) {
        rec.constant_input = true;
        std::fill(out.values.begin(), out.values.end(), 0.5);
        return {std::move(out), rec};
    }
    const double scale = 1.0 / (rec.hi - rec.lo);
    for (double& x : out.values) x = (std::clamp(x, rec.lo, rec.hi) - rec.lo) * scale;
    return {std::move(out), rec};
}

// The full operator: resample -> crop/pad -> normalize, in that order.
inline std::pair<Volume, NormalizationRecord> preprocess(const Volume& v,
                                                         const PrepConfig& cfg) {
    cfg.validate();
    return normalize(crop_or_pad(resample_isotropic(v, cfg.target_spacing), cfg.target_inplane),
                     cfg);
}

} // namespace driftct
