#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "driftct/generator.hpp"
#include "driftct/rng.hpp"
#include "driftct/tensor.hpp"

// Image-quality metrics on normalized [0,1] images, the repeated-sampling
// uncertainty map, and the inference timing harness.

namespace driftct {

inline void require_same_image(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("metrics: image sizes differ: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
}

inline double mse(std::span<const double> a, std::span<const double> b) {
    require_same_image(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

inline double rmse(std::span<const double> a, std::span<const double> b) {
    return std::sqrt(mse(a, b));
}

// PSNR is capped at a sentinel when the images match exactly (MSE = 0).
constexpr double kPsnrCap = 99.0;

struct PsnrResult {
    double db = 0.0;
    bool exact_match = false;
};

inline PsnrResult psnr(std::span<const double> a, std::span<const double> b, double peak = 1.0) {
    const double m = mse(a, b);
    if (m == 0.0) return {kPsnrCap, true};
    return {10.0 * std::log10(peak * peak / m), false};
}

// ---------------------------------------------------------------------------
// SSIM: single scale, Gaussian window, mean over fully-valid window positions.
// ---------------------------------------------------------------------------

struct SsimConfig {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;

    void validate() const {
        if (window % 2 == 0 || window < 3) throw ValueError("ssim: window must be odd and >= 3");
        if (!(sigma > 0.0)) throw ValueError("ssim: sigma must be > 0");
        if (!(dynamic_range > 0.0)) throw ValueError("ssim: dynamic range must be > 0");
    }
};

namespace detail {

inline std::vector<double> gaussian_window_1d(std::size_t window, double sigma) {
    std::vector<double> g(window);
    const double c = (static_cast<double>(window) - 1.0) / 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < window; ++i) {
        const double d = static_cast<double>(i) - c;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += g[i];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Valid-mode separable Gaussian filter of an h x w image.
inline std::vector<double> gaussian_filter_valid(const double* img, std::size_t h, std::size_t w,
                                                 const std::vector<double>& g) {
    const std::size_t k = g.size();
    const std::size_t wo = w - k + 1;
    const std::size_t ho = h - k + 1;
    std::vector<double> rows(h * wo);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < wo; ++x) {
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += g[i] * img[y * w + x + i];
            rows[y * wo + x] = s;
        }
    }
    std::vector<double> out(ho * wo);
    for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t x = 0; x < wo; ++x) {
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += g[i] * rows[(y + i) * wo + x];
            out[y * wo + x] = s;
        }
    }
    return out;
}

} // namespace detail

inline double ssim(std::span<const double> a, std::span<const double> b, std::size_t h,
                   std::size_t w, const SsimConfig& cfg = {}) {
    cfg.validate();
    require_same_image(a, b);
    if (a.size() != h * w) {
        throw ShapeError("ssim: image size " + std::to_string(a.size()) + " != " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    if (h < cfg.window || w < cfg.window) {
        throw ValueError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " smaller than window " + std::to_string(cfg.window));
    }
    const auto g = detail::gaussian_window_1d(cfg.window, cfg.sigma);
    std::vector<double> aa(a.size()), bb(b.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = detail::gaussian_filter_valid(a.data(), h, w, g);
    const auto mu_b = detail::gaussian_filter_valid(b.data(), h, w, g);
    const auto e_aa = detail::gaussian_filter_valid(aa.data(), h, w, g);
    const auto e_bb = detail::gaussian_filter_valid(bb.data(), h, w, g);
    const auto e_ab = detail::gaussian_filter_valid(ab.data(), h, w, g);

    const double c1 = cfg.k1 * cfg.dynamic_range * cfg.k1 * cfg.dynamic_range;
    const double c2 = cfg.k2 * cfg.dynamic_range * cfg.k2 * cfg.dynamic_range;
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i];
        const double vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
        sum += num / den;
    }
    return sum / static_cast<double>(mu_a.size());
}

// ---------------------------------------------------------------------------
// Aggregated per-slice report
// ---------------------------------------------------------------------------

struct MetricsReport {
    std::vector<double> ssim_per_slice;
    std::vector<double> psnr_per_slice;
    std::vector<double> rmse_per_slice;

    static std::pair<double, double> mean_std(const std::vector<double>& v) {
        if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(),
                               std::numeric_limits<double>::quiet_NaN()};
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) /
                            static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        return {mean, std::sqrt(var)};
    }
};

// Mean forward-difference gradient magnitude; the sharpness statistic.
inline double mean_gradient_magnitude(std::span<const double> img, std::size_t h,
                                      std::size_t w) {
    if (img.size() != h * w || h < 2 || w < 2) {
        throw ShapeError("gradient magnitude: bad image dims");
    }
    double sum = 0.0;
    for (std::size_t y = 0; y + 1 < h; ++y) {
        for (std::size_t x = 0; x + 1 < w; ++x) {
            const double gx = img[y * w + x + 1] - img[y * w + x];
            const double gy = img[(y + 1) * w + x] - img[y * w + x];
            sum += std::sqrt(gx * gx + gy * gy);
        }
    }
    return sum / static_cast<double>((h - 1) * (w - 1));
}

// Energy distance between two sample sets of equal-dimension vectors:
// 2 E||X-Y|| - E||X-X'|| - E||Y-Y'||.
inline double energy_distance(const std::vector<std::vector<double>>& xs,
                              const std::vector<std::vector<double>>& ys) {
    if (xs.empty() || ys.empty()) throw ValueError("energy distance: empty sample set");
    const auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    };
    double cross = 0.0;
    for (const auto& x : xs) {
        for (const auto& y : ys) cross += dist(x, y);
    }
    cross /= static_cast<double>(xs.size() * ys.size());
    double within_x = 0.0;
    for (const auto& x : xs) {
        for (const auto& x2 : xs) within_x += dist(x, x2);
    }
    within_x /= static_cast<double>(xs.size() * xs.size());
    double within_y = 0.0;
    for (const auto& y : ys) {
        for (const auto& y2 : ys) within_y += dist(y, y2);
    }
    within_y /= static_cast<double>(ys.size() * ys.size());
    return 2.0 * cross - within_x - within_y;
}

// ---------------------------------------------------------------------------
// Repeated-sampling uncertainty
// ---------------------------------------------------------------------------

struct UncertaintyMap {
    std::size_t h = 0, w = 0;
    std::size_t k = 0;
    std::vector<double> stddev; // per-pixel population standard deviation
};

// K generations with distinct noise seeds; per-pixel population standard
// deviation (divide by K). Per-pixel values are sorted before accumulation,
// so the map is bit-identical under any ordering of the seeds.
inline UncertaintyMap uncertainty_map(const Tensor& m, const GeneratorParams& params,
                                      std::span<const std::uint64_t> seeds) {
    if (seeds.empty()) throw ValueError("uncertainty: need at least one seed");
    NoGradGuard no_grad;
    const std::size_t h = m.shape()[2], w = m.shape()[3];
    const std::size_t k = seeds.size();
    std::vector<std::vector<double>> outputs;
    outputs.reserve(k);
    for (std::uint64_t seed : seeds) {
        auto rng = make_rng(seed, 0xe9);
        Tensor eps = Tensor::randn(Shape{1, params.spec.noise_channels, h, w}, rng);
        Tensor pred = generate(m, eps, params);
        outputs.emplace_back(pred.values().begin(), pred.values().end());
    }
    UncertaintyMap map;
    map.h = h;
    map.w = w;
    map.k = k;
    map.stddev.assign(h * w, 0.0);
    std::vector<double> pixel(k);
    for (std::size_t i = 0; i < h * w; ++i) {
        for (std::size_t j = 0; j < k; ++j) pixel[j] = outputs[j][i];
        std::sort(pixel.begin(), pixel.end());
        double mean = 0.0;
        for (double v : pixel) mean += v;
        mean /= static_cast<double>(k);
        double var = 0.0;
        for (double v : pixel) var += (v - mean) * (v - mean);
        map.stddev[i] = std::sqrt(var / static_cast<double>(k));
    }
    return map;
}

inline std::vector<std::uint64_t> uncertainty_seeds(std::uint64_t base, std::size_t k) {
    std::vector<std::uint64_t> seeds(k);
    for (std::size_t i = 0; i < k; ++i) seeds[i] = mix_seed(base, 0xced + i);
    return seeds;
}

// ---------------------------------------------------------------------------
// Inference timing
// ---------------------------------------------------------------------------

struct TimingRecord {
    std::size_t batch = 1;
    std::size_t h = 0, w = 0;
    std::size_t warmup = 0;
    std::vector<double> millis; // one entry per timed repetition
    double median_ms = 0.0;
    double min_ms = 0.0;
    double max_ms = 0.0;
};

// Runs `warmup` untimed generations, then `reps` timed single-forward
// generations. Asserts that the forward-pass counter advanced exactly once
// per timed call (the one-step contract).
inline TimingRecord time_inference(const Tensor& m, const GeneratorParams& params,
                                   std::size_t warmup, std::size_t reps,
                                   std::uint64_t noise_seed = 17) {
    if (reps < 1) throw ValueError("timing: reps must be >= 1");
    NoGradGuard no_grad;
    const std::size_t h = m.shape()[2], w = m.shape()[3];
    auto rng = make_rng(noise_seed, 0x71);
    const auto make_eps = [&] {
        return Tensor::randn(Shape{m.shape()[0], params.spec.noise_channels, h, w}, rng);
    };
    for (std::size_t i = 0; i < warmup; ++i) generate(m, make_eps(), params);

    TimingRecord rec;
    rec.batch = m.shape()[0];
    rec.h = h;
    rec.w = w;
    rec.warmup = warmup;
    const std::uint64_t before = forward_pass_count();
    for (std::size_t i = 0; i < reps; ++i) {
        Tensor eps = make_eps();
        const auto t0 = std::chrono::steady_clock::now();
        Tensor pred = generate(m, eps, params);
        const auto t1 = std::chrono::steady_clock::now();
        (void)pred;
        rec.millis.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    const std::uint64_t delta = forward_pass_count() - before;
    if (delta != reps) {
        throw InternalError("timing: forward-pass counter advanced " + std::to_string(delta) +
                            " times for " + std::to_string(reps) + " generations");
    }
    auto sorted = rec.millis;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    rec.median_ms = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    rec.min_ms = sorted.front();
    rec.max_ms = sorted.back();
    return rec;
}

} // namespace driftct
