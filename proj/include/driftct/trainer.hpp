#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "driftct/adam.hpp"
#include "driftct/drift_field.hpp"
#include "driftct/generator.hpp"
#include "driftct/nn_ops.hpp"
#include "driftct/phantom.hpp"
#include "driftct/rng.hpp"
#include "driftct/tensor.hpp"

// Training: patch-based positive/negative sampling, the drifting loss with a
// gradient-blocked target, the weighted total objective, data splitting, the
// windowed early-stop rule, and the optimization loop itself.

namespace driftct {

struct TrainConfig {
    double lambda_drift = 1.0;
    double lambda_l1 = 10.0;
    std::size_t patches_per_image = 16;
    std::size_t patch_size = 16; // the paper's 64 at 512x512, scaled 8:1 for 64x64
    double lr = 1e-4;

    enum class TauMode { median_heuristic, fixed };
    TauMode tau_mode = TauMode::median_heuristic;
    double tau_fixed = 1.0;

    std::size_t early_stop_window = 20;
    double early_stop_threshold = 0.01;
    std::array<double, 3> split{0.7, 0.1, 0.2};
    std::uint64_t seed = 0;
    std::size_t batch_size = 4;
    std::size_t max_epochs = 40;

    void validate() const {
        if (lambda_drift < 0.0 || lambda_l1 < 0.0) {
            throw ValueError("train: loss weights must be >= 0");
        }
        if (patches_per_image < 1) throw ValueError("train: patches_per_image must be >= 1");
        if (patch_size < 1) throw ValueError("train: patch_size must be >= 1");
        if (!(lr > 0.0)) throw ValueError("train: lr must be > 0");
        if (tau_mode == TauMode::fixed && !(tau_fixed > 0.0)) {
            throw ValueError("train: fixed tau must be > 0");
        }
        if (early_stop_window < 1) throw ValueError("train: early_stop_window must be >= 1");
        if (!(early_stop_threshold >= 0.0 && early_stop_threshold < 1.0)) {
            throw ValueError("train: early_stop_threshold must be in [0, 1)");
        }
        double sum = 0.0;
        for (double f : split) {
            if (f < 0.0) throw ValueError("train: split fractions must be >= 0");
            sum += f;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ValueError("train: split fractions must sum to 1");
        if (batch_size < 1) throw ValueError("train: batch_size must be >= 1");
    }
};

struct LossReport {
    double drift_loss = 0.0;
    double l1_loss = 0.0;
    double total = 0.0;
    double tau_used = 0.0;
    double grad_norm = 0.0;
};

// ---------------------------------------------------------------------------
// Data splitting and patch sampling
// ---------------------------------------------------------------------------

struct DatasetSplit {
    std::vector<std::string> train, val, test;
};

// Deterministic shuffled partition at subject level. Cut points come from
// cumulative rounding; a non-empty fraction is guaranteed at least one id by
// stealing from the largest part.
inline DatasetSplit split_dataset(std::vector<std::string> ids, std::array<double, 3> fractions,
                                  std::uint64_t seed) {
    double sum = 0.0;
    std::size_t nonzero = 0;
    for (double f : fractions) {
        if (f < 0.0) throw ValueError("split: fractions must be >= 0");
        sum += f;
        if (f > 0.0) ++nonzero;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValueError("split: fractions must sum to 1");
    if (ids.empty()) throw ValueError("split: no ids");
    if (ids.size() < nonzero) {
        throw ValueError("split: " + std::to_string(ids.size()) + " ids cannot fill " +
                         std::to_string(nonzero) + " non-empty partitions");
    }

    auto rng = make_rng(seed, 0x51);
    std::shuffle(ids.begin(), ids.end(), rng);

    const double n = static_cast<double>(ids.size());
    std::array<std::size_t, 3> sizes{};
    sizes[0] = static_cast<std::size_t>(std::llround(n * fractions[0]));
    const std::size_t c2 = static_cast<std::size_t>(
        std::llround(n * (fractions[0] + fractions[1])));
    sizes[1] = c2 > sizes[0] ? c2 - sizes[0] : 0;
    sizes[2] = ids.size() - sizes[0] - sizes[1];
    for (int pass = 0; pass < 3; ++pass) {
        for (int i = 0; i < 3; ++i) {
            if (fractions[i] > 0.0 && sizes[i] == 0) {
                auto largest = std::max_element(sizes.begin(), sizes.end()) - sizes.begin();
                --sizes[largest];
                ++sizes[i];
            }
        }
    }

    DatasetSplit split;
    split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
    split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                     ids.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
    split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), ids.end());
    return split;
}

inline std::vector<PatchRef> sample_patch_offsets(std::size_t n_images, std::size_t h,
                                                  std::size_t w, std::size_t count_per_image,
                                                  std::size_t patch, std::mt19937_64& rng) {
    if (patch > h || patch > w) {
        throw ValueError("patches: size " + std::to_string(patch) + " exceeds image " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    std::uniform_int_distribution<std::size_t> dy(0, h - patch);
    std::uniform_int_distribution<std::size_t> dx(0, w - patch);
    std::vector<PatchRef> refs;
    refs.reserve(n_images * count_per_image);
    for (std::size_t i = 0; i < n_images; ++i) {
        for (std::size_t k = 0; k < count_per_image; ++k) {
            refs.push_back({i, dy(rng), dx(rng)});
        }
    }
    return refs;
}

// Plain-valued flattened patches for a [N, C, H, W] batch (no gradient link).
inline SampleSet crop_patch_set(const Tensor& batch, const std::vector<PatchRef>& refs,
                                std::size_t patch, SampleRole role) {
    const auto& s = batch.shape();
    const std::size_t c = s[1], h = s[2], w = s[3];
    SampleSet set(c * patch * patch, role);
    auto vals = batch.values();
    std::vector<double> buf(c * patch * patch);
    for (const auto& r : refs) {
        std::size_t o = 0;
        for (std::size_t ci = 0; ci < c; ++ci) {
            const double* src = vals.data() + ((r.image * c + ci) * h + r.y) * w + r.x;
            for (std::size_t y = 0; y < patch; ++y) {
                for (std::size_t x = 0; x < patch; ++x) buf[o++] = src[y * w + x];
            }
        }
        set.add(buf);
    }
    return set;
}

struct PatchSample {
    SampleSet set;
    std::vector<PatchRef> offsets; // recorded for reproducibility
};

// count patches per image at uniform random offsets, flattened into a set.
inline PatchSample sample_patches(const Tensor& image_batch, std::size_t count_per_image,
                                  std::size_t patch, std::uint64_t seed, SampleRole role) {
    const auto& s = image_batch.shape();
    if (s.size() != 4) {
        throw ShapeError("sample_patches: expected [N, C, H, W], got " + shape_str(s));
    }
    auto rng = make_rng(seed, 0x9a7c);
    auto refs = sample_patch_offsets(s[0], s[2], s[3], count_per_image, patch, rng);
    auto set = crop_patch_set(image_batch, refs, patch, role);
    return {std::move(set), std::move(refs)};
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct DriftLossConfig {
    TrainConfig::TauMode tau_mode = TrainConfig::TauMode::median_heuristic;
    double tau_fixed = 1.0;
    // when the negatives are the generated patches themselves, negative i is
    // excluded for query i
    bool negatives_are_queries = true;
};

struct DriftLossResult {
    Tensor loss;
    double tau_used = 0.0;
};

// For each generated patch q, the regression target is the gradient-blocked
// q + V(q); the loss is the mean squared residual over patches and pixels.
// Hence d(loss)/dq = -2 V / N with N the number of averaged scalars.
inline DriftLossResult drift_loss(const Tensor& generated_patches, const SampleSet& positives,
                                  const SampleSet& negatives, const DriftLossConfig& cfg) {
    const auto& s = generated_patches.shape();
    if (s.size() != 4) {
        throw ShapeError("drift_loss: expected [P, C, s, s] patches, got " + shape_str(s));
    }
    const std::size_t p = s[0];
    const std::size_t dim = s[1] * s[2] * s[3];
    if (positives.dim() != dim || negatives.dim() != dim) {
        throw ShapeError("drift_loss: patch dimension " + std::to_string(dim) +
                         " does not match sample sets (" + std::to_string(positives.dim()) +
                         ", " + std::to_string(negatives.dim()) + ")");
    }
    if (cfg.negatives_are_queries && negatives.count() != p) {
        throw ValueError("drift_loss: self-exclusion requires one negative per query");
    }

    // field math runs on raw values, outside gradient recording
    const auto gv = generated_patches.values();
    SampleSet queries = SampleSet::from_rows(
        dim, std::vector<double>(gv.begin(), gv.end()), SampleRole::negative);

    double tau = cfg.tau_fixed;
    if (cfg.tau_mode == TrainConfig::TauMode::median_heuristic) {
        tau = median_heuristic_tau(queries, positives);
    }
    const KernelConfig kernel_cfg{tau};
    const auto fields =
        drift_field_batch(queries, positives, negatives, kernel_cfg, cfg.negatives_are_queries);

    std::vector<double> target(p * dim);
    for (std::size_t i = 0; i < p; ++i) {
        const auto q = queries.point(i);
        for (std::size_t j = 0; j < dim; ++j) target[i * dim + j] = q[j] + fields[i].v[j];
    }
    Tensor target_tensor(s, std::move(target)); // constant: the stop-gradient of q + V
    return {mse_mean(generated_patches, target_tensor), tau};
}

struct TotalLoss {
    Tensor total;
    LossReport report;
};

// lambda_drift * L_drift + lambda_l1 * mean |c_hat - c|.
inline TotalLoss total_loss(const Tensor& generated, const Tensor& target,
                            const std::optional<DriftLossResult>& drift,
                            const TrainConfig& cfg) {
    Tensor l1 = l1_mean(generated, target);
    TotalLoss out;
    out.report.l1_loss = l1.value();
    if (drift) {
        out.report.drift_loss = drift->loss.value();
        out.report.tau_used = drift->tau_used;
        out.total = add(scalar_mul(drift->loss, cfg.lambda_drift), scalar_mul(l1, cfg.lambda_l1));
    } else {
        out.total = scalar_mul(l1, cfg.lambda_l1);
    }
    out.report.total = out.total.value();
    return out;
}

// ---------------------------------------------------------------------------
// Early stopping
// ---------------------------------------------------------------------------

// True iff the best loss in the most recent `window` epochs failed to improve
// on the best loss before that window by more than `threshold`.
inline bool should_stop(std::span<const double> losses, std::size_t window, double threshold) {
    if (window < 1) throw ValueError("should_stop: window must be >= 1");
    if (losses.size() < window + 1) return false;
    const std::size_t cut = losses.size() - window;
    double before = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cut; ++i) before = std::min(before, losses[i]);
    double recent = std::numeric_limits<double>::infinity();
    for (std::size_t i = cut; i < losses.size(); ++i) recent = std::min(recent, losses[i]);
    return recent > (1.0 - threshold) * before;
}

// ---------------------------------------------------------------------------
// Slice dataset
// ---------------------------------------------------------------------------

struct TrainingSlice {
    std::string subject;
    std::size_t slice_index = 0;
    std::size_t h = 0, w = 0;
    std::vector<double> cond;
    std::vector<double> targ;
};

struct SliceDataset {
    std::vector<TrainingSlice> train, val, test;
    DatasetSplit split;
};

// Extracts axial slices from preprocessed pairs, keeping slices whose body
// fraction (condition intensity above `foreground_intensity`) exceeds
// `min_foreground`, and partitions them subject-level.
inline SliceDataset build_slice_dataset(const std::vector<PairedSample>& pairs,
                                        std::array<double, 3> fractions, std::uint64_t seed,
                                        double min_foreground = 0.05,
                                        double foreground_intensity = 0.05) {
    if (pairs.empty()) throw ValueError("dataset: no pairs");
    std::vector<std::string> ids;
    ids.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (p.m.shape != p.c.shape) {
            throw ValueError("dataset: pair " + p.subject + " has mismatched shapes");
        }
        ids.push_back(p.subject);
    }
    SliceDataset data;
    data.split = split_dataset(ids, fractions, seed);

    const auto bucket_of = [&](const std::string& id) -> std::vector<TrainingSlice>* {
        for (const auto& s : data.split.train) {
            if (s == id) return &data.train;
        }
        for (const auto& s : data.split.val) {
            if (s == id) return &data.val;
        }
        return &data.test;
    };

    for (const auto& p : pairs) {
        auto* bucket = bucket_of(p.subject);
        const std::size_t ny = p.m.shape[1], nx = p.m.shape[2];
        for (std::size_t z = 0; z < p.m.shape[0]; ++z) {
            const double* cond = p.m.slice(z);
            std::size_t fg = 0;
            for (std::size_t i = 0; i < ny * nx; ++i) fg += cond[i] > foreground_intensity;
            if (static_cast<double>(fg) <= min_foreground * static_cast<double>(ny * nx)) {
                continue;
            }
            TrainingSlice slice;
            slice.subject = p.subject;
            slice.slice_index = z;
            slice.h = ny;
            slice.w = nx;
            slice.cond.assign(cond, cond + ny * nx);
            const double* targ = p.c.slice(z);
            slice.targ.assign(targ, targ + ny * nx);
            bucket->push_back(std::move(slice));
        }
    }
    return data;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0;
    double drift = 0.0, l1 = 0.0, total = 0.0;
    double tau = 0.0, grad_norm = 0.0;
    double val_l1 = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;
};

struct TrainResult {
    std::size_t epochs_run = 0;
    bool early_stopped = false;
    bool aborted_non_finite = false;
    std::size_t best_epoch = 0;
    double best_metric = std::numeric_limits<double>::infinity();
    std::vector<EpochStats> history;
    std::filesystem::path best_checkpoint, final_checkpoint, log_path;
};

namespace detail {

inline Tensor slice_batch(const std::vector<const TrainingSlice*>& slices, bool condition) {
    const std::size_t h = slices.front()->h, w = slices.front()->w;
    Tensor t(Shape{slices.size(), 1, h, w});
    auto vals = t.values_mut();
    for (std::size_t i = 0; i < slices.size(); ++i) {
        const auto& src = condition ? slices[i]->cond : slices[i]->targ;
        std::copy(src.begin(), src.end(), vals.begin() + static_cast<std::ptrdiff_t>(i * h * w));
    }
    return t;
}

inline Tensor noise_for(std::size_t n, std::size_t channels, std::size_t h, std::size_t w,
                        std::mt19937_64& rng) {
    return Tensor::randn(Shape{n, channels, h, w}, rng);
}

inline double validation_l1(const std::vector<TrainingSlice>& slices,
                            const GeneratorParams& params, std::uint64_t seed) {
    if (slices.empty()) return std::numeric_limits<double>::quiet_NaN();
    NoGradGuard no_grad;
    double sum = 0.0;
    for (const auto& s : slices) {
        std::vector<const TrainingSlice*> one{&s};
        Tensor m = slice_batch(one, true);
        // fixed per-slice noise so validation scores are comparable across epochs
        auto rng = make_rng(seed, fnv1a64(s.subject) ^ s.slice_index);
        Tensor eps = noise_for(1, params.spec.noise_channels, s.h, s.w, rng);
        Tensor pred = generate(m, eps, params);
        const auto pv = pred.values();
        double acc = 0.0;
        for (std::size_t i = 0; i < pv.size(); ++i) acc += std::abs(pv[i] - s.targ[i]);
        sum += acc / static_cast<double>(pv.size());
    }
    return sum / static_cast<double>(slices.size());
}

} // namespace detail

// Full optimization loop. Writes train_log.csv plus best/final checkpoints
// into out_dir. The best checkpoint is chosen by validation L1 (training
// total when the validation split is empty). Early stop watches the training
// total per the windowed-minimum rule. A non-finite loss aborts the run with
// the last good parameters saved as final.
inline TrainResult train(const SliceDataset& data, const GeneratorSpec& gspec,
                         const TrainConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    gspec.validate();
    if (data.train.empty() && cfg.max_epochs > 0) {
        throw ValueError("train: training split is empty");
    }
    std::filesystem::create_directories(out_dir);

    TrainResult result;
    result.best_checkpoint = out_dir / "best.ckpt";
    result.final_checkpoint = out_dir / "final.ckpt";
    result.log_path = out_dir / "train_log.csv";

    std::ofstream log(result.log_path);
    if (!log) throw FormatError("cannot write " + result.log_path.string());
    log << "epoch,drift_loss,l1_loss,total,tau_used,grad_norm,val_l1,wall_seconds\n";
    log.precision(10);

    GeneratorParams params = init_params(gspec, mix_seed(cfg.seed, 0x70));
    auto tensors = params.tensors();
    AdamState adam = AdamState::init(tensors);
    const AdamConfig adam_cfg{cfg.lr, 0.9, 0.999, 1e-8};

    save_params(result.final_checkpoint, params);
    save_params(result.best_checkpoint, params);

    std::vector<double> loss_history;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto rng = make_rng(cfg.seed, 0xe90c + epoch);
        std::vector<std::size_t> order(data.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);

        EpochStats stats;
        stats.epoch = epoch;
        std::size_t batches = 0;
        bool aborted = false;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<const TrainingSlice*> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
                batch.push_back(&data.train[order[i]]);
            }
            const std::size_t h = batch.front()->h, w = batch.front()->w;

            Tensor m = detail::slice_batch(batch, true);
            Tensor c = detail::slice_batch(batch, false);
            Tensor eps = detail::noise_for(batch.size(), gspec.noise_channels, h, w, rng);

            Tape tape;
            Tensor generated = generate(m, eps, params);

            std::optional<DriftLossResult> drift;
            if (cfg.lambda_drift != 0.0) {
                auto pos_refs = sample_patch_offsets(batch.size(), h, w, cfg.patches_per_image,
                                                     cfg.patch_size, rng);
                auto neg_refs = sample_patch_offsets(batch.size(), h, w, cfg.patches_per_image,
                                                     cfg.patch_size, rng);
                SampleSet positives =
                    crop_patch_set(c, pos_refs, cfg.patch_size, SampleRole::positive);
                Tensor gen_patches = gather_patches(generated, neg_refs, cfg.patch_size);
                SampleSet negatives = SampleSet::from_rows(
                    positives.dim(),
                    std::vector<double>(gen_patches.values().begin(),
                                        gen_patches.values().end()),
                    SampleRole::negative);
                drift = drift_loss(gen_patches, positives, negatives,
                                   {cfg.tau_mode, cfg.tau_fixed, true});
            }
            TotalLoss loss = total_loss(generated, c, drift, cfg);

            if (!std::isfinite(loss.report.total)) {
                save_params(result.final_checkpoint, params);
                result.aborted_non_finite = true;
                aborted = true;
                break;
            }

            for (auto& t : tensors) t.zero_grad();
            tape.backward(loss.total);
            double gsq = 0.0;
            for (const auto& t : tensors) {
                for (double g : t.grad()) gsq += g * g;
            }
            loss.report.grad_norm = std::sqrt(gsq);
            adam_step(tensors, adam, adam_cfg);

            stats.drift += loss.report.drift_loss;
            stats.l1 += loss.report.l1_loss;
            stats.total += loss.report.total;
            stats.tau += loss.report.tau_used;
            stats.grad_norm += loss.report.grad_norm;
            ++batches;
        }
        if (aborted) {
            result.history.push_back(stats);
            break;
        }
        const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
        stats.drift /= nb;
        stats.l1 /= nb;
        stats.total /= nb;
        stats.tau /= nb;
        stats.grad_norm /= nb;
        stats.val_l1 = detail::validation_l1(data.val, params, cfg.seed);
        stats.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        log << stats.epoch << ',' << stats.drift << ',' << stats.l1 << ',' << stats.total << ','
            << stats.tau << ',' << stats.grad_norm << ',' << stats.val_l1 << ',' << stats.seconds
            << '\n';
        log.flush();

        const double metric = data.val.empty() ? stats.total : stats.val_l1;
        if (metric < result.best_metric) {
            result.best_metric = metric;
            result.best_epoch = epoch;
            save_params(result.best_checkpoint, params);
        }

        result.history.push_back(stats);
        result.epochs_run = epoch;
        loss_history.push_back(stats.total);
        if (should_stop(loss_history, cfg.early_stop_window, cfg.early_stop_threshold)) {
            result.early_stopped = true;
            break;
        }
    }

    if (!result.aborted_non_finite) save_params(result.final_checkpoint, params);
    return result;
}

} // namespace driftct
