#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftct/errors.hpp"

// The drifting field: a similarity-weighted attraction toward data samples
// minus a repulsion from generated samples, evaluated on flat vectors. The
// kernel is exp(-||a-b||_2 / tau) with the unsquared Euclidean norm. Pure
// functions throughout; no gradients are recorded here.

namespace driftct {

struct KernelConfig {
    double tau = 1.0;

    void validate() const {
        if (!(tau > 0.0) || !std::isfinite(tau)) {
            throw ValueError("kernel: tau must be finite and > 0, got " +
                             std::to_string(tau));
        }
    }
};

enum class SampleRole { positive, negative };

// A set of equal-dimension flat vectors, stored row-major.
class SampleSet {
public:
    SampleSet(std::size_t dim, SampleRole role) : dim_(dim), role_(role) {}

    static SampleSet from_rows(std::size_t dim, std::vector<double> data, SampleRole role) {
        if (dim == 0 || data.empty() || data.size() % dim != 0) {
            throw ValueError("sample set: data size " + std::to_string(data.size()) +
                             " is not a multiple of dimension " + std::to_string(dim));
        }
        SampleSet s(dim, role);
        s.data_ = std::move(data);
        return s;
    }

    void add(std::span<const double> point) {
        if (point.size() != dim_) {
            throw ShapeError("sample set: point dimension " + std::to_string(point.size()) +
                             " != " + std::to_string(dim_));
        }
        data_.insert(data_.end(), point.begin(), point.end());
    }

    std::size_t count() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
    std::size_t dim() const { return dim_; }
    SampleRole role() const { return role_; }
    bool empty() const { return data_.empty(); }

    std::span<const double> point(std::size_t i) const {
        return {data_.data() + i * dim_, dim_};
    }
    const std::vector<double>& data() const { return data_; }

private:
    std::size_t dim_;
    SampleRole role_;
    std::vector<double> data_;
};

struct DriftFieldResult {
    std::vector<double> v;       // v_plus - v_minus
    std::vector<double> v_plus;
    std::vector<double> v_minus;
    double z_p = 0.0;            // mean kernel value over positives
    double z_q = 0.0;            // mean kernel value over negatives
};

namespace detail {

inline double euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

struct FieldTerm {
    std::vector<double> v;
    double z = 0.0;
};

// Normalized kernel-weighted mean displacement toward `samples`. Weights are
// computed with the max exponent subtracted, which cancels in the normalized
// mean but keeps it well-defined when every distance is >> tau.
inline FieldTerm weighted_displacement(std::span<const double> query,
                                       const SampleSet& samples, double tau,
                                       std::optional<std::size_t> exclude) {
    const std::size_t n = samples.count();
    const std::size_t dim = samples.dim();
    std::vector<double> expo(n);
    double max_e = -std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (exclude && *exclude == i) continue;
        expo[i] = -euclidean(query, samples.point(i)) / tau;
        max_e = std::max(max_e, expo[i]);
        ++used;
    }
    FieldTerm term;
    term.v.assign(dim, 0.0);
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (exclude && *exclude == i) continue;
        const double w = std::exp(expo[i] - max_e);
        wsum += w;
        const auto p = samples.point(i);
        for (std::size_t j = 0; j < dim; ++j) term.v[j] += w * (p[j] - query[j]);
    }
    for (double& x : term.v) x /= wsum;
    term.z = std::exp(max_e) * (wsum / static_cast<double>(used));
    return term;
}

} // namespace detail

inline double kernel(std::span<const double> a, std::span<const double> b,
                     const KernelConfig& cfg) {
    cfg.validate();
    if (a.size() != b.size()) {
        throw ShapeError("kernel: dimension mismatch " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
    }
    return std::exp(-detail::euclidean(a, b) / cfg.tau);
}

struct AttractionResult {
    std::vector<double> v_plus;
    double z_p;
};

inline AttractionResult attraction(std::span<const double> query, const SampleSet& positives,
                                   const KernelConfig& cfg) {
    cfg.validate();
    if (positives.empty()) throw ValueError("attraction: positive set is empty");
    if (positives.dim() != query.size()) {
        throw ShapeError("attraction: query dimension " + std::to_string(query.size()) +
                         " != sample dimension " + std::to_string(positives.dim()));
    }
    auto term = detail::weighted_displacement(query, positives, cfg.tau, std::nullopt);
    return {std::move(term.v), term.z};
}

struct RepulsionResult {
    std::vector<double> v_minus;
    double z_q;
};

inline RepulsionResult repulsion(std::span<const double> query, const SampleSet& negatives,
                                 const KernelConfig& cfg,
                                 std::optional<std::size_t> exclude = std::nullopt) {
    cfg.validate();
    if (negatives.dim() != query.size()) {
        throw ShapeError("repulsion: query dimension " + std::to_string(query.size()) +
                         " != sample dimension " + std::to_string(negatives.dim()));
    }
    const std::size_t effective =
        negatives.count() - (exclude && *exclude < negatives.count() ? 1 : 0);
    if (effective == 0) {
        throw ValueError("repulsion: negative set is empty after self-exclusion");
    }
    auto term = detail::weighted_displacement(query, negatives, cfg.tau, exclude);
    return {std::move(term.v), term.z};
}

inline DriftFieldResult drift_field(std::span<const double> query, const SampleSet& positives,
                                    const SampleSet& negatives, const KernelConfig& cfg,
                                    std::optional<std::size_t> exclude_negative = std::nullopt) {
    auto att = attraction(query, positives, cfg);
    auto rep = repulsion(query, negatives, cfg, exclude_negative);
    DriftFieldResult r;
    r.v.resize(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) r.v[i] = att.v_plus[i] - rep.v_minus[i];
    r.v_plus = std::move(att.v_plus);
    r.v_minus = std::move(rep.v_minus);
    r.z_p = att.z_p;
    r.z_q = rep.z_q;
    return r;
}

// Maps drift_field over many queries. With exclude_matching_index, query i is
// excluded from the negative set (used when the queries are the negatives).
inline std::vector<DriftFieldResult> drift_field_batch(const SampleSet& queries,
                                                       const SampleSet& positives,
                                                       const SampleSet& negatives,
                                                       const KernelConfig& cfg,
                                                       bool exclude_matching_index = false) {
    std::vector<DriftFieldResult> out;
    out.reserve(queries.count());
    for (std::size_t i = 0; i < queries.count(); ++i) {
        std::optional<std::size_t> excl;
        if (exclude_matching_index) excl = i;
        out.push_back(drift_field(queries.point(i), positives, negatives, cfg, excl));
    }
    return out;
}

// Median of all query-to-positive distances (median heuristic). Even counts
// average the two middle values. A zero median falls back to the mean
// distance, and to 1 if that is also zero (all points coincide).
inline double median_heuristic_tau(const SampleSet& queries, const SampleSet& positives) {
    if (queries.empty() || positives.empty()) {
        throw ValueError("median heuristic: needs non-empty query and positive sets");
    }
    if (queries.dim() != positives.dim()) {
        throw ShapeError("median heuristic: dimension mismatch " +
                         std::to_string(queries.dim()) + " vs " +
                         std::to_string(positives.dim()));
    }
    std::vector<double> d;
    d.reserve(queries.count() * positives.count());
    for (std::size_t i = 0; i < queries.count(); ++i) {
        for (std::size_t j = 0; j < positives.count(); ++j) {
            d.push_back(detail::euclidean(queries.point(i), positives.point(j)));
        }
    }
    const std::size_t n = d.size();
    const std::size_t mid = n / 2;
    std::nth_element(d.begin(), d.begin() + mid, d.end());
    double med = d[mid];
    if (n % 2 == 0) {
        std::nth_element(d.begin(), d.begin() + (mid - 1), d.begin() + mid);
        med = 0.5 * (med + d[mid - 1]);
    }
    if (med > 0.0) return med;
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= static_cast<double>(n);
    return mean > 0.0 ? mean : 1.0;
}

} // namespace driftct
