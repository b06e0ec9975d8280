#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "driftct/drift_field.hpp"

// Independent reference implementation of the drifting field and the
// production-vs-reference comparison behind the `driftcheck` subcommand.
// The reference is a deliberately naive double loop: per-pair displacement
// vectors, unstabilized kernel weights, separate normalizer pass. Keep it
// that way; it is the oracle the fast path is checked against.

namespace driftct::check {

inline DriftFieldResult drift_field_reference(std::span<const double> query,
                                              const SampleSet& positives,
                                              const SampleSet& negatives, double tau,
                                              std::optional<std::size_t> exclude_negative =
                                                  std::nullopt) {
    const std::size_t dim = query.size();
    DriftFieldResult r;
    r.v_plus.assign(dim, 0.0);
    r.v_minus.assign(dim, 0.0);
    r.v.assign(dim, 0.0);

    double wsum_p = 0.0;
    for (std::size_t i = 0; i < positives.count(); ++i) {
        const auto c = positives.point(i);
        double dist2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) dist2 += (query[j] - c[j]) * (query[j] - c[j]);
        const double w = std::exp(-std::sqrt(dist2) / tau);
        wsum_p += w;
        for (std::size_t j = 0; j < dim; ++j) r.v_plus[j] += w * (c[j] - query[j]);
    }
    for (std::size_t j = 0; j < dim; ++j) r.v_plus[j] /= wsum_p;
    r.z_p = wsum_p / static_cast<double>(positives.count());

    double wsum_q = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < negatives.count(); ++i) {
        if (exclude_negative && *exclude_negative == i) continue;
        const auto c = negatives.point(i);
        double dist2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) dist2 += (query[j] - c[j]) * (query[j] - c[j]);
        const double w = std::exp(-std::sqrt(dist2) / tau);
        wsum_q += w;
        ++used;
        for (std::size_t j = 0; j < dim; ++j) r.v_minus[j] += w * (c[j] - query[j]);
    }
    for (std::size_t j = 0; j < dim; ++j) r.v_minus[j] /= wsum_q;
    r.z_q = wsum_q / static_cast<double>(used);

    for (std::size_t j = 0; j < dim; ++j) r.v[j] = r.v_plus[j] - r.v_minus[j];
    return r;
}

struct OracleOptions {
    std::size_t instances = 100;
    std::size_t max_queries = 32;
    std::size_t max_samples = 32;
    std::vector<std::size_t> dims = {2, 8, 64, 256, 1024, 4096};
    std::uint64_t seed = 20240901;
};

struct OracleReport {
    std::size_t instances = 0;
    std::size_t comparisons = 0;
    double max_rel_err = 0.0;
    double seconds = 0.0;
};

namespace detail {

inline double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline double rel_err(const std::vector<double>& got, const std::vector<double>& want) {
    std::vector<double> diff(got.size());
    for (std::size_t i = 0; i < got.size(); ++i) diff[i] = got[i] - want[i];
    const double denom = std::max(inf_norm(want), 1e-300);
    return inf_norm(diff) / denom;
}

} // namespace detail

// Random drift-field instances, production vs reference, worst relative error
// over V, V+, V- and the normalizers.
inline OracleReport compare_drift_field(const OracleOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    OracleReport rep;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t inst = 0; inst < opt.instances; ++inst) {
        const std::size_t dim = opt.dims[inst % opt.dims.size()];
        const std::size_t nq = 1 + rng() % opt.max_queries;
        const std::size_t np = 1 + rng() % opt.max_samples;
        const std::size_t nn = 1 + rng() % opt.max_samples;
        const double scale = std::exp(unit(rng) * 4.0 - 2.0);
        const double tau = scale * (0.25 + unit(rng) * std::sqrt(static_cast<double>(dim)));

        auto draw = [&](std::size_t rows, SampleRole role) {
            std::vector<double> data(rows * dim);
            for (double& v : data) v = scale * (unit(rng) * 2.0 - 1.0);
            return SampleSet::from_rows(dim, std::move(data), role);
        };
        const auto queries = draw(nq, SampleRole::negative);
        const auto positives = draw(np, SampleRole::positive);
        const auto negatives = draw(nn, SampleRole::negative);

        const KernelConfig cfg{tau};
        const auto got = drift_field_batch(queries, positives, negatives, cfg);
        for (std::size_t i = 0; i < queries.count(); ++i) {
            const auto want = drift_field_reference(queries.point(i), positives, negatives, tau);
            double e = detail::rel_err(got[i].v, want.v);
            e = std::max(e, detail::rel_err(got[i].v_plus, want.v_plus));
            e = std::max(e, detail::rel_err(got[i].v_minus, want.v_minus));
            e = std::max(e, std::abs(got[i].z_p - want.z_p) / std::max(want.z_p, 1e-300));
            e = std::max(e, std::abs(got[i].z_q - want.z_q) / std::max(want.z_q, 1e-300));
            rep.max_rel_err = std::max(rep.max_rel_err, e);
            ++rep.comparisons;
        }
        ++rep.instances;
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

} // namespace driftct::check
