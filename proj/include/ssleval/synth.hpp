#pragma once
#ifndef SSLEVAL_SYNTH_HPP
#define SSLEVAL_SYNTH_HPP

// Synthetic embedding sets with a planted intrinsic rank and optional cluster
// structure, and synthetic model cohorts whose downstream score falls linearly
// with intrinsic rank.
//
// frame = B z + noise, with B a d x r matrix with orthonormal columns (Gram-Schmidt
// QR of a Gaussian matrix, each column sign-fixed so its first nonzero entry is
// positive). All randomness comes from Xoshiro256 streams derived from the seed.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "ssleval/correlation.hpp"
#include "ssleval/embedstore.hpp"
#include "ssleval/error.hpp"
#include "ssleval/matrix.hpp"
#include "ssleval/rng.hpp"

namespace ssleval {

struct SynthSpec {
    std::size_t dim = 64;
    std::size_t intrinsic_rank = 8;
    std::size_t n_sequences = 100;
    std::size_t frames_per_sequence = 50;
    double noise_amplitude = 0.0;    // std of isotropic Gaussian noise in the ambient space
    std::size_t cluster_count = 0;   // 0 = one standard normal blob in the subspace
    double cluster_std = 1.0;        // per-coordinate std inside a cluster
    double cluster_separation = 20.0;  // minimum center distance, in units of cluster_std
    std::uint64_t seed = 0;

    std::size_t total_frames() const { return n_sequences * frames_per_sequence; }
};

inline void validate(const SynthSpec& spec) {
    if (spec.dim == 0 || spec.intrinsic_rank == 0 || spec.intrinsic_rank > spec.dim)
        throw Error(ErrorKind::precondition, "synth: need 1 <= intrinsic_rank <= dim");
    if (spec.n_sequences == 0 || spec.frames_per_sequence == 0)
        throw Error(ErrorKind::precondition, "synth: need at least one sequence and one frame per sequence");
    if (!(spec.noise_amplitude >= 0.0) || !(spec.cluster_std > 0.0) || !(spec.cluster_separation >= 0.0))
        throw Error(ErrorKind::precondition, "synth: noise must be >= 0 and cluster_std > 0");
    if (spec.cluster_count > spec.total_frames())
        throw Error(ErrorKind::precondition, "synth: cluster_count exceeds total frames");
}

/// d x r matrix with orthonormal columns from a seeded Gaussian draw.
inline Matrix orthonormal_basis(std::size_t dim, std::size_t rank, Xoshiro256& rng) {
    // columns stored as rows of `q` while orthogonalizing
    Matrix q(rank, dim);
    for (double& v : q.values()) v = rng.normal();
    for (std::size_t c = 0; c < rank; ++c) {
        auto col = q.row(c);
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t prev = 0; prev < c; ++prev) {
                const auto p = q.row(prev);
                double dot = 0.0;
                for (std::size_t i = 0; i < dim; ++i) dot += p[i] * col[i];
                for (std::size_t i = 0; i < dim; ++i) col[i] -= dot * p[i];
            }
        }
        double norm = 0.0;
        for (double v : col) norm += v * v;
        norm = std::sqrt(norm);
        if (norm == 0.0) throw Error(ErrorKind::math, "synth: degenerate Gaussian draw");
        double sign = 1.0;
        for (double v : col)
            if (v != 0.0) {
                sign = v > 0.0 ? 1.0 : -1.0;
                break;
            }
        for (double& v : col) v *= sign / norm;
    }
    return q.transposed();
}

/// Cluster centers in the r-dimensional latent space, pairwise at least
/// cluster_separation * cluster_std apart.
inline Matrix cluster_centers(const SynthSpec& spec, Xoshiro256& rng) {
    const std::size_t r = spec.intrinsic_rank;
    const double min_dist = spec.cluster_separation * spec.cluster_std;
    double scale = std::max(min_dist, spec.cluster_std);
    Matrix centers(spec.cluster_count, r);
    std::vector<double> candidate(r);
    std::size_t placed = 0;
    std::size_t rejections = 0;
    while (placed < spec.cluster_count) {
        for (double& v : candidate) v = scale * rng.normal();
        bool ok = true;
        for (std::size_t c = 0; c < placed && ok; ++c)
            ok = squared_distance(centers.row(c), candidate) >= min_dist * min_dist;
        if (!ok) {
            if (++rejections % 1000 == 0) scale *= 1.5;
            continue;
        }
        std::copy(candidate.begin(), candidate.end(), centers.row(placed).begin());
        ++placed;
    }
    return centers;
}

inline EmbeddingSet generate(const SynthSpec& spec) {
    validate(spec);
    auto subspace_rng = Xoshiro256::stream(spec.seed, Stream::subspace);
    auto draw_rng = Xoshiro256::stream(spec.seed, Stream::draws);
    auto noise_rng = Xoshiro256::stream(spec.seed, Stream::noise);
    auto cluster_rng = Xoshiro256::stream(spec.seed, Stream::clusters);

    const std::size_t d = spec.dim;
    const std::size_t r = spec.intrinsic_rank;
    const Matrix basis = orthonormal_basis(d, r, subspace_rng);
    Matrix centers;
    if (spec.cluster_count > 0) centers = cluster_centers(spec, cluster_rng);

    const std::size_t total = spec.total_frames();
    std::vector<double> values(total * d);
    std::vector<double> z(r);
    for (std::size_t f = 0; f < total; ++f) {
        if (spec.cluster_count > 0) {
            const auto c = static_cast<std::size_t>(cluster_rng.below(spec.cluster_count));
            const auto center = centers.row(c);
            for (std::size_t j = 0; j < r; ++j) z[j] = center[j] + spec.cluster_std * draw_rng.normal();
        } else {
            for (std::size_t j = 0; j < r; ++j) z[j] = draw_rng.normal();
        }
        double* out = values.data() + f * d;
        for (std::size_t i = 0; i < d; ++i) {
            const auto b = basis.row(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < r; ++j) acc += b[j] * z[j];
            out[i] = acc;
        }
        if (spec.noise_amplitude > 0.0)
            for (std::size_t i = 0; i < d; ++i) out[i] += spec.noise_amplitude * noise_rng.normal();
    }
    return EmbeddingSet(d, std::vector<std::size_t>(spec.n_sequences, spec.frames_per_sequence), std::move(values));
}

// ---------------------------------------------------------------------------
// Cohorts

/// Planted relation: score_i = score_max - score_slope * rank_i + eps_i, |eps_i| <= score_noise.
struct CohortSpec {
    std::size_t n_models = 12;
    std::size_t rank_low = 4;
    std::size_t rank_high = 48;
    double score_noise = 0.0;
    std::uint64_t seed = 0;
    std::size_t dim = 64;
    std::size_t n_sequences = 200;
    std::size_t frames_per_sequence = 100;
    double noise_amplitude = 1e-6;
    std::string task = "synthetic";
    double score_max = 100.0;
    double score_slope = 1.0;
};

struct Cohort {
    std::vector<std::string> model_ids;
    std::vector<std::size_t> ranks;
    std::vector<SynthSpec> specs;
    DownstreamTable downstream;
};

inline std::string cohort_model_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "model_%02zu", i);
    return buf;
}

/// Cohort plan: per-model specs and the planted downstream table. Sets are
/// generated on demand with generate(cohort.specs[i]).
inline Cohort plan_cohort(const CohortSpec& spec) {
    if (spec.n_models < 3) throw Error(ErrorKind::precondition, "cohort needs at least 3 models");
    if (spec.rank_low == 0 || spec.rank_low > spec.rank_high || spec.rank_high > spec.dim)
        throw Error(ErrorKind::precondition, "cohort needs 1 <= rank_low <= rank_high <= dim");
    if (!(spec.score_noise >= 0.0)) throw Error(ErrorKind::precondition, "score_noise must be >= 0");

    Cohort cohort;
    auto score_rng = Xoshiro256::stream(spec.seed, Stream::scores);
    std::vector<DownstreamRow> rows;
    const double span = static_cast<double>(spec.rank_high - spec.rank_low);
    for (std::size_t i = 0; i < spec.n_models; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(spec.n_models - 1);
        const auto rank = static_cast<std::size_t>(std::llround(static_cast<double>(spec.rank_low) + t * span));
        std::uint64_t mix = spec.seed ^ (0x632BE59BD9B4E019ULL * (i + 1));
        SynthSpec member;
        member.dim = spec.dim;
        member.intrinsic_rank = rank;
        member.n_sequences = spec.n_sequences;
        member.frames_per_sequence = spec.frames_per_sequence;
        member.noise_amplitude = spec.noise_amplitude;
        member.seed = splitmix64(mix);

        const double eps = spec.score_noise > 0.0 ? score_rng.uniform(-spec.score_noise, spec.score_noise) : 0.0;
        const double score = spec.score_max - spec.score_slope * static_cast<double>(rank) + eps;

        cohort.model_ids.push_back(cohort_model_id(i));
        cohort.ranks.push_back(rank);
        cohort.specs.push_back(member);
        rows.push_back({cohort.model_ids.back(), spec.task, score, ScoreKind::wer});
    }
    cohort.downstream = DownstreamTable(std::move(rows));
    return cohort;
}

/// Generates every member set along with the planted downstream table.
inline std::pair<std::vector<EmbeddingSet>, DownstreamTable> generate_cohort(const CohortSpec& spec) {
    auto cohort = plan_cohort(spec);
    std::vector<EmbeddingSet> sets;
    sets.reserve(cohort.specs.size());
    for (const auto& member : cohort.specs) sets.push_back(generate(member));
    return {std::move(sets), std::move(cohort.downstream)};
}

}  // namespace ssleval

#endif  // SSLEVAL_SYNTH_HPP
