#pragma once
#ifndef SSLEVAL_RANK_MEASURES_HPP
#define SSLEVAL_RANK_MEASURES_HPP

// Effective rank and its two aggregations over embedding sets.
//
// Conventions: p_i = sigma_i / sum_j sigma_j (L1 over singular values, not their
// squares); entropy in nats; zero singular values are skipped (lim p ln p = 0);
// no thresholding of small singular values and no mean-centering.

#include <cmath>
#include <cstddef>
#include <vector>

#include "ssleval/embedstore.hpp"
#include "ssleval/error.hpp"
#include "ssleval/spectral.hpp"

namespace ssleval {

struct EffectiveRankResult {
    double value = 1.0;         // exp(entropy_nats)
    double entropy_nats = 0.0;
    std::size_t spectrum_length = 0;
    double sigma_mass = 0.0;    // sum of singular values before normalization
};

inline EffectiveRankResult effective_rank(const SingularSpectrum& spectrum) {
    double mass = 0.0;
    for (double s : spectrum.values) mass += s;
    if (!(mass > 0.0)) throw Error(ErrorKind::math, "zero matrix has undefined effective rank");
    if (!std::isfinite(mass)) throw Error(ErrorKind::non_finite, "singular values are not finite");

    double entropy = 0.0;
    for (double s : spectrum.values) {
        if (s <= 0.0) continue;
        const double p = s / mass;
        entropy -= p * std::log(p);
    }
    // entropy can dip a hair below 0 for a rank-1 spectrum with roundoff in p
    if (entropy < 0.0) entropy = 0.0;
    return {std::exp(entropy), entropy, spectrum.values.size(), mass};
}

/// Rows are the per-sequence time sums of frames (sum, not mean).
inline Matrix time_sum_matrix(const EmbeddingSet& set) {
    Matrix z(set.sequence_count(), set.dim());
    for (std::size_t i = 0; i < set.sequence_count(); ++i) {
        const auto seq = set.sequence(i);
        auto dst = z.row(i);
        for (std::size_t t = 0; t < seq.length; ++t) {
            const auto fr = seq.row(t);
            for (std::size_t j = 0; j < set.dim(); ++j) dst[j] += fr[j];
        }
        for (double v : dst)
            if (!std::isfinite(v))
                throw Error(ErrorKind::non_finite, "time sum of sequence " + std::to_string(i) + " is not finite");
    }
    return z;
}

/// RankMe-t: effective rank of the time-sum matrix. When there are more
/// sequences than dimensions the Gram route is used instead of a dense SVD.
inline EffectiveRankResult rankme_t(const EmbeddingSet& set) {
    const Matrix z = time_sum_matrix(set);
    if (z.rows() > z.cols()) {
        GramAccumulator acc(z.cols());
        acc.accumulate(z);
        return effective_rank(spectrum_from_gram(acc));
    }
    return effective_rank(dense_spectrum(z));
}

/// Gram accumulator over every frame of the set.
inline GramAccumulator accumulate_frames(const EmbeddingSet& set) {
    GramAccumulator acc(set.dim());
    acc.accumulate(set.pooled_values());
    return acc;
}

/// Global effective rank: effective rank of the concatenation of all frames.
/// Only the pooled frames matter; sequence boundaries are irrelevant.
inline EffectiveRankResult global_effective_rank(const EmbeddingSet& set) {
    return effective_rank(spectrum_from_gram(accumulate_frames(set)));
}

}  // namespace ssleval

#endif  // SSLEVAL_RANK_MEASURES_HPP
