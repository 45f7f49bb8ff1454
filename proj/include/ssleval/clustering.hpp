#pragma once
#ifndef SSLEVAL_CLUSTERING_HPP
#define SSLEVAL_CLUSTERING_HPP

// Mini-batch k-means with k-means++ seeding, and two cluster-quality indices:
// WCSS (inertia, sum of squared distances to the nearest centroid) and the
// Davies-Bouldin index with the classical dispersion s_i = mean distance of
// members to their centroid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ssleval/embedstore.hpp"
#include "ssleval/error.hpp"
#include "ssleval/matrix.hpp"
#include "ssleval/rng.hpp"

namespace ssleval {

struct ClusterConfig {
    std::size_t k = 1024;
    std::size_t batch_frames = 10240;
    std::size_t max_iterations = 300;
    double center_move_tol = 1e-4;  // relative to the RMS centroid norm
    std::uint64_t seed = 0;
    bool allow_k_reduction = false;
};

struct Seeding {
    Matrix centers;                   // rows are copies of input frames
    std::vector<std::size_t> chosen;  // frame indices, in draw order
    bool reduced = false;             // fewer than the requested k distinct frames were available
};

struct ClusterModel {
    Matrix centroids;
    std::vector<std::uint64_t> counts;  // assignments seen during fitting
    ClusterConfig config;
    bool converged = false;
    std::size_t iterations = 0;
    std::size_t requested_k = 0;  // config.k before any reduction

    std::size_t k() const noexcept { return centroids.rows(); }
};

struct ClusterQuality {
    double wcss = 0.0;
    double db_index = 0.0;
    std::size_t populated_clusters = 0;
};

namespace detail {

/// Squared distances from every frame to the nearest center in `chosen`, updated in place.
inline void update_min_d2(const Matrix& frames, std::span<const double> center, std::vector<double>& d2) {
    for (std::size_t i = 0; i < frames.rows(); ++i) d2[i] = std::min(d2[i], squared_distance(frames.row(i), center));
}

}  // namespace detail

/// k-means++ seeding: first center uniform, then D^2-weighted draws.
inline Seeding kmeanspp_seed(const Matrix& frames, std::size_t k, std::uint64_t seed, bool allow_k_reduction = false) {
    const std::size_t n = frames.rows();
    if (k == 0) throw Error(ErrorKind::precondition, "k must be at least 1");
    if (n == 0) throw Error(ErrorKind::precondition, "no frames to seed from");
    if (n < k && !allow_k_reduction)
        throw Error(ErrorKind::precondition, "insufficient frames for k: " + std::to_string(n) + " frames, k = " +
                                                 std::to_string(k));

    auto rng = Xoshiro256::stream(seed, Stream::seeding);
    Seeding out;
    out.chosen.push_back(static_cast<std::size_t>(rng.below(n)));
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    detail::update_min_d2(frames, frames.row(out.chosen.back()), d2);

    while (out.chosen.size() < k) {
        double total = 0.0;
        for (double w : d2) total += w;
        if (total == 0.0) {
            if (!allow_k_reduction)
                throw Error(ErrorKind::precondition, "insufficient distinct frames for k = " + std::to_string(k));
            out.reduced = true;
            break;
        }
        const double target = rng.uniform() * total;
        std::size_t pick = n;
        double cumulative = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (d2[i] <= 0.0) continue;
            last_positive = i;
            cumulative += d2[i];
            if (cumulative > target) {
                pick = i;
                break;
            }
        }
        if (pick == n) pick = last_positive;  // roundoff in the running sum
        out.chosen.push_back(pick);
        detail::update_min_d2(frames, frames.row(pick), d2);
    }

    out.centers = Matrix(out.chosen.size(), frames.cols());
    for (std::size_t c = 0; c < out.chosen.size(); ++c) {
        const auto src = frames.row(out.chosen[c]);
        std::copy(src.begin(), src.end(), out.centers.row(c).begin());
    }
    return out;
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
inline std::pair<std::size_t, double> nearest_centroid(std::span<const double> frame, const Matrix& centroids) {
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
        const double d2 = squared_distance(frame, centroids.row(c));
        if (d2 < best_d2) {
            best_d2 = d2;
            best = c;
        }
    }
    return {best, best_d2};
}

inline std::vector<std::size_t> assign(const Matrix& frames, const Matrix& centroids) {
    std::vector<std::size_t> labels(frames.rows());
    for (std::size_t i = 0; i < frames.rows(); ++i) labels[i] = nearest_centroid(frames.row(i), centroids).first;
    return labels;
}

/// The seeding fit_minibatch uses: k-means++ over a seeded subset of at most
/// max(3 * batch_frames, k) frames (all frames when fewer).
inline Seeding initial_centroids(const Matrix& frames, const ClusterConfig& config) {
    const std::size_t n = frames.rows();
    const std::size_t init_size = std::max(3 * config.batch_frames, config.k);
    if (n <= init_size) return kmeanspp_seed(frames, config.k, config.seed, config.allow_k_reduction);

    auto rng = Xoshiro256::stream(config.seed, Stream::seeding, 1);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i < init_size; ++i) std::swap(order[i], order[i + rng.below(n - i)]);
    order.resize(init_size);
    std::sort(order.begin(), order.end());
    Matrix subset(init_size, frames.cols());
    for (std::size_t i = 0; i < init_size; ++i) {
        const auto src = frames.row(order[i]);
        std::copy(src.begin(), src.end(), subset.row(i).begin());
    }
    auto seeding = kmeanspp_seed(subset, config.k, config.seed, config.allow_k_reduction);
    for (auto& idx : seeding.chosen) idx = order[idx];
    return seeding;
}

/// Mini-batch k-means from given initial centers.
///
/// Each iteration draws batch_frames frames with replacement (the whole set in
/// index order when batch_frames >= N), assigns the batch to the current
/// centroids, then applies per-center running-mean updates in frame order:
/// count += 1; centroid += (frame - centroid) / count. Stops after
/// max_iterations or when the largest centroid move over one batch is at most
/// center_move_tol times the RMS centroid norm.
inline ClusterModel fit_minibatch(const Matrix& frames, Matrix initial, const ClusterConfig& config) {
    const std::size_t n = frames.rows();
    const std::size_t dim = frames.cols();
    if (initial.rows() == 0 || initial.cols() != dim)
        throw Error(ErrorKind::invalid_input, "initial centroids do not match frame dim");
    if (config.batch_frames == 0 || config.max_iterations == 0)
        throw Error(ErrorKind::precondition, "batch_frames and max_iterations must be positive");

    ClusterModel model;
    model.config = config;
    model.requested_k = config.k;
    model.centroids = std::move(initial);
    const std::size_t k = model.centroids.rows();
    model.counts.assign(k, 0);

    const bool full_batch = config.batch_frames >= n;
    const std::size_t batch_size = full_batch ? n : config.batch_frames;
    auto rng = Xoshiro256::stream(config.seed, Stream::batches);
    std::vector<std::size_t> batch(batch_size);
    std::vector<std::size_t> labels(batch_size);
    Matrix previous;

    for (std::size_t iter = 0; iter < config.max_iterations; ++iter) {
        for (std::size_t b = 0; b < batch_size; ++b)
            batch[b] = full_batch ? b : static_cast<std::size_t>(rng.below(n));
        for (std::size_t b = 0; b < batch_size; ++b)
            labels[b] = nearest_centroid(frames.row(batch[b]), model.centroids).first;

        previous = model.centroids;
        for (std::size_t b = 0; b < batch_size; ++b) {
            const std::size_t c = labels[b];
            const double eta = 1.0 / static_cast<double>(++model.counts[c]);
            auto centroid = model.centroids.row(c);
            const auto x = frames.row(batch[b]);
            for (std::size_t j = 0; j < dim; ++j) centroid[j] += eta * (x[j] - centroid[j]);
        }
        model.iterations = iter + 1;

        double max_move2 = 0.0;
        double norm2 = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            max_move2 = std::max(max_move2, squared_distance(model.centroids.row(c), previous.row(c)));
            for (double v : model.centroids.row(c)) norm2 += v * v;
        }
        const double rms = std::sqrt(norm2 / static_cast<double>(k));
        if (std::sqrt(max_move2) <= config.center_move_tol * rms) {
            model.converged = true;
            break;
        }
    }
    for (double v : model.centroids.values())
        if (!std::isfinite(v)) throw Error(ErrorKind::non_finite, "k-means produced a non-finite centroid");
    return model;
}

inline ClusterModel fit_minibatch(const Matrix& frames, const ClusterConfig& config) {
    auto seeding = initial_centroids(frames, config);
    return fit_minibatch(frames, std::move(seeding.centers), config);
}

inline ClusterModel fit_minibatch(const EmbeddingSet& set, const ClusterConfig& config) {
    return fit_minibatch(set.pooled_matrix(), config);
}

/// Sum over frames of the squared distance to the nearest centroid.
inline double wcss(const ClusterModel& model, const Matrix& frames) {
    if (frames.rows() == 0) throw Error(ErrorKind::precondition, "wcss needs at least one frame");
    if (frames.cols() != model.centroids.cols())
        throw Error(ErrorKind::invalid_input, "frame dim does not match centroid dim");
    double total = 0.0;
    for (std::size_t i = 0; i < frames.rows(); ++i) total += nearest_centroid(frames.row(i), model.centroids).second;
    return total;
}

/// WCSS divided by the number of frames. Not a substitute for wcss().
inline double wcss_per_frame(const ClusterModel& model, const Matrix& frames) {
    return wcss(model, frames) / static_cast<double>(frames.rows());
}

/// Davies-Bouldin index over populated clusters after nearest-centroid assignment.
inline double db_index(const ClusterModel& model, const Matrix& frames) {
    if (frames.cols() != model.centroids.cols())
        throw Error(ErrorKind::invalid_input, "frame dim does not match centroid dim");
    const std::size_t k = model.k();
    std::vector<double> spread(k, 0.0);
    std::vector<std::size_t> members(k, 0);
    for (std::size_t i = 0; i < frames.rows(); ++i) {
        const auto [c, d2] = nearest_centroid(frames.row(i), model.centroids);
        spread[c] += std::sqrt(d2);
        ++members[c];
    }
    std::vector<std::size_t> populated;
    for (std::size_t c = 0; c < k; ++c) {
        if (members[c] == 0) continue;
        spread[c] /= static_cast<double>(members[c]);
        populated.push_back(c);
    }
    if (populated.size() < 2)
        throw Error(ErrorKind::math, "Davies-Bouldin needs at least 2 populated clusters, got " +
                                         std::to_string(populated.size()));

    double sum = 0.0;
    for (auto i : populated) {
        double worst = 0.0;
        for (auto j : populated) {
            if (i == j) continue;
            const double dist = std::sqrt(squared_distance(model.centroids.row(i), model.centroids.row(j)));
            if (dist == 0.0) throw Error(ErrorKind::math, "degenerate centroids: clusters " + std::to_string(i) +
                                                              " and " + std::to_string(j) + " coincide");
            worst = std::max(worst, (spread[i] + spread[j]) / dist);
        }
        sum += worst;
    }
    return sum / static_cast<double>(populated.size());
}

inline std::size_t populated_clusters(const ClusterModel& model, const Matrix& frames) {
    std::vector<bool> hit(model.k(), false);
    for (auto c : assign(frames, model.centroids)) hit[c] = true;
    return static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true));
}

inline ClusterQuality evaluate_quality(const ClusterModel& model, const Matrix& frames) {
    return {wcss(model, frames), db_index(model, frames), populated_clusters(model, frames)};
}

}  // namespace ssleval

#endif  // SSLEVAL_CLUSTERING_HPP
