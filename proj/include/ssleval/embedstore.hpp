#pragma once
#ifndef SSLEVAL_EMBEDSTORE_HPP
#define SSLEVAL_EMBEDSTORE_HPP

// Embedding sets, the EMBD on-disk format, manifests and seeded subsampling.
//
// EMBD layout (all integers little-endian):
//   0..3   magic "EMBD"
//   4..5   version (u16) = 1
//   6..7   reserved, zero
//   8..11  dim (u32)
//   12..19 sequence count n (u64)
//   20..27 total frame count (u64)
//   28..31 reserved, zero
//   then n u64 sequence lengths
//   then total_frames * dim binary64 values, sequence-major, row-major.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "ssleval/error.hpp"
#include "ssleval/matrix.hpp"
#include "ssleval/rng.hpp"

namespace ssleval {

/// Read-only view of one utterance: `length` rows of `dim` values.
struct FrameSequence {
    std::size_t length = 0;
    std::size_t dim = 0;
    std::span<const double> frames;

    std::span<const double> row(std::size_t t) const { return frames.subspan(t * dim, dim); }
};

/// Ordered collection of variable-length frame sequences sharing one dimensionality.
///
/// Frames are stored pooled (sequence-major, row-major), so the concatenation of
/// all sequences is available without copying. Immutable once constructed; every
/// constructor validates the invariants (nonempty, positive lengths, finite values).
class EmbeddingSet {
public:
    EmbeddingSet(std::size_t dim, std::vector<std::size_t> lengths, std::vector<double> values)
        : dim_(dim), lengths_(std::move(lengths)), values_(std::move(values)) {
        validate();
    }

    /// Builds a set from per-sequence matrices (rows are frames).
    static EmbeddingSet from_sequences(std::span<const Matrix> sequences) {
        if (sequences.empty()) throw Error(ErrorKind::invalid_input, "empty embedding set");
        const std::size_t dim = sequences.front().cols();
        std::vector<std::size_t> lengths;
        std::vector<double> values;
        lengths.reserve(sequences.size());
        for (std::size_t i = 0; i < sequences.size(); ++i) {
            if (sequences[i].cols() != dim)
                throw Error(ErrorKind::invalid_input,
                            "sequence " + std::to_string(i) + " has dim " +
                                std::to_string(sequences[i].cols()) + ", expected " + std::to_string(dim));
            lengths.push_back(sequences[i].rows());
            const auto v = sequences[i].values();
            values.insert(values.end(), v.begin(), v.end());
        }
        return EmbeddingSet(dim, std::move(lengths), std::move(values));
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t sequence_count() const noexcept { return lengths_.size(); }
    std::size_t total_frames() const noexcept { return offsets_.back(); }
    std::span<const std::size_t> lengths() const noexcept { return lengths_; }

    FrameSequence sequence(std::size_t i) const {
        return {lengths_[i], dim_,
                std::span<const double>(values_).subspan(offsets_[i] * dim_, lengths_[i] * dim_)};
    }

    /// Frame `f` of the pooled concatenation.
    std::span<const double> frame(std::size_t f) const {
        return std::span<const double>(values_).subspan(f * dim_, dim_);
    }

    std::span<const double> pooled_values() const noexcept { return values_; }

    /// The pooled frames as a total_frames x dim matrix (copies).
    Matrix pooled_matrix() const { return Matrix(total_frames(), dim_, values_); }

    friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
        if (a.dim_ != b.dim_ || a.lengths_ != b.lengths_) return false;
        // bitwise comparison so that -0.0 and 0.0 are distinguished
        return a.values_.size() == b.values_.size() &&
               std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(double)) == 0;
    }

private:
    void validate() {
        if (lengths_.empty()) throw Error(ErrorKind::invalid_input, "empty embedding set");
        if (dim_ == 0) throw Error(ErrorKind::invalid_input, "embedding dim must be positive");
        offsets_.assign(lengths_.size() + 1, 0);
        for (std::size_t i = 0; i < lengths_.size(); ++i) {
            if (lengths_[i] == 0)
                throw Error(ErrorKind::invalid_input, "sequence " + std::to_string(i) + " has length 0");
            offsets_[i + 1] = offsets_[i] + lengths_[i];
        }
        if (values_.size() != offsets_.back() * dim_)
            throw Error(ErrorKind::invalid_input, "frame payload size does not match sequence lengths");
        for (std::size_t i = 0; i < lengths_.size(); ++i) {
            const auto begin = values_.begin() + static_cast<std::ptrdiff_t>(offsets_[i] * dim_);
            const auto end = values_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1] * dim_);
            if (!std::all_of(begin, end, [](double v) { return std::isfinite(v); }))
                throw Error(ErrorKind::non_finite,
                            "non-finite frame value in sequence " + std::to_string(i));
        }
    }

    std::size_t dim_;
    std::vector<std::size_t> lengths_;
    std::vector<double> values_;
    std::vector<std::size_t> offsets_;
};

namespace detail {

inline constexpr std::size_t embd_header_bytes = 32;
inline constexpr char embd_magic[4] = {'E', 'M', 'B', 'D'};
inline constexpr std::uint16_t embd_version = 1;

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

template <typename T>
T get_le(const unsigned char* p) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(p[i]) << (8 * i);
    return value;
}

}  // namespace detail

/// Serializes a set into the EMBD byte layout.
inline std::vector<unsigned char> encode_embeddings(const EmbeddingSet& set) {
    using namespace detail;
    std::vector<unsigned char> out;
    out.reserve(embd_header_bytes + 8 * set.sequence_count() + 8 * set.pooled_values().size());
    out.insert(out.end(), std::begin(embd_magic), std::end(embd_magic));
    put_le<std::uint16_t>(out, embd_version);
    put_le<std::uint16_t>(out, 0);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.dim()));
    put_le<std::uint64_t>(out, set.sequence_count());
    put_le<std::uint64_t>(out, set.total_frames());
    put_le<std::uint32_t>(out, 0);
    for (auto len : set.lengths()) put_le<std::uint64_t>(out, len);
    for (double v : set.pooled_values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

/// Parses EMBD bytes; every structural problem maps to a distinct ErrorKind.
inline EmbeddingSet decode_embeddings(std::span<const unsigned char> bytes) {
    using namespace detail;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), embd_magic, 4) != 0)
        throw Error(ErrorKind::unrecognized_format, "unrecognized format: bad magic");
    if (bytes.size() < embd_header_bytes)
        throw Error(ErrorKind::truncated_payload, "truncated payload: incomplete header");
    const unsigned char* p = bytes.data();
    const auto version = get_le<std::uint16_t>(p + 4);
    if (version != embd_version)
        throw Error(ErrorKind::unrecognized_format,
                    "unrecognized format: unsupported version " + std::to_string(version));
    if (get_le<std::uint16_t>(p + 6) != 0 || get_le<std::uint32_t>(p + 28) != 0)
        throw Error(ErrorKind::unrecognized_format, "unrecognized format: reserved bytes not zero");
    const std::uint64_t dim = get_le<std::uint32_t>(p + 8);
    const auto count = get_le<std::uint64_t>(p + 12);
    const auto total = get_le<std::uint64_t>(p + 20);
    if (dim == 0) throw Error(ErrorKind::invalid_input, "embedding dim must be positive");
    if (count == 0) throw Error(ErrorKind::invalid_input, "empty embedding set");

    const std::size_t available = bytes.size() - embd_header_bytes;
    if (count > available / 8) throw Error(ErrorKind::truncated_payload, "truncated payload: sequence table");
    std::vector<std::size_t> lengths(count);
    std::uint64_t sum = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        lengths[i] = get_le<std::uint64_t>(p + embd_header_bytes + 8 * i);
        if (lengths[i] > std::numeric_limits<std::uint64_t>::max() - sum)
            throw Error(ErrorKind::invalid_input, "sequence lengths overflow");
        sum += lengths[i];
    }
    if (sum != total)
        throw Error(ErrorKind::invalid_input, "sequence lengths sum to " + std::to_string(sum) +
                                                  " but header declares " + std::to_string(total));

    const std::size_t payload_offset = embd_header_bytes + 8 * count;
    const std::size_t payload_available = bytes.size() - payload_offset;
    if (total > payload_available / 8 / dim || total * dim * 8 > payload_available)
        throw Error(ErrorKind::truncated_payload,
                    "truncated payload: header declares " + std::to_string(total) + " frames");
    const std::size_t n_values = total * dim;
    if (payload_available != n_values * 8)
        throw Error(ErrorKind::unrecognized_format, "unrecognized format: trailing bytes after payload");

    std::vector<double> values(n_values);
    for (std::size_t i = 0; i < n_values; ++i)
        values[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + payload_offset + 8 * i));
    return EmbeddingSet(dim, std::move(lengths), std::move(values));
}

inline void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& destination) {
    const auto bytes = encode_embeddings(set);
    std::ofstream out(destination, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot open " + destination.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "write failed: " + destination.string());
}

inline EmbeddingSet read_embeddings(const std::filesystem::path& source) {
    std::ifstream in(source, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + source.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw Error(ErrorKind::io, "read failed: " + source.string());
    return decode_embeddings(bytes);
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
    std::string model_id;
    std::int64_t checkpoint_step = 0;
    std::int64_t layer = 0;
    std::filesystem::path path;  // as written in the manifest
    std::string dataset_tag;

    auto key() const { return std::tie(model_id, checkpoint_step, layer); }
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;  // relative entry paths resolve against this

    std::filesystem::path resolve(const ManifestEntry& e) const {
        return e.path.is_absolute() ? e.path : base_dir / e.path;
    }
};

inline nlohmann::json manifest_to_json(const Manifest& manifest) {
    auto arr = nlohmann::json::array();
    for (const auto& e : manifest.entries)
        arr.push_back({{"model_id", e.model_id},
                       {"checkpoint_step", e.checkpoint_step},
                       {"layer", e.layer},
                       {"path", e.path.generic_string()},
                       {"dataset_tag", e.dataset_tag}});
    return arr;
}

/// Parses a manifest; checks key uniqueness and, when `check_paths`, that every file is readable.
inline Manifest manifest_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                                   bool check_paths = true) {
    if (!doc.is_array()) throw Error(ErrorKind::invalid_input, "manifest must be a JSON array");
    Manifest manifest;
    manifest.base_dir = base_dir;
    std::set<std::tuple<std::string, std::int64_t, std::int64_t>> seen;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& obj = doc[i];
        ManifestEntry e;
        try {
            e.model_id = obj.at("model_id").get<std::string>();
            e.checkpoint_step = obj.at("checkpoint_step").get<std::int64_t>();
            e.layer = obj.at("layer").get<std::int64_t>();
            e.path = obj.at("path").get<std::string>();
            e.dataset_tag = obj.at("dataset_tag").get<std::string>();
        } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorKind::invalid_input, "manifest entry " + std::to_string(i) + ": " + ex.what());
        }
        if (!seen.emplace(e.model_id, e.checkpoint_step, e.layer).second)
            throw Error(ErrorKind::invalid_input, "duplicate manifest entry (" + e.model_id + ", " +
                                                      std::to_string(e.checkpoint_step) + ", " +
                                                      std::to_string(e.layer) + ")");
        if (check_paths) {
            std::ifstream probe(manifest.resolve(e), std::ios::binary);
            if (!probe) throw Error(ErrorKind::io, "manifest entry " + std::to_string(i) + ": cannot read " +
                                                       manifest.resolve(e).string());
        }
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

inline Manifest read_manifest(const std::filesystem::path& path, bool check_paths = true) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open manifest " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorKind::invalid_input, "manifest is not valid JSON: " + std::string(ex.what()));
    }
    return manifest_from_json(doc, path.parent_path(), check_paths);
}

inline void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
    out << manifest_to_json(manifest).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Subsampling

enum class SampleUnit { frames, sequences };

/// Frame budget for subsampling. At 50 frames/s, one hour of audio is about 180,000 frames.
struct SampleSpec {
    std::optional<std::size_t> max_frames;  // nullopt = unlimited
    std::uint64_t seed = 0;
    SampleUnit unit = SampleUnit::sequences;
};

/// Seeded subsample of `set` under a frame budget.
///
/// sequences: whole sequences are visited in a seeded shuffled order and kept while
/// the running frame total stays within budget; the first visited sequence is always
/// kept. frames: max_frames frames are drawn uniformly without replacement from the
/// pooled frames and returned as length-1 sequences. In both cases the kept items
/// appear in their original order. A budget that covers the whole set returns it
/// unchanged.
inline EmbeddingSet subsample(const EmbeddingSet& set, const SampleSpec& spec) {
    if (!spec.max_frames) return set;
    const std::size_t budget = *spec.max_frames;
    if (budget == 0) throw Error(ErrorKind::precondition, "max_frames must be at least 1");
    if (set.total_frames() <= budget) return set;

    auto rng = Xoshiro256::stream(spec.seed, Stream::sampling);
    const std::size_t dim = set.dim();

    if (spec.unit == SampleUnit::frames) {
        const std::size_t total = set.total_frames();
        std::vector<std::size_t> order(total);
        for (std::size_t i = 0; i < total; ++i) order[i] = i;
        // partial Fisher-Yates: positions [0, budget) end up a uniform sample
        for (std::size_t i = 0; i < budget; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(total - i));
            std::swap(order[i], order[j]);
        }
        order.resize(budget);
        std::sort(order.begin(), order.end());
        std::vector<double> values;
        values.reserve(budget * dim);
        for (auto f : order) {
            const auto fr = set.frame(f);
            values.insert(values.end(), fr.begin(), fr.end());
        }
        return EmbeddingSet(dim, std::vector<std::size_t>(budget, 1), std::move(values));
    }

    std::vector<std::size_t> order(set.sequence_count());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::size_t> kept;
    std::size_t used = 0;
    for (auto idx : order) {
        const auto len = set.lengths()[idx];
        if (kept.empty() || used + len <= budget) {
            kept.push_back(idx);
            used += len;
        }
        if (used >= budget) break;
    }
    std::sort(kept.begin(), kept.end());
    std::vector<std::size_t> lengths;
    std::vector<double> values;
    values.reserve(used * dim);
    for (auto idx : kept) {
        const auto seq = set.sequence(idx);
        lengths.push_back(seq.length);
        values.insert(values.end(), seq.frames.begin(), seq.frames.end());
    }
    return EmbeddingSet(dim, std::move(lengths), std::move(values));
}

}  // namespace ssleval

#endif  // SSLEVAL_EMBEDSTORE_HPP
