#pragma once
#ifndef SSLEVAL_COMMANDS_HPP
#define SSLEVAL_COMMANDS_HPP

// The operations behind the ssleval command-line tool. Each command is a plain
// function taking an options struct; argument parsing lives in tools/ssleval.cpp.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ssleval/clustering.hpp"
#include "ssleval/correlation.hpp"
#include "ssleval/embedstore.hpp"
#include "ssleval/error.hpp"
#include "ssleval/rank_measures.hpp"
#include "ssleval/synth.hpp"

namespace ssleval {

inline const std::vector<std::string>& known_measures() {
    static const std::vector<std::string> names = {"wcss", "db_index", "rankme_t", "ger"};
    return names;
}

/// Accepts the canonical names plus the hyphenated spelling "rankme-t".
inline std::string canonical_measure(const std::string& name) {
    if (name == "rankme-t") return "rankme_t";
    if (std::find(known_measures().begin(), known_measures().end(), name) == known_measures().end())
        throw Error(ErrorKind::precondition, "unknown measure '" + name + "'");
    return name;
}

inline SampleUnit parse_sample_unit(const std::string& s) {
    if (s == "frames") return SampleUnit::frames;
    if (s == "sequences") return SampleUnit::sequences;
    throw Error(ErrorKind::precondition, "unknown sample unit '" + s + "'");
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error(ErrorKind::io, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// rank

struct RankOptions {
    std::filesystem::path input;
    std::string measure = "ger";
    SampleSpec sample;
};

inline nlohmann::json cmd_rank(const RankOptions& opt) {
    const auto measure = canonical_measure(opt.measure);
    if (measure != "ger" && measure != "rankme_t")
        throw Error(ErrorKind::precondition, "rank supports ger and rankme-t, not '" + opt.measure + "'");
    const auto set = subsample(read_embeddings(opt.input), opt.sample);
    const auto result = measure == "ger" ? global_effective_rank(set) : rankme_t(set);
    return {{"measure", measure},
            {"value", result.value},
            {"frames_used", set.total_frames()},
            {"seed", opt.sample.seed}};
}

// ---------------------------------------------------------------------------
// cluster

struct ClusterOptions {
    std::filesystem::path input;
    ClusterConfig config;
    SampleSpec sample;
};

inline nlohmann::json cmd_cluster(const ClusterOptions& opt) {
    const auto set = subsample(read_embeddings(opt.input), opt.sample);
    const Matrix frames = set.pooled_matrix();
    const auto model = fit_minibatch(frames, opt.config);
    const auto quality = evaluate_quality(model, frames);
    return {{"wcss", quality.wcss},
            {"db_index", quality.db_index},
            {"populated_clusters", quality.populated_clusters},
            {"k", model.k()},
            {"requested_k", model.requested_k},
            {"converged", model.converged},
            {"iterations", model.iterations},
            {"frames_used", frames.rows()}};
}

// ---------------------------------------------------------------------------
// sweep

struct SweepConfig {
    std::filesystem::path manifest_path;
    SampleSpec sample;
    ClusterConfig cluster;
    std::vector<std::string> measures = known_measures();
    std::filesystem::path output_path;
    std::size_t jobs = 1;
};

struct SweepError {
    std::string model_id;
    std::int64_t checkpoint_step = 0;
    std::int64_t layer = 0;
    std::string measure;  // "*" when the entry could not be loaded at all
    ErrorKind kind = ErrorKind::io;
    std::string message;
};

struct SweepResult {
    std::vector<MeasureRecord> records;
    std::vector<SweepError> errors;

    std::size_t row_count() const {
        std::size_t n = 0;
        for (const auto& r : records) n += r.measures.size();
        return n;
    }
};

inline std::filesystem::path sweep_errors_path(const std::filesystem::path& output) {
    auto p = output;
    p += ".errors.csv";
    return p;
}

/// Measures for one manifest entry; per-measure failures land in `errors`.
inline MeasureRecord measure_entry(const Manifest& manifest, const ManifestEntry& entry, const SweepConfig& config,
                                   std::vector<SweepError>& errors) {
    MeasureRecord rec{entry.model_id, entry.checkpoint_step, entry.layer, {}};
    auto fail = [&](const std::string& measure, const Error& e) {
        errors.push_back({entry.model_id, entry.checkpoint_step, entry.layer, measure, e.kind(), e.what()});
    };

    std::optional<EmbeddingSet> set;
    try {
        set.emplace(subsample(read_embeddings(manifest.resolve(entry)), config.sample));
    } catch (const Error& e) {
        fail("*", e);
        return rec;
    }

    std::optional<ClusterModel> model;
    std::optional<Error> fit_error;
    Matrix frames;
    const bool wants_clusters = std::any_of(config.measures.begin(), config.measures.end(),
                                            [](const std::string& m) { return m == "wcss" || m == "db_index"; });
    if (wants_clusters) {
        frames = set->pooled_matrix();
        try {
            model.emplace(fit_minibatch(frames, config.cluster));
        } catch (const Error& e) {
            fit_error.emplace(e);
        }
    }

    for (const auto& measure : config.measures) {
        try {
            if (measure == "ger") rec.measures[measure] = global_effective_rank(*set).value;
            else if (measure == "rankme_t") rec.measures[measure] = rankme_t(*set).value;
            else if (fit_error) throw *fit_error;
            else if (measure == "wcss") rec.measures[measure] = wcss(*model, frames);
            else rec.measures[measure] = db_index(*model, frames);
        } catch (const Error& e) {
            fail(measure, e);
        }
    }
    return rec;
}

inline SweepResult run_sweep(const SweepConfig& config) {
    if (config.measures.empty()) throw Error(ErrorKind::precondition, "sweep needs at least one measure");
    SweepConfig cfg = config;
    std::set<std::string> unique;
    for (auto& m : cfg.measures) unique.insert(canonical_measure(m));
    cfg.measures.assign(unique.begin(), unique.end());

    const Manifest manifest = read_manifest(cfg.manifest_path);
    const std::size_t n = manifest.entries.size();
    std::vector<MeasureRecord> records(n);
    std::vector<std::vector<SweepError>> errors(n);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++)
            records[i] = measure_entry(manifest, manifest.entries[i], cfg, errors[i]);
    };
    const std::size_t jobs = std::clamp<std::size_t>(cfg.jobs, 1, std::max<std::size_t>(n, 1));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    }

    SweepResult result;
    for (std::size_t i = 0; i < n; ++i) {
        if (!records[i].measures.empty()) result.records.push_back(std::move(records[i]));
        for (auto& e : errors[i]) result.errors.push_back(std::move(e));
    }
    std::sort(result.records.begin(), result.records.end(), [](const auto& a, const auto& b) { return a.key() < b.key(); });
    std::sort(result.errors.begin(), result.errors.end(), [](const auto& a, const auto& b) {
        return std::tie(a.model_id, a.checkpoint_step, a.layer, a.measure) <
               std::tie(b.model_id, b.checkpoint_step, b.layer, b.measure);
    });
    return result;
}

inline std::string sweep_errors_to_csv(const std::vector<SweepError>& errors) {
    std::string out = "model_id,checkpoint_step,layer,measure,error_kind,message\n";
    for (const auto& e : errors) {
        std::string msg = e.message;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        out += e.model_id + ',' + std::to_string(e.checkpoint_step) + ',' + std::to_string(e.layer) + ',' + e.measure +
               ',' + std::string(to_string(e.kind)) + ',' + msg + '\n';
    }
    return out;
}

/// Runs the sweep and writes the measures CSV plus the `<output>.errors.csv` sidecar.
inline SweepResult cmd_sweep(const SweepConfig& config) {
    auto result = run_sweep(config);
    write_text(config.output_path, measures_to_csv(result.records));
    write_text(sweep_errors_path(config.output_path), sweep_errors_to_csv(result.errors));
    return result;
}

// ---------------------------------------------------------------------------
// correlate

struct CorrelateOptions {
    std::filesystem::path measures_csv;
    std::filesystem::path downstream_csv;
    std::string task;
    std::int64_t measure_step = 0;
    std::string score_label;            // downstream task value to join against; defaults to task
    std::optional<std::int64_t> layer;  // all layers present at measure_step when unset
    std::filesystem::path output_path;  // report CSV; the JSON mirror goes next to it with a .json extension
};

inline std::filesystem::path report_json_path(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    p.replace_extension(".json");
    return p;
}

inline std::vector<CorrelationReport> cmd_correlate(const CorrelateOptions& opt, std::ostream& warnings = std::cerr) {
    const auto records = read_measures_csv(opt.measures_csv);
    const auto downstream = read_downstream_csv(opt.downstream_csv);

    std::vector<std::int64_t> layers;
    if (opt.layer) {
        layers.push_back(*opt.layer);
    } else {
        std::set<std::int64_t> present;
        for (const auto& r : records)
            if (r.checkpoint_step == opt.measure_step) present.insert(r.layer);
        layers.assign(present.begin(), present.end());
        if (layers.empty())
            throw Error(ErrorKind::precondition,
                        "insufficient matched models: no measures at step " + std::to_string(opt.measure_step));
    }

    std::vector<CorrelationReport> reports;
    std::optional<Error> last_error;
    for (auto layer : layers) {
        try {
            reports.push_back(correlate(records, downstream, opt.task, opt.measure_step, layer, opt.score_label));
        } catch (const Error& e) {
            if (opt.layer || e.kind() != ErrorKind::precondition) throw;
            warnings << "warning: layer " << layer << ": " << e.what() << '\n';
            last_error.emplace(e);
        }
    }
    if (reports.empty()) throw *last_error;
    for (const auto& rep : reports) {
        for (const auto& m : rep.excluded_measures)
            warnings << "warning: layer " << rep.layer << ": measure '" << m.measure << "' excluded: " << m.reason
                     << '\n';
        if (!rep.dropped_models.empty())
            warnings << "warning: layer " << rep.layer << ": " << rep.dropped_models.size()
                     << " model(s) missing on one side of the join\n";
    }

    if (!opt.output_path.empty()) {
        write_text(opt.output_path, reports_to_csv(reports));
        auto doc = nlohmann::json::array();
        for (const auto& rep : reports) {
            auto j = report_to_json(rep);
            j["score_label"] = opt.score_label.empty() ? opt.task : opt.score_label;
            doc.push_back(std::move(j));
        }
        write_text(report_json_path(opt.output_path), doc.dump(2) + '\n');
    }
    return reports;
}

// ---------------------------------------------------------------------------
// synth

struct SynthCohortOptions {
    CohortSpec cohort;
    std::filesystem::path out_dir;
    std::int64_t checkpoint_step = 0;
    std::int64_t layer = 0;
    std::string dataset_tag = "synthetic";
};

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
    return {{"dim", s.dim},
            {"intrinsic_rank", s.intrinsic_rank},
            {"n_sequences", s.n_sequences},
            {"frames_per_sequence", s.frames_per_sequence},
            {"noise_amplitude", s.noise_amplitude},
            {"cluster_count", s.cluster_count},
            {"cluster_std", s.cluster_std},
            {"cluster_separation", s.cluster_separation},
            {"seed", s.seed},
            {"rng", Xoshiro256::algorithm_name}};
}

/// Writes one synthetic set and a `<file>.json` sidecar recording the generator settings.
inline void cmd_synth(const SynthSpec& spec, const std::filesystem::path& output) {
    write_embeddings(generate(spec), output);
    auto meta = output;
    meta += ".json";
    write_text(meta, synth_spec_to_json(spec).dump(2) + '\n');
}

/// Writes model_XX.embd files, manifest.json, downstream.csv and synth.json into out_dir.
inline Manifest cmd_synth_cohort(const SynthCohortOptions& opt) {
    const auto cohort = plan_cohort(opt.cohort);
    std::error_code ec;
    std::filesystem::create_directories(opt.out_dir, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create " + opt.out_dir.string() + ": " + ec.message());

    Manifest manifest;
    manifest.base_dir = opt.out_dir;
    auto members = nlohmann::json::array();
    for (std::size_t i = 0; i < cohort.specs.size(); ++i) {
        const std::string file = cohort.model_ids[i] + ".embd";
        write_embeddings(generate(cohort.specs[i]), opt.out_dir / file);
        manifest.entries.push_back({cohort.model_ids[i], opt.checkpoint_step, opt.layer, file, opt.dataset_tag});
        auto m = synth_spec_to_json(cohort.specs[i]);
        m["model_id"] = cohort.model_ids[i];
        members.push_back(std::move(m));
    }
    write_manifest(manifest, opt.out_dir / "manifest.json");
    write_text(opt.out_dir / "downstream.csv", downstream_to_csv(cohort.downstream));
    const nlohmann::json meta = {{"rng", Xoshiro256::algorithm_name},
                                 {"seed", opt.cohort.seed},
                                 {"score_max", opt.cohort.score_max},
                                 {"score_slope", opt.cohort.score_slope},
                                 {"score_noise", opt.cohort.score_noise},
                                 {"task", opt.cohort.task},
                                 {"members", members}};
    write_text(opt.out_dir / "synth.json", meta.dump(2) + '\n');
    return manifest;
}

}  // namespace ssleval

#endif  // SSLEVAL_COMMANDS_HPP
