// ssleval: unsupervised quality measures for self-supervised embedding dumps.
//
// Exit codes: 0 ok, 1 I/O or format error, 2 math error, 3 precondition/usage error.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssleval/commands.hpp"

namespace {

using namespace ssleval;

struct SampleFlags {
    std::optional<std::size_t> max_frames;
    std::string unit = "sequences";
    std::uint64_t seed = 0;

    void add(CLI::App& cmd) {
        cmd.add_option("--max-frames", max_frames, "Frame budget (unlimited when omitted)");
        cmd.add_option("--sample-unit", unit, "Subsampling unit: sequences or frames")
            ->check(CLI::IsMember({"sequences", "frames"}));
    }

    SampleSpec spec() const { return {max_frames, seed, parse_sample_unit(unit)}; }
};

void add_cluster_flags(CLI::App& cmd, ClusterConfig& cfg) {
    cmd.add_option("--k", cfg.k, "Number of clusters")->check(CLI::PositiveNumber);
    cmd.add_option("--batch-frames", cfg.batch_frames, "Mini-batch size in frames")->check(CLI::PositiveNumber);
    cmd.add_option("--max-iter", cfg.max_iterations, "Maximum mini-batch iterations")->check(CLI::PositiveNumber);
    cmd.add_option("--center-tol", cfg.center_move_tol, "Convergence tolerance relative to RMS centroid norm");
    cmd.add_flag("--allow-k-reduction", cfg.allow_k_reduction, "Lower k to the number of distinct frames if needed");
}

std::vector<std::string> split_measures(const std::vector<std::string>& raw) {
    std::vector<std::string> out;
    for (const auto& item : raw) {
        std::stringstream ss(item);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) out.push_back(part);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Effective-rank and clustering measures over embedding dumps"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;

    // rank
    auto* rank = app.add_subcommand("rank", "RankMe-t or global effective rank of one EMBD file");
    RankOptions rank_opt;
    SampleFlags rank_sample;
    rank->add_option("--input", rank_opt.input, "EMBD file")->required();
    rank->add_option("--measure", rank_opt.measure, "ger or rankme-t")
        ->check(CLI::IsMember({"ger", "rankme-t", "rankme_t"}));
    rank->add_option("--seed", seed, "Sampling seed");
    rank_sample.add(*rank);

    // cluster
    auto* cluster = app.add_subcommand("cluster", "Mini-batch k-means, then WCSS and Davies-Bouldin");
    ClusterOptions cluster_opt;
    SampleFlags cluster_sample;
    cluster_sample.unit = "frames";
    cluster->add_option("--input", cluster_opt.input, "EMBD file")->required();
    cluster->add_option("--seed", seed, "Seed for sampling, seeding and batches");
    add_cluster_flags(*cluster, cluster_opt.config);
    cluster_sample.add(*cluster);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "All measures for every manifest entry");
    SweepConfig sweep_cfg;
    SampleFlags sweep_sample;
    std::vector<std::string> sweep_measures;
    sweep->add_option("--manifest", sweep_cfg.manifest_path, "Manifest JSON")->required();
    sweep->add_option("--out", sweep_cfg.output_path, "Measures CSV (errors go to <out>.errors.csv)")->required();
    sweep->add_option("--measure", sweep_measures, "Comma-separated subset of wcss,db_index,rankme_t,ger");
    sweep->add_option("--jobs", sweep_cfg.jobs, "Entries processed in parallel")->check(CLI::PositiveNumber);
    sweep->add_option("--seed", seed, "Seed for sampling and clustering");
    add_cluster_flags(*sweep, sweep_cfg.cluster);
    sweep_sample.add(*sweep);

    // correlate
    auto* corr = app.add_subcommand("correlate", "Pearson correlations between measures and downstream scores");
    CorrelateOptions corr_opt;
    std::optional<std::int64_t> corr_layer;
    corr->add_option("--measures", corr_opt.measures_csv, "Measures CSV from sweep")->required();
    corr->add_option("--downstream", corr_opt.downstream_csv, "Downstream CSV")->required();
    corr->add_option("--task", corr_opt.task, "Task name for the report")->required();
    corr->add_option("--measure-step", corr_opt.measure_step, "Checkpoint step the measures are taken at");
    corr->add_option("--score-label", corr_opt.score_label, "Downstream task value to join (defaults to --task)");
    corr->add_option("--layer", corr_layer, "Layer (all layers present when omitted)");
    corr->add_option("--out", corr_opt.output_path, "Report CSV; JSON mirror written alongside")->required();

    // synth
    auto* synth = app.add_subcommand("synth", "Synthetic embedding set, or a cohort with planted scores");
    SynthSpec synth_spec;
    std::string synth_out;
    std::size_t cohort_models = 0;
    SynthCohortOptions cohort_opt;
    synth->add_option("--out", synth_out, "Output EMBD file, or directory with --cohort")->required();
    synth->add_option("--seed", seed, "Generator seed");
    synth->add_option("--dim", synth_spec.dim, "Embedding dim");
    synth->add_option("--rank", synth_spec.intrinsic_rank, "Intrinsic rank");
    synth->add_option("--sequences", synth_spec.n_sequences, "Number of sequences");
    synth->add_option("--frames-per-seq", synth_spec.frames_per_sequence, "Frames per sequence");
    synth->add_option("--noise", synth_spec.noise_amplitude, "Isotropic noise std");
    synth->add_option("--clusters", synth_spec.cluster_count, "Cluster count (0 = unclustered)");
    synth->add_option("--cluster-std", synth_spec.cluster_std, "Within-cluster std");
    synth->add_option("--cluster-separation", synth_spec.cluster_separation, "Minimum center distance / cluster std");
    synth->add_option("--cohort", cohort_models, "Generate a cohort of this many models");
    synth->add_option("--rank-low", cohort_opt.cohort.rank_low, "Cohort: lowest intrinsic rank");
    synth->add_option("--rank-high", cohort_opt.cohort.rank_high, "Cohort: highest intrinsic rank");
    synth->add_option("--score-noise", cohort_opt.cohort.score_noise, "Cohort: bound on planted score noise");
    synth->add_option("--task", cohort_opt.cohort.task, "Cohort: downstream task name");
    synth->add_option("--step", cohort_opt.checkpoint_step, "Cohort: manifest checkpoint_step");
    synth->add_option("--layer", cohort_opt.layer, "Cohort: manifest layer");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 3;
    }

    try {
        if (*rank) {
            rank_sample.seed = seed;
            rank_opt.sample = rank_sample.spec();
            std::cout << cmd_rank(rank_opt).dump() << '\n';
        } else if (*cluster) {
            cluster_sample.seed = seed;
            cluster_opt.sample = cluster_sample.spec();
            cluster_opt.config.seed = seed;
            std::cout << cmd_cluster(cluster_opt).dump() << '\n';
        } else if (*sweep) {
            sweep_sample.seed = seed;
            sweep_cfg.sample = sweep_sample.spec();
            sweep_cfg.cluster.seed = seed;
            if (!sweep_measures.empty()) sweep_cfg.measures = split_measures(sweep_measures);
            const auto result = cmd_sweep(sweep_cfg);
            std::cout << nlohmann::json{{"rows", result.row_count()}, {"errors", result.errors.size()}}.dump() << '\n';
        } else if (*corr) {
            corr_opt.layer = corr_layer;
            const auto reports = cmd_correlate(corr_opt);
            auto doc = nlohmann::json::array();
            for (const auto& r : reports) doc.push_back(report_to_json(r));
            std::cout << doc.dump() << '\n';
        } else if (*synth) {
            if (cohort_models > 0) {
                auto& c = cohort_opt.cohort;
                c.n_models = cohort_models;
                c.seed = seed;
                c.dim = synth_spec.dim;
                c.n_sequences = synth->count("--sequences") ? synth_spec.n_sequences : c.n_sequences;
                c.frames_per_sequence =
                    synth->count("--frames-per-seq") ? synth_spec.frames_per_sequence : c.frames_per_sequence;
                c.noise_amplitude = synth->count("--noise") ? synth_spec.noise_amplitude : c.noise_amplitude;
                cohort_opt.out_dir = synth_out;
                const auto manifest = cmd_synth_cohort(cohort_opt);
                std::cout << nlohmann::json{{"models", manifest.entries.size()}, {"out_dir", synth_out}}.dump() << '\n';
            } else {
                synth_spec.seed = seed;
                cmd_synth(synth_spec, synth_out);
                std::cout << nlohmann::json{{"frames", synth_spec.total_frames()}, {"out", synth_out}}.dump() << '\n';
            }
        }
    } catch (const Error& e) {
        std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
