#include <gtest/gtest.h>

#include <json.hpp>

#include "oracles.hpp"
#include "ssleval/commands.hpp"

using namespace ssleval;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path write_set(const fs::path& dir, const std::string& name, const EmbeddingSet& set) {
    const auto p = dir / name;
    write_embeddings(set, p);
    return p;
}

EmbeddingSet one_dim(const std::vector<double>& xs) {
    return EmbeddingSet(1, std::vector<std::size_t>(xs.size(), 1), xs);
}

json stdout_json(const oracle::CliRun& run) { return json::parse(run.out); }

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(CliRank, IdentityFrames) {
    const auto dir = oracle::scratch_dir("cli_rank_id");
    const auto m = Matrix::identity(6);
    const auto p = write_set(dir, "id.embd",
                             EmbeddingSet(6, std::vector<std::size_t>(6, 1), {m.values().begin(), m.values().end()}));
    const auto ger = oracle::run_cli({"rank", "--input", p.string(), "--measure", "ger"});
    ASSERT_EQ(ger.exit_code, 0) << ger.err;
    const auto j = stdout_json(ger);
    EXPECT_EQ(j["measure"], "ger");
    EXPECT_NEAR(j["value"].get<double>(), 6.0, 1e-12);
    EXPECT_EQ(j["frames_used"], 6);
    const auto rt = oracle::run_cli({"rank", "--input", p.string(), "--measure", "rankme-t"});
    ASSERT_EQ(rt.exit_code, 0) << rt.err;
    EXPECT_NEAR(stdout_json(rt)["value"].get<double>(), 6.0, 1e-12);
}

TEST(CliRank, OneSequenceRankMeT) {
    const auto dir = oracle::scratch_dir("cli_rank_one");
    Xoshiro256 rng(61);
    const auto p = write_set(dir, "one.embd", oracle::random_set(1, 5, 30, rng));
    const auto run = oracle::run_cli({"rank", "--input", p.string(), "--measure", "rankme-t"});
    ASSERT_EQ(run.exit_code, 0) << run.err;
    EXPECT_NEAR(stdout_json(run)["value"].get<double>(), 1.0, 1e-12);
}

TEST(CliRank, SynthPlantedRank) {
    const auto dir = oracle::scratch_dir("cli_rank_synth");
    const auto p = dir / "r7.embd";
    const auto gen = oracle::run_cli({"synth", "--out", p.string(), "--dim", "32", "--rank", "7", "--sequences", "20",
                                      "--frames-per-seq", "100", "--seed", "3"});
    ASSERT_EQ(gen.exit_code, 0) << gen.err;
    EXPECT_TRUE(fs::exists(dir / "r7.embd.json"));
    const auto run = oracle::run_cli({"rank", "--input", p.string()});
    ASSERT_EQ(run.exit_code, 0) << run.err;
    const double v = stdout_json(run)["value"].get<double>();
    EXPECT_GE(v, 6.5);
    EXPECT_LE(v, 7.5);
}

TEST(CliRank, FrameBudget) {
    const auto dir = oracle::scratch_dir("cli_rank_budget");
    Xoshiro256 rng(62);
    const auto p = write_set(dir, "s.embd", oracle::random_set(40, 4, 10, rng));
    const auto run = oracle::run_cli({"rank", "--input", p.string(), "--max-frames", "25", "--sample-unit", "frames"});
    ASSERT_EQ(run.exit_code, 0) << run.err;
    EXPECT_EQ(stdout_json(run)["frames_used"], 25);
}

TEST(CliRank, ZeroMatrixIsMathError) {
    const auto dir = oracle::scratch_dir("cli_rank_zero");
    const auto p = write_set(dir, "z.embd", EmbeddingSet(3, {4}, std::vector<double>(12, 0.0)));
    const auto run = oracle::run_cli({"rank", "--input", p.string()});
    EXPECT_EQ(run.exit_code, 2);
    EXPECT_NE(run.err.find("math"), std::string::npos);
}

TEST(CliCluster, FourPointFixture) {
    const auto dir = oracle::scratch_dir("cli_cluster4");
    const auto p = write_set(dir, "p.embd", one_dim({0, 1, 10, 11}));
    const auto run = oracle::run_cli({"cluster", "--input", p.string(), "--k", "2", "--batch-frames", "4"});
    ASSERT_EQ(run.exit_code, 0) << run.err;
    const auto j = stdout_json(run);
    EXPECT_NEAR(j["wcss"].get<double>(), 1.0, 1e-12);
    EXPECT_NEAR(j["db_index"].get<double>(), 0.1, 1e-12);
    EXPECT_EQ(j["populated_clusters"], 2);
}

TEST(CliCluster, KDistinctPointsHasZeroWcss) {
    const auto dir = oracle::scratch_dir("cli_cluster_k");
    const auto p = write_set(dir, "p.embd", one_dim({-3, 0.5, 7, 12}));
    const auto run = oracle::run_cli({"cluster", "--input", p.string(), "--k", "4"});
    ASSERT_EQ(run.exit_code, 0) << run.err;
    EXPECT_EQ(stdout_json(run)["wcss"].get<double>(), 0.0);
}

TEST(CliCluster, TooFewFramesForK) {
    const auto dir = oracle::scratch_dir("cli_cluster_few");
    Xoshiro256 rng(63);
    const auto p = write_set(dir, "s.embd", oracle::random_set(50, 4, 10, rng));
    const auto run = oracle::run_cli({"cluster", "--input", p.string(), "--k", "1024"});
    EXPECT_EQ(run.exit_code, 3);
    EXPECT_NE(run.err.find("insufficient frames for k"), std::string::npos) << run.err;
}

TEST(CliCluster, KReductionIsOptIn) {
    const auto dir = oracle::scratch_dir("cli_cluster_reduce");
    const auto p = write_set(dir, "dup.embd", one_dim({1, 1, 1, 5, 5, 5, 9, 9}));
    const auto strict = oracle::run_cli({"cluster", "--input", p.string(), "--k", "5"});
    EXPECT_EQ(strict.exit_code, 3);
    EXPECT_NE(strict.err.find("insufficient distinct frames"), std::string::npos) << strict.err;
    const auto relaxed = oracle::run_cli({"cluster", "--input", p.string(), "--k", "5", "--allow-k-reduction"});
    ASSERT_EQ(relaxed.exit_code, 0) << relaxed.err;
    const auto j = stdout_json(relaxed);
    EXPECT_EQ(j["k"], 3);
    EXPECT_EQ(j["requested_k"], 5);
    EXPECT_EQ(j["wcss"].get<double>(), 0.0);
}

TEST(CliSweep, TwoEntriesFourMeasures) {
    const auto dir = oracle::scratch_dir("cli_sweep");
    Xoshiro256 rng(64);
    Manifest m;
    m.base_dir = dir;
    for (int i = 0; i < 2; ++i) {
        const std::string file = "m" + std::to_string(i) + ".embd";
        write_set(dir, file, oracle::random_set(30, 6, 12, rng));
        m.entries.push_back({"m" + std::to_string(i), 1000, 3, file, "dev"});
    }
    write_manifest(m, dir / "manifest.json");
    const std::vector<std::string> args{"sweep", "--manifest", (dir / "manifest.json").string(), "--out",
                                        (dir / "out.csv").string(), "--k", "4", "--batch-frames", "64", "--seed", "7"};
    const auto run = oracle::run_cli(args);
    ASSERT_EQ(run.exit_code, 0) << run.err;
    const auto first = oracle::slurp(dir / "out.csv");
    EXPECT_EQ(line_count(first), 1u + 8u);
    EXPECT_EQ(line_count(oracle::slurp(dir / "out.csv.errors.csv")), 1u);

    const auto records = read_measures_csv(dir / "out.csv");
    ASSERT_EQ(records.size(), 2u);
    for (const auto& r : records)
        for (const auto& name : known_measures()) EXPECT_EQ(r.measures.count(name), 1u) << r.model_id << " " << name;

    ASSERT_EQ(oracle::run_cli(args).exit_code, 0);
    EXPECT_EQ(oracle::slurp(dir / "out.csv"), first);
}

TEST(CliSweep, MeasureSubsetAndAlias) {
    const auto dir = oracle::scratch_dir("cli_sweep_subset");
    Xoshiro256 rng(65);
    Manifest m;
    m.base_dir = dir;
    write_set(dir, "a.embd", oracle::random_set(10, 3, 5, rng));
    m.entries.push_back({"a", 0, 0, "a.embd", ""});
    write_manifest(m, dir / "manifest.json");
    const auto run = oracle::run_cli({"sweep", "--manifest", (dir / "manifest.json").string(), "--out",
                                      (dir / "o.csv").string(), "--measure", "rankme-t,ger"});
    ASSERT_EQ(run.exit_code, 0) << run.err;
    const auto recs = read_measures_csv(dir / "o.csv");
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0].measures.size(), 2u);
    EXPECT_EQ(recs[0].measures.count("rankme_t"), 1u);
}

TEST(CliSweep, UnknownMeasureRejected) {
    const auto dir = oracle::scratch_dir("cli_sweep_unknown");
    Manifest m;
    m.base_dir = dir;
    write_set(dir, "a.embd", one_dim({1, 2, 3}));
    m.entries.push_back({"a", 0, 0, "a.embd", ""});
    write_manifest(m, dir / "manifest.json");
    const auto run = oracle::run_cli({"sweep", "--manifest", (dir / "manifest.json").string(), "--out",
                                      (dir / "o.csv").string(), "--measure", "entropy"});
    EXPECT_EQ(run.exit_code, 3);
}

TEST(CliCorrelate, TwoModelsIsInsufficient) {
    const auto dir = oracle::scratch_dir("cli_corr_two");
    std::vector<MeasureRecord> recs{{"a", 0, 0, {{"ger", 1.0}}}, {"b", 0, 0, {{"ger", 2.0}}}};
    write_text(dir / "m.csv", measures_to_csv(recs));
    write_text(dir / "d.csv", downstream_to_csv(DownstreamTable(
                                  {{"a", "ls", 10.0, ScoreKind::wer}, {"b", "ls", 9.0, ScoreKind::wer}})));
    const auto run = oracle::run_cli({"correlate", "--measures", (dir / "m.csv").string(), "--downstream",
                                      (dir / "d.csv").string(), "--task", "ls", "--out", (dir / "r.csv").string()});
    EXPECT_EQ(run.exit_code, 3);
    EXPECT_NE(run.err.find("insufficient matched models"), std::string::npos) << run.err;
}

TEST(CliCorrelate, ReportMirrorsAndWarnings) {
    const auto dir = oracle::scratch_dir("cli_corr");
    std::vector<MeasureRecord> recs;
    std::vector<DownstreamRow> rows;
    for (int i = 0; i < 6; ++i) {
        const std::string id = "m" + std::to_string(i);
        recs.push_back({id, 50000, 12, {{"ger", 10.0 + 3.0 * i + 0.1 * (i % 2)}, {"wcss", 100.0 / (i + 1)}}});
        if (i != 5) rows.push_back({id, "ls-final", 20.0 - i, ScoreKind::wer});
    }
    write_text(dir / "m.csv", measures_to_csv(recs));
    write_text(dir / "d.csv", downstream_to_csv(DownstreamTable(rows)));
    const auto run = oracle::run_cli({"correlate", "--measures", (dir / "m.csv").string(), "--downstream",
                                      (dir / "d.csv").string(), "--task", "ls", "--score-label", "ls-final",
                                      "--measure-step", "50000", "--out", (dir / "r.csv").string()});
    ASSERT_EQ(run.exit_code, 0) << run.err;
    EXPECT_NE(run.err.find("1 model(s) missing"), std::string::npos) << run.err;

    const auto csv = read_report_csv(dir / "r.csv");
    const auto doc = json::parse(oracle::slurp(dir / "r.json"));
    ASSERT_EQ(csv.size(), 1u);
    ASSERT_EQ(doc.size(), 1u);
    EXPECT_EQ(doc[0]["score_label"], "ls-final");
    const auto from_json = report_from_json(doc[0]);
    EXPECT_EQ(from_json.dropped_models, (std::vector<std::string>{"m5"}));
    for (const auto& [name, c] : csv[0].per_measure) {
        EXPECT_EQ(from_json.per_measure.at(name).pearson_r, c.pearson_r);
        EXPECT_EQ(c.n, 5u);
    }
    std::vector<double> g, s;
    for (int i = 0; i < 5; ++i) {
        g.push_back(recs[i].measures["ger"]);
        s.push_back(20.0 - i);
    }
    EXPECT_NEAR(csv[0].per_measure.at("ger").pearson_r, oracle::pearson(g, s), 1e-12);
}

TEST(CliSynth, CohortLayoutAndDeterminism) {
    const auto base = oracle::scratch_dir("cli_cohort");
    const std::vector<std::string> common{"--cohort", "12", "--dim", "16", "--rank-low", "2", "--rank-high", "14",
                                          "--sequences", "4", "--frames-per-seq", "10", "--seed", "5"};
    auto args_a = std::vector<std::string>{"synth", "--out", (base / "a").string()};
    auto args_b = std::vector<std::string>{"synth", "--out", (base / "b").string()};
    args_a.insert(args_a.end(), common.begin(), common.end());
    args_b.insert(args_b.end(), common.begin(), common.end());
    ASSERT_EQ(oracle::run_cli(args_a).exit_code, 0);
    ASSERT_EQ(oracle::run_cli(args_b).exit_code, 0);

    std::size_t embd = 0;
    for (const auto& e : fs::directory_iterator(base / "a")) {
        embd += e.path().extension() == ".embd";
        EXPECT_EQ(oracle::slurp(e.path()), oracle::slurp(base / "b" / e.path().filename())) << e.path();
    }
    EXPECT_EQ(embd, 12u);
    EXPECT_EQ(read_manifest(base / "a" / "manifest.json").entries.size(), 12u);
    EXPECT_EQ(read_downstream_csv(base / "a" / "downstream.csv").rows().size(), 12u);
}

TEST(CliErrors, CorruptInputs) {
    const auto dir = oracle::scratch_dir("cli_errors");
    Xoshiro256 rng(66);
    const auto set = oracle::random_set(5, 3, 4, rng);
    const std::vector<std::pair<oracle::Corruption, std::string>> cases{
        {oracle::Corruption::bad_magic, "unrecognized_format"},
        {oracle::Corruption::truncated, "truncated_payload"},
        {oracle::Corruption::nan_value, "non_finite"}};
    for (const auto& [how, kind] : cases) {
        const auto p = dir / (kind + ".embd");
        oracle::write_bytes(p, oracle::corrupt_embd(set, how));
        const auto run = oracle::run_cli({"rank", "--input", p.string()});
        EXPECT_EQ(run.exit_code, 1) << kind;
        EXPECT_NE(run.err.find(kind), std::string::npos) << run.err;
    }
    const auto missing = oracle::run_cli({"rank", "--input", (dir / "nope.embd").string()});
    EXPECT_EQ(missing.exit_code, 1);
    EXPECT_NE(missing.err.find("io"), std::string::npos);
}

TEST(CliErrors, UsageErrors) {
    EXPECT_EQ(oracle::run_cli({}).exit_code, 3);
    EXPECT_EQ(oracle::run_cli({"rank"}).exit_code, 3);
    EXPECT_EQ(oracle::run_cli({"cluster", "--input", "x", "--k", "0"}).exit_code, 3);
    EXPECT_EQ(oracle::run_cli({"bogus"}).exit_code, 3);
    EXPECT_EQ(oracle::run_cli({"--help"}).exit_code, 0);
}
