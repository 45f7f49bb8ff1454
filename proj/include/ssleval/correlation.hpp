#pragma once
#ifndef SSLEVAL_CORRELATION_HPP
#define SSLEVAL_CORRELATION_HPP

// Measure/score joins and Pearson correlation reports, with their CSV and JSON forms.
//
//   measures CSV:   model_id,checkpoint_step,layer,measure,value
//   downstream CSV: model_id,task,score,score_kind
//   report CSV:     task,checkpoint_step,layer,measure,pearson_r,n

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "ssleval/error.hpp"

namespace ssleval {

/// 17 significant digits: enough for any binary64 to round-trip.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Two-pass sample Pearson coefficient.
inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw Error(ErrorKind::invalid_input, "pearson: length mismatch (" + std::to_string(x.size()) + " vs " +
                                                  std::to_string(y.size()) + ")");
    if (x.size() < 3) throw Error(ErrorKind::precondition, "pearson: need at least 3 pairs");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::math, "constant series");
    const double r = sxy / (std::sqrt(sxx) * std::sqrt(syy));
    return std::clamp(r, -1.0, 1.0);
}

struct MeasureRecord {
    std::string model_id;
    std::int64_t checkpoint_step = 0;
    std::int64_t layer = 0;
    std::map<std::string, double> measures;

    auto key() const { return std::tie(model_id, checkpoint_step, layer); }
};

enum class ScoreKind { wer, error_rate, other };

inline std::string_view to_string(ScoreKind kind) {
    switch (kind) {
        case ScoreKind::wer: return "wer";
        case ScoreKind::error_rate: return "error_rate";
        case ScoreKind::other: return "other";
    }
    return "other";
}

inline ScoreKind parse_score_kind(std::string_view s) {
    if (s == "wer") return ScoreKind::wer;
    if (s == "error_rate") return ScoreKind::error_rate;
    if (s == "other") return ScoreKind::other;
    throw Error(ErrorKind::invalid_input, "unknown score_kind '" + std::string(s) + "'");
}

struct DownstreamRow {
    std::string model_id;
    std::string task;
    double score = 0.0;
    ScoreKind score_kind = ScoreKind::other;
};

/// Downstream scores; (model_id, task) pairs are unique.
class DownstreamTable {
public:
    DownstreamTable() = default;
    explicit DownstreamTable(std::vector<DownstreamRow> rows) : rows_(std::move(rows)) {
        std::set<std::pair<std::string, std::string>> seen;
        for (const auto& r : rows_) {
            if (!seen.emplace(r.model_id, r.task).second)
                throw Error(ErrorKind::invalid_input, "duplicate downstream row (" + r.model_id + ", " + r.task + ")");
            if (!std::isfinite(r.score))
                throw Error(ErrorKind::non_finite, "non-finite score for " + r.model_id);
        }
    }

    std::span<const DownstreamRow> rows() const noexcept { return rows_; }

private:
    std::vector<DownstreamRow> rows_;
};

struct MeasureCorrelation {
    double pearson_r = 0.0;
    std::size_t n = 0;
};

struct ExcludedMeasure {
    std::string measure;
    std::string reason;
};

struct CorrelationReport {
    std::string task;
    std::int64_t checkpoint_step = 0;
    std::int64_t layer = 0;
    std::map<std::string, MeasureCorrelation> per_measure;
    std::vector<std::string> dropped_models;  // present on only one side of the join
    std::vector<ExcludedMeasure> excluded_measures;
};

/// Correlates measures taken at (checkpoint_step, layer) with the downstream scores
/// of `task`. `score_task` selects which downstream rows are used when it differs
/// from the report's task name (e.g. measures at an early step against final scores).
inline CorrelationReport correlate(std::span<const MeasureRecord> measures, const DownstreamTable& downstream,
                                   const std::string& task, std::int64_t checkpoint_step, std::int64_t layer,
                                   const std::string& score_task = {}) {
    const std::string& score_key = score_task.empty() ? task : score_task;
    std::map<std::string, const MeasureRecord*> by_model;
    for (const auto& rec : measures) {
        if (rec.checkpoint_step != checkpoint_step || rec.layer != layer) continue;
        if (!by_model.emplace(rec.model_id, &rec).second)
            throw Error(ErrorKind::invalid_input, "duplicate measure record for model " + rec.model_id);
    }
    std::map<std::string, double> scores;
    for (const auto& row : downstream.rows())
        if (row.task == score_key) scores.emplace(row.model_id, row.score);

    CorrelationReport report;
    report.task = task;
    report.checkpoint_step = checkpoint_step;
    report.layer = layer;

    std::vector<std::string> matched;
    for (const auto& [model, rec] : by_model) {
        if (scores.count(model)) matched.push_back(model);
        else report.dropped_models.push_back(model);
    }
    for (const auto& [model, score] : scores)
        if (!by_model.count(model)) report.dropped_models.push_back(model);
    std::sort(report.dropped_models.begin(), report.dropped_models.end());

    if (matched.size() < 3)
        throw Error(ErrorKind::precondition, "insufficient matched models: " + std::to_string(matched.size()) +
                                                 " (need at least 3)");

    std::set<std::string> names;
    for (const auto& m : matched)
        for (const auto& [name, value] : by_model[m]->measures) names.insert(name);

    std::vector<double> y;
    for (const auto& m : matched) y.push_back(scores[m]);
    for (const auto& name : names) {
        std::vector<double> x;
        for (const auto& m : matched) {
            const auto& ms = by_model[m]->measures;
            if (auto it = ms.find(name); it != ms.end()) x.push_back(it->second);
        }
        if (x.size() != matched.size()) {
            report.excluded_measures.push_back(
                {name, "present for " + std::to_string(x.size()) + " of " + std::to_string(matched.size()) + " models"});
            continue;
        }
        try {
            const double r = pearson(x, y);
            report.per_measure[name] = {r, x.size()};
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::math) throw;
            report.excluded_measures.push_back({name, e.what()});
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, std::string_view header) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::invalid_input, path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header)
        throw Error(ErrorKind::invalid_input, path.string() + ": expected header '" + std::string(header) + "'");
    const auto columns = split_csv_line(std::string(header)).size();
    std::vector<std::vector<std::string>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != columns)
            throw Error(ErrorKind::invalid_input, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                                      std::to_string(columns) + " fields");
        rows.push_back(std::move(fields));
    }
    return rows;
}

inline double parse_double(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw Error(ErrorKind::invalid_input, where + ": not a number '" + s + "'");
    if (!std::isfinite(v)) throw Error(ErrorKind::non_finite, where + ": non-finite value");
    return v;
}

inline std::int64_t parse_int(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw Error(ErrorKind::invalid_input, where + ": not an integer '" + s + "'");
    return v;
}

inline void check_field(const std::string& s) {
    if (s.find_first_of(",\n\r") != std::string::npos)
        throw Error(ErrorKind::invalid_input, "CSV field contains a separator: '" + s + "'");
}

}  // namespace detail

inline constexpr std::string_view measures_csv_header = "model_id,checkpoint_step,layer,measure,value";
inline constexpr std::string_view downstream_csv_header = "model_id,task,score,score_kind";
inline constexpr std::string_view report_csv_header = "task,checkpoint_step,layer,measure,pearson_r,n";

/// Long-format measures, one row per (record, measure), sorted by
/// (model_id, checkpoint_step, layer, measure).
inline std::string measures_to_csv(std::span<const MeasureRecord> records) {
    std::vector<const MeasureRecord*> sorted;
    for (const auto& r : records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->key() < b->key(); });
    std::string out(measures_csv_header);
    out += '\n';
    for (const auto* r : sorted) {
        detail::check_field(r->model_id);
        for (const auto& [name, value] : r->measures) {
            detail::check_field(name);
            out += r->model_id + ',' + std::to_string(r->checkpoint_step) + ',' + std::to_string(r->layer) + ',' +
                   name + ',' + format_double(value) + '\n';
        }
    }
    return out;
}

inline std::vector<MeasureRecord> read_measures_csv(const std::filesystem::path& path) {
    std::map<std::tuple<std::string, std::int64_t, std::int64_t>, MeasureRecord> grouped;
    std::size_t row_no = 0;
    for (auto& f : detail::read_csv(path, measures_csv_header)) {
        const std::string where = path.string() + " row " + std::to_string(++row_no);
        MeasureRecord key{f[0], detail::parse_int(f[1], where), detail::parse_int(f[2], where), {}};
        auto [it, inserted] = grouped.try_emplace({key.model_id, key.checkpoint_step, key.layer}, key);
        if (!it->second.measures.emplace(f[3], detail::parse_double(f[4], where)).second)
            throw Error(ErrorKind::invalid_input, where + ": duplicate measure '" + f[3] + "'");
    }
    std::vector<MeasureRecord> out;
    for (auto& [k, rec] : grouped) out.push_back(std::move(rec));
    return out;
}

inline std::string downstream_to_csv(const DownstreamTable& table) {
    std::string out(downstream_csv_header);
    out += '\n';
    for (const auto& r : table.rows()) {
        detail::check_field(r.model_id);
        detail::check_field(r.task);
        out += r.model_id + ',' + r.task + ',' + format_double(r.score) + ',' + std::string(to_string(r.score_kind)) +
               '\n';
    }
    return out;
}

inline DownstreamTable read_downstream_csv(const std::filesystem::path& path) {
    std::vector<DownstreamRow> rows;
    std::size_t row_no = 0;
    for (auto& f : detail::read_csv(path, downstream_csv_header)) {
        const std::string where = path.string() + " row " + std::to_string(++row_no);
        rows.push_back({f[0], f[1], detail::parse_double(f[2], where), parse_score_kind(f[3])});
    }
    return DownstreamTable(std::move(rows));
}

inline std::string reports_to_csv(std::span<const CorrelationReport> reports) {
    std::string out(report_csv_header);
    out += '\n';
    for (const auto& rep : reports)
        for (const auto& [name, c] : rep.per_measure)
            out += rep.task + ',' + std::to_string(rep.checkpoint_step) + ',' + std::to_string(rep.layer) + ',' + name +
                   ',' + format_double(c.pearson_r) + ',' + std::to_string(c.n) + '\n';
    return out;
}

inline nlohmann::json report_to_json(const CorrelationReport& rep) {
    nlohmann::json measures = nlohmann::json::object();
    for (const auto& [name, c] : rep.per_measure) measures[name] = {{"pearson_r", c.pearson_r}, {"n", c.n}};
    auto excluded = nlohmann::json::array();
    for (const auto& e : rep.excluded_measures) excluded.push_back({{"measure", e.measure}, {"reason", e.reason}});
    return {{"task", rep.task},
            {"checkpoint_step", rep.checkpoint_step},
            {"layer", rep.layer},
            {"measures", measures},
            {"dropped_models", rep.dropped_models},
            {"excluded_measures", excluded}};
}

inline CorrelationReport report_from_json(const nlohmann::json& j) {
    CorrelationReport rep;
    rep.task = j.at("task").get<std::string>();
    rep.checkpoint_step = j.at("checkpoint_step").get<std::int64_t>();
    rep.layer = j.at("layer").get<std::int64_t>();
    for (const auto& [name, c] : j.at("measures").items())
        rep.per_measure[name] = {c.at("pearson_r").get<double>(), c.at("n").get<std::size_t>()};
    rep.dropped_models = j.at("dropped_models").get<std::vector<std::string>>();
    for (const auto& e : j.at("excluded_measures"))
        rep.excluded_measures.push_back({e.at("measure").get<std::string>(), e.at("reason").get<std::string>()});
    return rep;
}

/// Parses a report CSV back into per-(task, step, layer) reports (join metadata is not in the CSV).
inline std::vector<CorrelationReport> read_report_csv(const std::filesystem::path& path) {
    std::map<std::tuple<std::string, std::int64_t, std::int64_t>, CorrelationReport> grouped;
    std::size_t row_no = 0;
    for (auto& f : detail::read_csv(path, report_csv_header)) {
        const std::string where = path.string() + " row " + std::to_string(++row_no);
        const auto step = detail::parse_int(f[1], where);
        const auto layer = detail::parse_int(f[2], where);
        auto& rep = grouped[{f[0], step, layer}];
        rep.task = f[0];
        rep.checkpoint_step = step;
        rep.layer = layer;
        rep.per_measure[f[3]] = {detail::parse_double(f[4], where),
                                 static_cast<std::size_t>(detail::parse_int(f[5], where))};
    }
    std::vector<CorrelationReport> out;
    for (auto& [k, rep] : grouped) out.push_back(std::move(rep));
    return out;
}

}  // namespace ssleval

#endif  // SSLEVAL_CORRELATION_HPP
