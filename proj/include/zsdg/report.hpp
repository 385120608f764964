#pragma once

#include "zsdg/engine.hpp"
#include "zsdg/stats.hpp"
#include "zsdg/tensor.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace zsdg {

/// One line of the runs CSV:
/// method,dataset,setting,target_domain,seed,lambda,eta,dg_acc,zsdg_acc,wall_s
struct RunRow {
    std::string method;
    std::string dataset;
    std::string setting;
    std::size_t target_domain = 0;
    std::uint64_t seed = 0;
    double lambda = 0.0;
    double eta = 0.0;
    double dg_acc = 0.0;
    double zsdg_acc = 0.0;
    double wall_s = 0.0;

    friend bool operator==(const RunRow&, const RunRow&) = default;
};

RunRow to_row(const RunRecord& record, bool wall_time = true);

/// Shortest decimal that parses back to the same double.
std::string format_double(double value);

const std::string& runs_csv_header();
std::string format_row(const RunRow& row);
RunRow parse_row(const std::string& line);

std::string format_runs_csv(std::span<const RunRow> rows);
std::vector<RunRow> read_runs_csv(const std::filesystem::path& path);

/// Appends under an exclusive advisory lock on "<path>.lock"; the file is
/// rewritten through a temporary and renamed, so it is never half-written.
void append_runs_csv(const std::filesystem::path& path, std::span<const RunRow> rows);

/// Runs sharing method, dataset, setting, target domain, lambda and eta.
struct ReportCell {
    std::string method;
    std::string dataset;
    std::string setting;
    std::size_t target_domain = 0;
    double lambda = 0.0;
    double eta = 0.0;
    AggregateCell dg;
    AggregateCell zsdg;
};

/// Aggregates one group across seeds; rows must agree on every key field.
ReportCell aggregate_group(std::span<const RunRow> rows);
/// Groups rows into cells (first-appearance order) and aggregates each.
std::vector<ReportCell> aggregate_runs(std::span<const RunRow> rows);

enum class Pairing { Setting, Domain };
Pairing parse_pairing(const std::string& name);
std::string to_string(Pairing pairing);

struct PairedScores {
    std::vector<std::string> keys;
    std::vector<double> a;
    std::vector<double> b;
};

/// Seed-averaged `metric` ("zsdg" or "dg") of two methods, paired per setting
/// (averaging target domains) or per (setting, target domain).
PairedScores pair_methods(std::span<const RunRow> rows, const std::string& method_a,
                          const std::string& method_b, Pairing pairing, const std::string& metric);

struct WilcoxonReport {
    std::string method_a;
    std::string method_b;
    Pairing pairing = Pairing::Setting;
    std::string metric;
    PairedScores pairs;
    WilcoxonResult result;
};

std::string format_cells_csv(std::span<const ReportCell> cells);
std::string format_report_json(std::span<const RunRow> rows, std::span<const ReportCell> cells,
                               const std::optional<WilcoxonReport>& wilcoxon);

/// Writes the per-run CSV and the JSON report (runs, aggregates, optional test).
void emit_report(std::span<const RunRow> rows, const std::filesystem::path& csv_path,
                 const std::filesystem::path& json_path,
                 const std::optional<WilcoxonReport>& wilcoxon = std::nullopt);

/// SVG 1.1 scatter: one circle per point coloured by class index from a fixed
/// 12-colour palette, a legend box, viewBox fitted to the data with a 5% margin.
std::string scatter_svg(const Tensor& points, std::span<const std::size_t> labels,
                        std::span<const std::string> class_names);
void emit_scatter_svg(const Tensor& points, std::span<const std::size_t> labels,
                      std::span<const std::string> class_names, const std::filesystem::path& path);

/// "x,y,label" per point.
std::string format_points_csv(const Tensor& points, std::span<const std::size_t> labels,
                              std::span<const std::string> class_names);

const std::vector<std::string>& scatter_palette();

}  // namespace zsdg
