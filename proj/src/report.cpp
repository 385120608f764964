#include "zsdg/report.hpp"

#include "zsdg/checkpoint.hpp"
#include "zsdg/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fcntl.h>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/file.h>
#include <unistd.h>

namespace zsdg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string format_double(double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw FormatError("cannot format number");
    return std::string(buf, end);
}

RunRow to_row(const RunRecord& record, bool wall_time) {
    const RunConfig& c = record.config;
    return {to_string(c.method), c.dataset, c.setting, c.target_domain, c.seed, c.lambda, c.eta,
            record.accuracy.dg.accuracy, record.accuracy.zsdg.accuracy,
            wall_time ? record.wall_seconds : 0.0};
}

const std::string& runs_csv_header() {
    static const std::string header =
        "method,dataset,setting,target_domain,seed,lambda,eta,dg_acc,zsdg_acc,wall_s";
    return header;
}

namespace {

void check_field(const std::string& s, const char* what) {
    if (s.find_first_of(",\"\n\r") != std::string::npos) {
        throw DataError(std::string(what) + " '" + s + "' cannot be written to CSV");
    }
}

template <typename T>
T parse_number(const std::string& field, const char* what, std::size_t line) {
    T value{};
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw FormatError("bad " + std::string(what) + " '" + field + "'" +
                          (line ? " (line " + std::to_string(line) + ")" : ""));
    }
    return value;
}

RunRow parse_row_at(const std::string& line, std::size_t lineno) {
    std::vector<std::string> f;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            f.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    f.push_back(cur);
    if (f.size() != 10) {
        throw FormatError("expected 10 fields, got " + std::to_string(f.size()) +
                          (lineno ? " (line " + std::to_string(lineno) + ")" : ""));
    }
    RunRow r;
    r.method = f[0];
    r.dataset = f[1];
    r.setting = f[2];
    r.target_domain = parse_number<std::size_t>(f[3], "target_domain", lineno);
    r.seed = parse_number<std::uint64_t>(f[4], "seed", lineno);
    r.lambda = parse_number<double>(f[5], "lambda", lineno);
    r.eta = parse_number<double>(f[6], "eta", lineno);
    r.dg_acc = parse_number<double>(f[7], "dg_acc", lineno);
    r.zsdg_acc = parse_number<double>(f[8], "zsdg_acc", lineno);
    r.wall_s = parse_number<double>(f[9], "wall_s", lineno);
    return r;
}

std::vector<RunRow> parse_runs(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::vector<RunRow> rows;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1) {
            if (line != runs_csv_header()) throw FormatError(origin + ": unexpected CSV header");
            continue;
        }
        if (line.empty()) continue;
        try {
            rows.push_back(parse_row_at(line, lineno));
        } catch (const FormatError& e) {
            throw FormatError(origin + ": " + e.what());
        }
    }
    return rows;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

std::string format_row(const RunRow& r) {
    check_field(r.method, "method");
    check_field(r.dataset, "dataset");
    check_field(r.setting, "setting");
    return r.method + "," + r.dataset + "," + r.setting + "," + std::to_string(r.target_domain) +
           "," + std::to_string(r.seed) + "," + format_double(r.lambda) + "," +
           format_double(r.eta) + "," + format_double(r.dg_acc) + "," +
           format_double(r.zsdg_acc) + "," + format_double(r.wall_s);
}

RunRow parse_row(const std::string& line) { return parse_row_at(line, 0); }

std::string format_runs_csv(std::span<const RunRow> rows) {
    std::string out = runs_csv_header() + "\n";
    for (const auto& r : rows) out += format_row(r) + "\n";
    return out;
}

std::vector<RunRow> read_runs_csv(const fs::path& path) {
    return parse_runs(slurp(path), path.string());
}

void append_runs_csv(const fs::path& path, std::span<const RunRow> rows) {
    const std::string lock_path = path.string() + ".lock";
    const int fd = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) throw IoError("cannot open lock file " + lock_path);
    struct Unlock {
        int fd;
        ~Unlock() {
            ::flock(fd, LOCK_UN);
            ::close(fd);
        }
    } guard{fd};
    if (::flock(fd, LOCK_EX) != 0) throw IoError("cannot lock " + lock_path);

    std::string text;
    if (fs::exists(path)) {
        text = slurp(path);
        parse_runs(text, path.string());  // refuse to extend a malformed file
        if (!text.empty() && text.back() != '\n') text += '\n';
    }
    if (text.empty()) text = runs_csv_header() + "\n";
    for (const auto& r : rows) text += format_row(r) + "\n";
    write_file_atomic(path, text);
}

ReportCell aggregate_group(std::span<const RunRow> rows) {
    if (rows.empty()) throw StatsError("cannot aggregate an empty group");
    const RunRow& k = rows.front();
    std::vector<double> dg, zsdg;
    for (const auto& r : rows) {
        if (r.method != k.method || r.dataset != k.dataset || r.setting != k.setting ||
            r.target_domain != k.target_domain || r.lambda != k.lambda || r.eta != k.eta) {
            throw StatsError("mixed configs in one group (" + k.method + "/" + k.setting + " vs " +
                             r.method + "/" + r.setting + ")");
        }
        dg.push_back(r.dg_acc);
        zsdg.push_back(r.zsdg_acc);
    }
    return {k.method, k.dataset, k.setting, k.target_domain, k.lambda, k.eta,
            aggregate(dg), aggregate(zsdg)};
}

std::vector<ReportCell> aggregate_runs(std::span<const RunRow> rows) {
    std::vector<std::vector<RunRow>> groups;
    for (const auto& r : rows) {
        auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) {
            const RunRow& k = g.front();
            return k.method == r.method && k.dataset == r.dataset && k.setting == r.setting &&
                   k.target_domain == r.target_domain && k.lambda == r.lambda && k.eta == r.eta;
        });
        if (it == groups.end()) {
            groups.push_back({r});
        } else {
            it->push_back(r);
        }
    }
    std::vector<ReportCell> out;
    for (const auto& g : groups) out.push_back(aggregate_group(g));
    return out;
}

Pairing parse_pairing(const std::string& name) {
    if (name == "setting") return Pairing::Setting;
    if (name == "domain") return Pairing::Domain;
    throw ConfigError("unknown pairing '" + name + "' (setting, domain)");
}

std::string to_string(Pairing pairing) { return pairing == Pairing::Setting ? "setting" : "domain"; }

PairedScores pair_methods(std::span<const RunRow> rows, const std::string& method_a,
                          const std::string& method_b, Pairing pairing,
                          const std::string& metric) {
    if (metric != "zsdg" && metric != "dg") throw ConfigError("metric must be zsdg or dg");
    struct Acc {
        double sum = 0.0;
        std::size_t n = 0;
        std::optional<std::pair<double, double>> params;  // lambda, eta
    };
    std::map<std::string, Acc> a, b;
    for (const auto& r : rows) {
        if (r.method != method_a && r.method != method_b) continue;
        std::string key = r.dataset + "/" + r.setting;
        if (pairing == Pairing::Domain) key += "/D" + std::to_string(r.target_domain);
        Acc& acc = (r.method == method_a ? a : b)[key];
        const std::pair<double, double> params{r.lambda, r.eta};
        if (acc.params && *acc.params != params) {
            throw StatsError("method " + r.method + " has runs with different lambda/eta under " +
                             key + "; filter the runs first");
        }
        acc.params = params;
        acc.sum += metric == "zsdg" ? r.zsdg_acc : r.dg_acc;
        ++acc.n;
    }
    PairedScores out;
    for (const auto& [key, acc] : a) {
        auto it = b.find(key);
        if (it == b.end()) continue;
        out.keys.push_back(key);
        out.a.push_back(acc.sum / static_cast<double>(acc.n));
        out.b.push_back(it->second.sum / static_cast<double>(it->second.n));
    }
    if (out.keys.empty()) {
        throw StatsError("no " + to_string(pairing) + " has runs of both " + method_a + " and " +
                         method_b);
    }
    return out;
}

namespace {

ordered_json cell_json(const AggregateCell& c) {
    return {{"mean", c.mean}, {"std", c.std}, {"n", c.n}};
}

}  // namespace

std::string format_cells_csv(std::span<const ReportCell> cells) {
    std::string out = "method,dataset,setting,target_domain,lambda,eta,n,dg_mean,dg_std,zsdg_mean,zsdg_std\n";
    for (const auto& c : cells) {
        out += c.method + "," + c.dataset + "," + c.setting + "," + std::to_string(c.target_domain) +
               "," + format_double(c.lambda) + "," + format_double(c.eta) + "," +
               std::to_string(c.dg.n) + "," + format_double(c.dg.mean) + "," +
               format_double(c.dg.std) + "," + format_double(c.zsdg.mean) + "," +
               format_double(c.zsdg.std) + "\n";
    }
    return out;
}

std::string format_report_json(std::span<const RunRow> rows, std::span<const ReportCell> cells,
                               const std::optional<WilcoxonReport>& wilcoxon) {
    ordered_json runs = ordered_json::array();
    for (const auto& r : rows) {
        runs.push_back({{"method", r.method},     {"dataset", r.dataset},
                        {"setting", r.setting},   {"target_domain", r.target_domain},
                        {"seed", r.seed},         {"lambda", r.lambda},
                        {"eta", r.eta},           {"dg_acc", r.dg_acc},
                        {"zsdg_acc", r.zsdg_acc}, {"wall_s", r.wall_s}});
    }
    ordered_json aggs = ordered_json::array();
    for (const auto& c : cells) {
        aggs.push_back({{"method", c.method},
                        {"dataset", c.dataset},
                        {"setting", c.setting},
                        {"target_domain", c.target_domain},
                        {"lambda", c.lambda},
                        {"eta", c.eta},
                        {"dg", cell_json(c.dg)},
                        {"zsdg", cell_json(c.zsdg)}});
    }
    ordered_json doc = {{"runs", runs}, {"aggregates", aggs}};
    if (wilcoxon) {
        const auto& w = *wilcoxon;
        ordered_json pairs = ordered_json::array();
        for (std::size_t i = 0; i < w.pairs.keys.size(); ++i) {
            pairs.push_back({{"key", w.pairs.keys[i]}, {"a", w.pairs.a[i]}, {"b", w.pairs.b[i]}});
        }
        doc["wilcoxon"] = {{"method_a", w.method_a},
                           {"method_b", w.method_b},
                           {"pairing", to_string(w.pairing)},
                           {"metric", w.metric},
                           {"n", w.result.n},
                           {"statistic", w.result.statistic},
                           {"w_plus", w.result.w_plus},
                           {"w_minus", w.result.w_minus},
                           {"p_value", w.result.p_value},
                           {"exact", w.result.exact},
                           {"pairs", pairs}};
    }
    return doc.dump(2) + "\n";
}

void emit_report(std::span<const RunRow> rows, const fs::path& csv_path, const fs::path& json_path,
                 const std::optional<WilcoxonReport>& wilcoxon) {
    if (rows.empty()) throw DataError("no runs to report");
    const auto cells = aggregate_runs(rows);
    if (!csv_path.empty()) write_file_atomic(csv_path, format_runs_csv(rows));
    if (!json_path.empty()) write_file_atomic(json_path, format_report_json(rows, cells, wilcoxon));
}

const std::vector<std::string>& scatter_palette() {
    static const std::vector<std::string> palette = {
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
        "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
    };
    return palette;
}

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 6);
    (void)ec;
    return std::string(buf, end);
}

void check_scatter(const Tensor& points, std::span<const std::size_t> labels,
                   std::span<const std::string> class_names) {
    if (points.rank() != 2 || points.cols() != 2) throw ShapeError("scatter points must be n x 2");
    if (points.rows() == 0) throw DataError("no points to plot");
    if (labels.size() != points.rows()) throw ShapeError("one label per point required");
    for (std::size_t y : labels) {
        if (y >= class_names.size()) throw DataError("point label outside class names");
    }
}

}  // namespace

std::string scatter_svg(const Tensor& points, std::span<const std::size_t> labels,
                        std::span<const std::string> class_names) {
    check_scatter(points, labels, class_names);
    if (!points.all_finite()) throw NonFiniteError("non-finite scatter coordinates");
    // SVG y grows downwards; plot -y so the picture keeps the usual orientation.
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (std::size_t i = 0; i < points.rows(); ++i) {
        x0 = std::min(x0, points.at(i, 0));
        x1 = std::max(x1, points.at(i, 0));
        y0 = std::min(y0, -points.at(i, 1));
        y1 = std::max(y1, -points.at(i, 1));
    }
    double w = x1 - x0, h = y1 - y0;
    if (w <= 0.0) w = 1.0;
    if (h <= 0.0) h = 1.0;
    const double vx = x0 - 0.05 * w, vy = y0 - 0.05 * h, vw = 1.1 * w, vh = 1.1 * h;
    const double scale = std::max(vw, vh);
    const double r = 0.006 * scale;
    const auto& palette = scatter_palette();

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"" << num(vx) << " "
       << num(vy) << " " << num(vw) << " " << num(vh) << "\" width=\"800\" height=\""
       << num(800.0 * vh / vw) << "\">\n";
    os << "<rect x=\"" << num(vx) << "\" y=\"" << num(vy) << "\" width=\"" << num(vw)
       << "\" height=\"" << num(vh) << "\" fill=\"white\"/>\n";
    os << "<g id=\"points\">\n";
    for (std::size_t i = 0; i < points.rows(); ++i) {
        os << "<circle cx=\"" << num(points.at(i, 0)) << "\" cy=\"" << num(-points.at(i, 1))
           << "\" r=\"" << num(r) << "\" fill=\"" << palette[labels[i] % palette.size()]
           << "\" fill-opacity=\"0.8\"/>\n";
    }
    os << "</g>\n";

    std::vector<std::size_t> present;
    for (std::size_t y : labels) {
        if (std::find(present.begin(), present.end(), y) == present.end()) present.push_back(y);
    }
    std::sort(present.begin(), present.end());
    const double line = 0.04 * scale, font = 0.03 * scale, pad = 0.01 * scale;
    std::size_t longest = 1;
    for (std::size_t y : present) longest = std::max(longest, class_names[y].size());
    const double box_w = 2.0 * pad + line + 0.6 * font * static_cast<double>(longest);
    const double box_h = 2.0 * pad + line * static_cast<double>(present.size());
    const double bx = vx + vw - box_w - pad, by = vy + pad;
    os << "<g id=\"legend\" font-family=\"sans-serif\" font-size=\"" << num(font) << "\">\n";
    os << "<rect x=\"" << num(bx) << "\" y=\"" << num(by) << "\" width=\"" << num(box_w)
       << "\" height=\"" << num(box_h) << "\" fill=\"white\" fill-opacity=\"0.85\" stroke=\"#444\" stroke-width=\""
       << num(0.002 * scale) << "\"/>\n";
    for (std::size_t k = 0; k < present.size(); ++k) {
        const double ty = by + pad + line * static_cast<double>(k);
        os << "<g class=\"legend-entry\"><rect x=\"" << num(bx + pad) << "\" y=\""
           << num(ty + 0.2 * line) << "\" width=\"" << num(0.6 * line) << "\" height=\""
           << num(0.6 * line) << "\" fill=\"" << palette[present[k] % palette.size()]
           << "\"/><text x=\"" << num(bx + pad + line) << "\" y=\"" << num(ty + 0.75 * line)
           << "\">" << xml_escape(class_names[present[k]]) << "</text></g>\n";
    }
    os << "</g>\n</svg>\n";
    return os.str();
}

void emit_scatter_svg(const Tensor& points, std::span<const std::size_t> labels,
                      std::span<const std::string> class_names, const fs::path& path) {
    write_file_atomic(path, scatter_svg(points, labels, class_names));
}

std::string format_points_csv(const Tensor& points, std::span<const std::size_t> labels,
                              std::span<const std::string> class_names) {
    check_scatter(points, labels, class_names);
    std::string out = "x,y,label\n";
    for (std::size_t i = 0; i < points.rows(); ++i) {
        out += format_double(points.at(i, 0)) + "," + format_double(points.at(i, 1)) + "," +
               class_names[labels[i]] + "\n";
    }
    return out;
}

}  // namespace zsdg
