#include "zsdg/embeddings.hpp"

#include "zsdg/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace zsdg {

namespace {

std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::vector<std::string> split_tokens(const std::string& name) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : name) {
        if (c == '-' || c == '_') {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) {
        if (!out.empty()) out += ", ";
        out += s;
    }
    return out;
}

}  // namespace

EmbeddingTable::EmbeddingTable(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw DataError("embedding dimension must be positive");
}

void EmbeddingTable::insert(std::string word, std::vector<double> vector) {
    if (vector.size() != dim_) {
        throw DataError("embedding for '" + word + "' has " + std::to_string(vector.size()) +
                        " values, expected " + std::to_string(dim_));
    }
    if (contains(word)) throw DataError("duplicate embedding word '" + word + "'");
    if (normalized_) {
        throw DataError("cannot insert into a normalized embedding table");
    }
    words_.push_back(word);
    entries_.emplace(std::move(word), std::move(vector));
}

const std::vector<double>* EmbeddingTable::find(const std::string& word) const {
    auto it = entries_.find(word);
    return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> EmbeddingTable::suggestions(const std::string& word,
                                                     std::size_t count) const {
    std::vector<std::pair<std::size_t, std::string>> scored;
    scored.reserve(words_.size());
    for (const auto& w : words_) scored.emplace_back(edit_distance(word, w), w);
    std::sort(scored.begin(), scored.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < scored.size() && i < count; ++i) out.push_back(scored[i].second);
    return out;
}

std::vector<double> EmbeddingTable::lookup(const std::string& class_name) const {
    if (const auto* exact = find(class_name)) return *exact;
    const auto tokens = split_tokens(class_name);
    if (tokens.size() > 1) {
        std::vector<double> mean(dim_, 0.0);
        for (const auto& tok : tokens) {
            const auto* v = find(tok);
            if (!v) {
                throw DataError("no embedding for token '" + tok + "' of class '" + class_name +
                                "'; nearest available: " + join(suggestions(tok)));
            }
            for (std::size_t i = 0; i < dim_; ++i) mean[i] += (*v)[i];
        }
        for (double& x : mean) x /= static_cast<double>(tokens.size());
        return mean;
    }
    throw DataError("no embedding for class '" + class_name +
                    "'; nearest available: " + join(suggestions(class_name)));
}

void EmbeddingTable::normalize() {
    for (const auto& w : words_) {
        auto& v = entries_.at(w);
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) throw DataError("cannot normalize zero vector for '" + w + "'");
        for (double& x : v) x /= norm;
    }
    normalized_ = true;
}

EmbeddingTable parse_embedding_text(std::istream& in, std::optional<std::size_t> expected_dim) {
    std::optional<EmbeddingTable> table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto where = " (line " + std::to_string(line_no) + ")";

        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true) {
            const auto pos = rest.find(' ');
            fields.push_back(rest.substr(0, pos));
            if (pos == std::string_view::npos) break;
            rest.remove_prefix(pos + 1);
        }
        while (fields.size() > 1 && fields.back().empty()) fields.pop_back();
        if (fields.size() < 2 || fields[0].empty()) {
            throw FormatError("embedding line has no values" + where);
        }
        std::vector<double> values;
        values.reserve(fields.size() - 1);
        for (std::size_t i = 1; i < fields.size(); ++i) {
            const auto f = fields[i];
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
                throw FormatError("unparsable value '" + std::string(f) + "'" + where);
            }
            values.push_back(v);
        }
        if (!table) {
            if (expected_dim && *expected_dim != values.size()) {
                throw FormatError("embedding dimension " + std::to_string(values.size()) +
                                  " does not match expected " + std::to_string(*expected_dim) +
                                  where);
            }
            table.emplace(values.size());
        }
        if (values.size() != table->dim()) {
            throw FormatError("inconsistent embedding dimension " +
                              std::to_string(values.size()) + ", expected " +
                              std::to_string(table->dim()) + where);
        }
        std::string word(fields[0]);
        if (table->contains(word)) {
            throw FormatError("duplicate embedding word '" + word + "'" + where);
        }
        table->insert(std::move(word), std::move(values));
    }
    if (!table) throw FormatError("embedding file is empty");
    return std::move(*table);
}

EmbeddingTable load_embedding_text(const std::filesystem::path& path,
                                   std::optional<std::size_t> expected_dim, bool normalize) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open embedding file " + path.string());
    auto table = parse_embedding_text(in, expected_dim);
    if (normalize) table.normalize();
    return table;
}

void save_embedding_text(const EmbeddingTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write embedding file " + path.string());
    char buf[64];
    for (const auto& w : table.words()) {
        out << w;
        for (double v : *table.find(w)) {
            const auto res = std::to_chars(buf, buf + sizeof buf, v);
            out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing embedding file " + path.string());
}

PrototypeSet build_prototypes(const EmbeddingTable& table, std::span<const std::string> classes) {
    std::set<std::string> seen;
    PrototypeSet set;
    set.matrix = Tensor({classes.size(), table.dim()});
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (!seen.insert(classes[i]).second) {
            throw DataError("duplicate prototype class '" + classes[i] + "'");
        }
        const auto v = table.lookup(classes[i]);
        std::copy(v.begin(), v.end(), set.matrix.row(i).begin());
        set.classes.push_back(classes[i]);
    }
    return set;
}

std::size_t nearest_index(std::span<const double> query, const PrototypeSet& prototypes) {
    if (prototypes.size() == 0) throw DataError("nearest_class: empty prototype set");
    if (query.size() != prototypes.dim()) {
        throw ShapeError("nearest_class: query has " + std::to_string(query.size()) +
                         " values, prototypes have dim " + std::to_string(prototypes.dim()));
    }
    std::size_t best = 0;
    double best_dist = 0.0;
    for (std::size_t c = 0; c < prototypes.size(); ++c) {
        const auto row = prototypes.matrix.row(c);
        double d = 0.0;
        for (std::size_t k = 0; k < query.size(); ++k) {
            const double diff = query[k] - row[k];
            d += diff * diff;
        }
        if (c == 0 || d < best_dist) {
            best = c;
            best_dist = d;
        }
    }
    return best;
}

const std::string& nearest_class(std::span<const double> query, const PrototypeSet& prototypes) {
    return prototypes.classes[nearest_index(query, prototypes)];
}

Tensor gather_targets(const PrototypeSet& prototypes, std::span<const std::size_t> labels) {
    Tensor targets({labels.size(), prototypes.dim()});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= prototypes.size()) {
            throw DataError("label index " + std::to_string(labels[i]) + " outside " +
                            std::to_string(prototypes.size()) + " classes");
        }
        const auto row = prototypes.matrix.row(labels[i]);
        std::copy(row.begin(), row.end(), targets.row(i).begin());
    }
    return targets;
}

ad::Var semantic_loss(ad::Var features, std::span<const std::size_t> labels,
                      const PrototypeSet& prototypes) {
    const auto& shape = features.shape();
    if (shape.size() != 2 || shape[1] != prototypes.dim()) {
        throw ShapeError("semantic_loss: features " + shape_string(shape) +
                         " vs embedding dim " + std::to_string(prototypes.dim()));
    }
    if (shape[0] != labels.size() || labels.empty()) {
        throw ShapeError("semantic_loss: " + std::to_string(labels.size()) +
                         " labels for features " + shape_string(shape));
    }
    auto& g = features.graph();
    const ad::Var diff = ad::sub(features, g.constant(gather_targets(prototypes, labels)));
    return ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(labels.size()));
}

ad::Var semantic_loss(ad::Var features, std::span<const std::string> labels,
                      const EmbeddingTable& table) {
    if (features.shape().size() != 2 || features.shape()[1] != table.dim()) {
        throw ShapeError("semantic_loss: features " + shape_string(features.shape()) +
                         " vs embedding dim " + std::to_string(table.dim()));
    }
    std::vector<std::string> classes;
    std::vector<std::size_t> index;
    for (const auto& l : labels) {
        auto it = std::find(classes.begin(), classes.end(), l);
        if (it == classes.end()) {
            classes.push_back(l);
            index.push_back(classes.size() - 1);
        } else {
            index.push_back(static_cast<std::size_t>(it - classes.begin()));
        }
    }
    return semantic_loss(features, index, build_prototypes(table, classes));
}

}  // namespace zsdg
