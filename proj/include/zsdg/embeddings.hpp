#pragma once

#include "zsdg/autodiff.hpp"
#include "zsdg/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace zsdg {

/// Word -> vector map loaded from GloVe-style text. Immutable once built, so
/// concurrent lookups are safe.
class EmbeddingTable {
public:
    explicit EmbeddingTable(std::size_t dim);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return words_.size(); }
    bool normalized() const { return normalized_; }
    /// Words in file order.
    const std::vector<std::string>& words() const { return words_; }

    void insert(std::string word, std::vector<double> vector);
    bool contains(const std::string& word) const { return entries_.count(word) != 0; }
    /// Exact entry for `word`, or nullptr.
    const std::vector<double>* find(const std::string& word) const;

    /// Embedding of a class name. Names without an exact entry are split on
    /// '-' and '_' and resolved to the mean of their token vectors.
    std::vector<double> lookup(const std::string& class_name) const;

    /// Up to `count` stored words closest to `word` by edit distance.
    std::vector<std::string> suggestions(const std::string& word, std::size_t count = 3) const;

    /// Rescale every vector to unit L2 norm. Rejects zero vectors.
    void normalize();

private:
    std::size_t dim_;
    bool normalized_ = false;
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::vector<double>> entries_;
};

EmbeddingTable parse_embedding_text(std::istream& in,
                                    std::optional<std::size_t> expected_dim = std::nullopt);
EmbeddingTable load_embedding_text(const std::filesystem::path& path,
                                   std::optional<std::size_t> expected_dim = std::nullopt,
                                   bool normalize = false);
/// Writes shortest round-trip decimal representations, so reloading is exact.
void save_embedding_text(const EmbeddingTable& table, const std::filesystem::path& path);

/// Rows of class embeddings used as nearest-neighbour targets.
struct PrototypeSet {
    std::vector<std::string> classes;
    Tensor matrix;  // classes.size() x dim

    std::size_t dim() const { return matrix.cols(); }
    std::size_t size() const { return classes.size(); }
};

PrototypeSet build_prototypes(const EmbeddingTable& table,
                              std::span<const std::string> classes);

/// Index of the prototype at minimal squared Euclidean distance; ties go to
/// the lowest index.
std::size_t nearest_index(std::span<const double> query, const PrototypeSet& prototypes);
const std::string& nearest_class(std::span<const double> query,
                                 const PrototypeSet& prototypes);

/// Batch mean of ||feature_i - w[label_i]||^2, labels indexing prototype rows.
ad::Var semantic_loss(ad::Var features, std::span<const std::size_t> labels,
                      const PrototypeSet& prototypes);
ad::Var semantic_loss(ad::Var features, std::span<const std::string> labels,
                      const EmbeddingTable& table);

/// Rows of `prototypes` selected by `labels`, as a batch x dim target matrix.
Tensor gather_targets(const PrototypeSet& prototypes, std::span<const std::size_t> labels);

}  // namespace zsdg
