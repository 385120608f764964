#pragma once

#include "zsdg/data.hpp"
#include "zsdg/embeddings.hpp"
#include "zsdg/models.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace zsdg {

/// Accuracy over one evaluation set with its confusion counts
/// (confusion[true][predicted], indexed by `classes`).
struct ClassAccuracy {
    std::vector<std::string> classes;
    std::vector<std::vector<std::size_t>> confusion;
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy = 0.0;
};

struct AccuracyReport {
    ClassAccuracy dg;
    ClassAccuracy zsdg;
};

enum class DgMode { Head, SemanticNn };
std::string to_string(DgMode mode);

/// Extractor features for every image of `set`, batched.
Tensor extract_features(const Mlp& extractor, const LabeledImageSet& set,
                        std::size_t batch_size = 256);

/// Predictions paired with truths; builds the confusion table.
ClassAccuracy score_predictions(std::vector<std::string> classes,
                                std::span<const std::size_t> truth,
                                std::span<const std::size_t> predicted);

/// Nearest-prototype labels for each feature row.
std::vector<std::size_t> nearest_labels(const Tensor& features, const PrototypeSet& prototypes);

/// Nearest-neighbour accuracy in the semantic space against prototypes of
/// `unseen` (or seen + unseen when `generalized`). Set labels are matched to
/// prototypes by class name.
ClassAccuracy zsdg_accuracy(const ModelBundle& bundle, const LabeledImageSet& eval_zsdg,
                            const EmbeddingTable& table, std::span<const std::string> unseen,
                            bool generalized = false, std::span<const std::string> seen = {});

/// Head mode: argmax of the classifier logits, whose columns follow `seen`.
/// Semantic-nn mode: nearest seen-class prototype.
ClassAccuracy dg_accuracy(const ModelBundle& bundle, const LabeledImageSet& eval_dg,
                          const EmbeddingTable& table, std::span<const std::string> seen,
                          DgMode mode);

}  // namespace zsdg
