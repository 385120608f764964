#include "zsdg/eval.hpp"

#include "zsdg/error.hpp"

#include <algorithm>

namespace zsdg {

std::string to_string(DgMode mode) { return mode == DgMode::Head ? "head" : "semantic-nn"; }

Tensor extract_features(const Mlp& extractor, const LabeledImageSet& set, std::size_t batch_size) {
    if (set.image_size() != extractor.input_dim()) {
        throw ShapeError("images have " + std::to_string(set.image_size()) +
                         " values but the extractor expects " +
                         std::to_string(extractor.input_dim()));
    }
    const std::size_t h = extractor.output_dim();
    Tensor out({set.size(), h});
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        const std::size_t end = std::min(set.size(), start + batch_size);
        idx.clear();
        for (std::size_t i = start; i < end; ++i) idx.push_back(i);
        const Tensor f = extractor.forward(gather_batch(set, idx).inputs);
        std::copy(f.values().begin(), f.values().end(),
                  out.values().begin() + static_cast<std::ptrdiff_t>(start * h));
    }
    return out;
}

ClassAccuracy score_predictions(std::vector<std::string> classes,
                                std::span<const std::size_t> truth,
                                std::span<const std::size_t> predicted) {
    if (truth.size() != predicted.size()) throw ShapeError("truth and prediction counts differ");
    if (truth.empty()) throw DataError("empty evaluation set");
    ClassAccuracy out;
    const std::size_t k = classes.size();
    out.classes = std::move(classes);
    out.confusion.assign(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= k || predicted[i] >= k) throw DataError("label outside evaluation classes");
        ++out.confusion[truth[i]][predicted[i]];
        if (truth[i] == predicted[i]) ++out.correct;
    }
    out.total = truth.size();
    out.accuracy = static_cast<double>(out.correct) / static_cast<double>(out.total);
    return out;
}

std::vector<std::size_t> nearest_labels(const Tensor& features, const PrototypeSet& prototypes) {
    if (features.cols() != prototypes.dim()) {
        throw ShapeError("features of width " + std::to_string(features.cols()) +
                         " against prototypes of width " + std::to_string(prototypes.dim()));
    }
    std::vector<std::size_t> out(features.rows());
    for (std::size_t i = 0; i < features.rows(); ++i) out[i] = nearest_index(features.row(i), prototypes);
    return out;
}

namespace {

std::vector<std::size_t> truth_against(const LabeledImageSet& set,
                                       const std::vector<std::string>& classes) {
    std::vector<std::size_t> truth(set.size());
    std::vector<std::size_t> map(set.classes().size(), classes.size());
    for (std::size_t c = 0; c < set.classes().size(); ++c) {
        auto it = std::find(classes.begin(), classes.end(), set.classes()[c]);
        if (it != classes.end()) map[c] = static_cast<std::size_t>(it - classes.begin());
    }
    for (std::size_t i = 0; i < set.size(); ++i) {
        const std::size_t t = map[set.labels()[i]];
        if (t == classes.size()) {
            throw DataError("evaluation image of class '" + set.label_name(i) +
                            "' has no prototype");
        }
        truth[i] = t;
    }
    return truth;
}

}  // namespace

ClassAccuracy zsdg_accuracy(const ModelBundle& bundle, const LabeledImageSet& eval_zsdg,
                            const EmbeddingTable& table, std::span<const std::string> unseen,
                            bool generalized, std::span<const std::string> seen) {
    if (eval_zsdg.empty()) throw DataError("empty ZSDG evaluation set");
    std::vector<std::string> classes;
    if (generalized) classes.assign(seen.begin(), seen.end());
    classes.insert(classes.end(), unseen.begin(), unseen.end());
    const PrototypeSet protos = build_prototypes(table, classes);
    const auto truth = truth_against(eval_zsdg, classes);
    const auto pred = nearest_labels(extract_features(bundle.extractor, eval_zsdg), protos);
    return score_predictions(classes, truth, pred);
}

ClassAccuracy dg_accuracy(const ModelBundle& bundle, const LabeledImageSet& eval_dg,
                          const EmbeddingTable& table, std::span<const std::string> seen,
                          DgMode mode) {
    if (eval_dg.empty()) throw DataError("empty DG evaluation set");
    std::vector<std::string> classes(seen.begin(), seen.end());
    const auto truth = truth_against(eval_dg, classes);
    const Tensor features = extract_features(bundle.extractor, eval_dg);
    std::vector<std::size_t> pred;
    if (mode == DgMode::SemanticNn) {
        pred = nearest_labels(features, build_prototypes(table, classes));
    } else {
        if (!bundle.head) throw ConfigError("head-mode DG evaluation on a model without a head");
        if (bundle.head->output_dim() != classes.size()) {
            throw ShapeError("head has " + std::to_string(bundle.head->output_dim()) +
                             " outputs for " + std::to_string(classes.size()) + " seen classes");
        }
        const Tensor logits = bundle.head->forward(features);
        pred.resize(logits.rows());
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            const auto row = logits.row(i);
            pred[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        }
    }
    return score_predictions(classes, truth, pred);
}

}  // namespace zsdg
