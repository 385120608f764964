#pragma once

#include "zsdg/autodiff.hpp"
#include "zsdg/embeddings.hpp"
#include "zsdg/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace zsdg {

enum class OutputActivation { Linear, Clamp01, Softplus };

struct DenseLayer {
    Tensor weight;  // fan_in x fan_out
    Tensor bias;    // 1 x fan_out

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Fully connected network with ReLU between layers and a selectable output
/// activation.
class Mlp {
public:
    Mlp() = default;
    /// Glorot-uniform weights, zero biases.
    Mlp(std::vector<std::size_t> widths, OutputActivation output, std::mt19937_64& rng);
    Mlp(std::vector<DenseLayer> layers, OutputActivation output);

    static Mlp zeros(std::vector<std::size_t> widths, OutputActivation output);

    std::vector<std::size_t> widths() const;
    std::size_t input_dim() const { return layers_.front().weight.shape()[0]; }
    std::size_t output_dim() const { return layers_.back().weight.shape()[1]; }
    OutputActivation output() const { return output_; }

    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    /// Weight, bias, weight, bias, ... in layer order.
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;

    /// Inference without gradient bookkeeping.
    Tensor forward(const Tensor& inputs) const;

    friend bool operator==(const Mlp&, const Mlp&) = default;

private:
    std::vector<DenseLayer> layers_;
    OutputActivation output_ = OutputActivation::Linear;
};

/// An Mlp whose parameters live as nodes of one graph.
struct BoundMlp {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
    OutputActivation output = OutputActivation::Linear;

    std::size_t input_dim() const { return weights.front().shape()[0]; }
    std::size_t output_dim() const { return weights.back().shape()[1]; }
    ad::Var forward(ad::Var inputs) const;
    /// Same order as Mlp::parameters().
    std::vector<ad::Var> vars() const;
    /// Gradients after backward(), same order as Mlp::parameters().
    std::vector<Tensor> grads() const;
};

/// Parameters enter the graph as trainable leaves, or as constants when
/// `trainable` is false (frozen networks).
BoundMlp bind(ad::Graph& graph, const Mlp& mlp, bool trainable = true);

struct ModelSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> extractor_hidden = {256, 128};
    std::size_t embedding_dim = 50;
    std::size_t num_classes = 0;   // classifier head width; 0 = no head
    std::size_t num_decoders = 0;  // one per training domain; 0 = no decoder bank
    std::vector<std::size_t> decoder_hidden = {128, 256};
    bool critic = false;
    std::vector<std::size_t> critic_hidden = {32};

    void validate() const;
};

/// Feature extractor f/h, classifier head g_phi, per-domain decoders and
/// feature critic. Unused parts stay empty.
struct ModelBundle {
    Mlp extractor;
    std::optional<Mlp> head;
    std::vector<Mlp> decoders;
    std::optional<Mlp> critic;

    std::size_t embedding_dim() const { return extractor.output_dim(); }

    /// Stable names ("extractor.0.weight", "decoder.2.1.bias", ...) in
    /// serialisation order.
    std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;

    friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

ModelBundle init_model(const ModelSpec& spec, std::uint64_t seed);
/// As above, rejecting a spec whose semantic width differs from the table.
ModelBundle init_model(const ModelSpec& spec, const EmbeddingTable& table, std::uint64_t seed);

/// Rebuilds a bundle from named tensors; inverse of named_parameters().
ModelBundle bundle_from_named(std::span<const std::pair<std::string, Tensor>> tensors);

ad::Var extract(const BoundMlp& extractor, ad::Var inputs);
ad::Var classify(const BoundMlp& head, ad::Var features);
ad::Var decode(std::span<const BoundMlp> decoders, std::size_t domain, ad::Var features);
/// Critic score of a feature batch: softplus MLP over the batch-mean feature.
ad::Var criticize(const BoundMlp& critic, ad::Var features);

}  // namespace zsdg
