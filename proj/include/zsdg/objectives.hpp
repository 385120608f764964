#pragma once

// Training objectives. Each objective builds its loss inside a caller-owned
// graph and reports the individual term values alongside the total:
//
//   total = ce + lambda * semantic + reconstruction_weight * reconstruction + aux
//
// Term values are unweighted; `total` is what gets differentiated. When
// lambda is exactly zero the semantic term is evaluated for logging only and
// never enters the graph, so a semantic method at lambda 0 follows the same
// trajectory as its vanilla counterpart bit for bit.

#include "zsdg/autodiff.hpp"
#include "zsdg/data.hpp"
#include "zsdg/embeddings.hpp"
#include "zsdg/models.hpp"
#include "zsdg/optim.hpp"

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace zsdg {

struct LossWeights {
    double lambda = 1.0;  // semantic weight
    double eta = 0.0;     // regulariser weight, applied by the optimiser as weight decay
    double reconstruction_weight = 1.0;

    void validate() const;
};

struct MetaSplit {
    std::vector<std::size_t> meta_train;
    std::vector<std::size_t> meta_test;
};

struct TermValues {
    double total = 0.0;
    double ce = 0.0;
    double semantic = 0.0;
    double reconstruction = 0.0;
    double aux = 0.0;

    TermValues& operator+=(const TermValues& o);
    TermValues scaled(double factor) const;
};

struct LossTerms {
    ad::Var total;
    TermValues values;
};

/// A bundle bound into one graph; absent parts stay empty.
struct BoundBundle {
    BoundMlp extractor;
    std::optional<BoundMlp> head;
    std::vector<BoundMlp> decoders;
    std::optional<BoundMlp> critic;
};

struct BindOptions {
    bool extractor = true;
    bool head = true;
    bool decoders = true;
    bool critic = true;
};

BoundBundle bind_bundle(ad::Graph& graph, const ModelBundle& bundle, BindOptions trainable = {});

/// Mean squared distance between feature rows and their label embeddings,
/// computed without a graph.
double semantic_value(const Tensor& features, std::span<const std::size_t> labels,
                      const PrototypeSet& prototypes);

/// CE(g(f(X)), Y) + lambda * semantic(f(X), Y) on one pooled batch.
LossTerms s_agg_loss(const BoundBundle& model, const Batch& batch, const PrototypeSet& seen,
                     const LossWeights& weights);

/// Index-aligned views of the same base images in every training domain.
struct PairedBatch {
    std::vector<Tensor> inputs;  // one batch x input_dim matrix per domain
    std::vector<std::size_t> labels;
};

/// Gathers `indices` from every domain, rejecting domains whose labels
/// disagree at those positions.
PairedBatch make_paired_batch(std::span<const Domain> domains,
                              std::span<const std::size_t> indices);

/// Loss while training from source domain `source`: reconstruction of every
/// domain's view from the source features plus the semantic term.
LossTerms s_mtae_loss(const BoundBundle& model, std::size_t source, const PairedBatch& batch,
                      const PrototypeSet& seen, const LossWeights& weights);

/// Average of s_mtae_loss over every source domain.
LossTerms s_mtae_objective(const BoundBundle& model, const PairedBatch& batch,
                           const PrototypeSet& seen, const LossWeights& weights);

/// Shares of the domain count assigned to meta-train (default 3:2).
MetaSplit sample_meta_split(std::size_t domain_count, std::mt19937_64& rng,
                            double train_fraction = 0.6);

struct FcOptions {
    double inner_lr = 1e-3;
    bool use_aux = true;
    /// Norm of the parameter perturbation in the finite-difference
    /// Hessian-vector product that drives the critic update.
    double probe_norm = 1e-4;
};

struct FcDiagnostics {
    TermValues base;              // meta-train loss at the pre-step parameters
    double meta_ce_with_aux = 0.0;     // meta-test CE after the virtual step with aux
    double meta_ce_without_aux = 0.0;  // ... and without
    double critic_loss = 0.0;          // tanh(with - without)
    std::vector<Tensor> critic_grads;
};

/// One feature-critic iteration. Updates the extractor and head with the
/// meta-train loss (including the critic's auxiliary term), and the critic
/// with tanh(CE_meta(theta') - CE_meta(theta'')) where theta' and theta''
/// are virtual extractor steps with and without the auxiliary loss.
FcDiagnostics s_fc_step(ModelBundle& bundle, const MetaSplit& split,
                        std::span<const Batch> domain_batches, const PrototypeSet& seen,
                        const LossWeights& weights, const FcOptions& options,
                        Optimizer& base_optimizer, Optimizer* critic_optimizer);

/// Pooled meta-train (or meta-test) batch for the given domain indices.
Batch concat_batches(std::span<const Batch> domain_batches, std::span<const std::size_t> which);

/// Mutable parameter list of the extractor followed by the head.
std::vector<Tensor*> base_parameters(ModelBundle& bundle);

}  // namespace zsdg
