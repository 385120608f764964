#include "zsdg/objectives.hpp"

#include "zsdg/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace zsdg {

void LossWeights::validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) {
        throw ConfigError("lambda must be a finite non-negative number");
    }
    if (!std::isfinite(eta) || eta < 0.0) {
        throw ConfigError("eta must be a finite non-negative number");
    }
    if (!std::isfinite(reconstruction_weight) || reconstruction_weight < 0.0) {
        throw ConfigError("reconstruction weight must be a finite non-negative number");
    }
}

TermValues& TermValues::operator+=(const TermValues& o) {
    total += o.total;
    ce += o.ce;
    semantic += o.semantic;
    reconstruction += o.reconstruction;
    aux += o.aux;
    return *this;
}

TermValues TermValues::scaled(double factor) const {
    return {total * factor, ce * factor, semantic * factor, reconstruction * factor,
            aux * factor};
}

BoundBundle bind_bundle(ad::Graph& graph, const ModelBundle& bundle, BindOptions trainable) {
    BoundBundle b;
    b.extractor = bind(graph, bundle.extractor, trainable.extractor);
    if (bundle.head) b.head = bind(graph, *bundle.head, trainable.head);
    for (const auto& d : bundle.decoders) b.decoders.push_back(bind(graph, d, trainable.decoders));
    if (bundle.critic) b.critic = bind(graph, *bundle.critic, trainable.critic);
    return b;
}

double semantic_value(const Tensor& features, std::span<const std::size_t> labels,
                      const PrototypeSet& prototypes) {
    if (features.rank() != 2 || features.rows() != labels.size() ||
        features.cols() != prototypes.dim()) {
        throw ShapeError("semantic_value: features " + shape_string(features.shape()) +
                         " do not match " + std::to_string(labels.size()) + " labels of width " +
                         std::to_string(prototypes.dim()));
    }
    if (labels.empty()) return 0.0;
    const Tensor targets = gather_targets(prototypes, labels);
    double acc = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const double d = features[i] - targets[i];
        acc += d * d;
    }
    return acc / static_cast<double>(labels.size());
}

namespace {

// Adds lambda * semantic to `total` unless lambda is zero, and records the
// unweighted value either way.
ad::Var with_semantic(ad::Var total, ad::Var features, std::span<const std::size_t> labels,
                      const PrototypeSet& seen, double lambda, TermValues& values) {
    if (lambda == 0.0) {
        values.semantic = semantic_value(features.value(), labels, seen);
        return total;
    }
    ad::Var sem = semantic_loss(features, labels, seen);
    values.semantic = sem.item();
    return ad::add(total, ad::scale(sem, lambda));
}

void check_labels(std::span<const std::size_t> labels, const PrototypeSet& seen) {
    for (std::size_t y : labels) {
        if (y >= seen.size()) {
            throw DataError("label " + std::to_string(y) + " outside " +
                            std::to_string(seen.size()) + " seen classes");
        }
    }
}

}  // namespace

LossTerms s_agg_loss(const BoundBundle& model, const Batch& batch, const PrototypeSet& seen,
                     const LossWeights& weights) {
    if (!model.head) throw ConfigError("aggregation objective needs a classifier head");
    if (batch.labels.empty()) throw DataError("empty batch");
    check_labels(batch.labels, seen);
    ad::Graph& g = model.extractor.weights.front().graph();
    ad::Var features = extract(model.extractor, g.constant(batch.inputs));
    ad::Var ce = ad::softmax_cross_entropy(classify(*model.head, features), batch.labels);

    LossTerms out;
    out.values.ce = ce.item();
    out.total = with_semantic(ce, features, batch.labels, seen, weights.lambda, out.values);
    out.values.total = out.total.item();
    return out;
}

PairedBatch make_paired_batch(std::span<const Domain> domains,
                              std::span<const std::size_t> indices) {
    if (domains.empty()) throw DataError("paired batch needs at least one domain");
    if (indices.empty()) throw DataError("empty batch");
    PairedBatch out;
    for (std::size_t d = 0; d < domains.size(); ++d) {
        const auto& set = domains[d].images;
        if (set.classes() != domains.front().images.classes()) {
            throw DataError("unpaired batch: domain " + domains[d].tag +
                            " uses a different class vocabulary");
        }
        Batch b = gather_batch(set, indices);
        if (d == 0) {
            out.labels = b.labels;
        } else if (b.labels != out.labels) {
            throw DataError("unpaired batch: labels of domain " + domains[d].tag +
                            " disagree with domain " + domains.front().tag);
        }
        out.inputs.push_back(std::move(b.inputs));
    }
    return out;
}

namespace {

void check_paired(const BoundBundle& model, const PairedBatch& batch) {
    if (batch.inputs.empty() || batch.labels.empty()) throw DataError("empty paired batch");
    if (batch.inputs.size() != model.decoders.size()) {
        throw DataError("unpaired batch: " + std::to_string(batch.inputs.size()) +
                        " domain views for " + std::to_string(model.decoders.size()) +
                        " decoders");
    }
    for (const auto& x : batch.inputs) {
        if (x.shape() != batch.inputs.front().shape() || x.rows() != batch.labels.size()) {
            throw DataError("unpaired batch: domain views have shapes " +
                            shape_string(batch.inputs.front().shape()) + " and " +
                            shape_string(x.shape()));
        }
    }
}

}  // namespace

LossTerms s_mtae_loss(const BoundBundle& model, std::size_t source, const PairedBatch& batch,
                      const PrototypeSet& seen, const LossWeights& weights) {
    check_paired(model, batch);
    check_labels(batch.labels, seen);
    if (source >= batch.inputs.size()) {
        throw DataError("source domain " + std::to_string(source) + " outside " +
                        std::to_string(batch.inputs.size()) + " views");
    }
    ad::Graph& g = model.extractor.weights.front().graph();
    ad::Var features = extract(model.extractor, g.constant(batch.inputs[source]));

    LossTerms out;
    ad::Var recon;
    for (std::size_t j = 0; j < batch.inputs.size(); ++j) {
        ad::Var r = ad::mse_loss(decode(model.decoders, j, features), g.constant(batch.inputs[j]));
        recon = recon.valid() ? ad::add(recon, r) : r;
    }
    out.values.reconstruction = recon.item();
    ad::Var total;
    if (weights.reconstruction_weight == 0.0) {
        total = ad::scale(recon, 0.0);
    } else if (weights.reconstruction_weight == 1.0) {
        total = recon;
    } else {
        total = ad::scale(recon, weights.reconstruction_weight);
    }
    out.total = with_semantic(total, features, batch.labels, seen, weights.lambda, out.values);
    out.values.total = out.total.item();
    return out;
}

LossTerms s_mtae_objective(const BoundBundle& model, const PairedBatch& batch,
                           const PrototypeSet& seen, const LossWeights& weights) {
    const std::size_t n = batch.inputs.size();
    if (n == 0) throw DataError("empty paired batch");
    LossTerms out;
    ad::Var total;
    for (std::size_t i = 0; i < n; ++i) {
        LossTerms t = s_mtae_loss(model, i, batch, seen, weights);
        total = total.valid() ? ad::add(total, t.total) : t.total;
        out.values += t.values;
    }
    const double inv = 1.0 / static_cast<double>(n);
    out.total = n == 1 ? total : ad::scale(total, inv);
    out.values = out.values.scaled(inv);
    out.values.total = out.total.item();
    return out;
}

MetaSplit sample_meta_split(std::size_t domain_count, std::mt19937_64& rng,
                            double train_fraction) {
    if (domain_count < 2) {
        throw ConfigError("meta-splitting needs at least two training domains, got " +
                          std::to_string(domain_count));
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("meta-train fraction must lie strictly between 0 and 1");
    }
    auto k = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(domain_count)));
    k = std::clamp<std::size_t>(k, 1, domain_count - 1);
    std::vector<std::size_t> order(domain_count);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = domain_count - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(order[i], order[pick(rng)]);
    }
    MetaSplit split;
    split.meta_train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    split.meta_test.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    std::sort(split.meta_train.begin(), split.meta_train.end());
    std::sort(split.meta_test.begin(), split.meta_test.end());
    return split;
}

Batch concat_batches(std::span<const Batch> domain_batches, std::span<const std::size_t> which) {
    if (which.empty()) throw DataError("no domains selected for batch");
    std::size_t rows = 0, cols = 0;
    for (std::size_t d : which) {
        if (d >= domain_batches.size()) {
            throw DataError("domain index " + std::to_string(d) + " outside " +
                            std::to_string(domain_batches.size()) + " batches");
        }
        const Tensor& x = domain_batches[d].inputs;
        if (rows == 0) cols = x.cols();
        if (x.cols() != cols) throw ShapeError("domain batches differ in width");
        rows += x.rows();
    }
    Batch out;
    out.inputs = Tensor({rows, cols});
    std::size_t offset = 0;
    for (std::size_t d : which) {
        const Batch& b = domain_batches[d];
        std::copy(b.inputs.values().begin(), b.inputs.values().end(),
                  out.inputs.values().begin() + static_cast<std::ptrdiff_t>(offset));
        offset += b.inputs.size();
        out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
        out.indices.insert(out.indices.end(), b.indices.begin(), b.indices.end());
    }
    return out;
}

std::vector<Tensor*> base_parameters(ModelBundle& bundle) {
    std::vector<Tensor*> out = bundle.extractor.parameters();
    if (bundle.head) {
        for (Tensor* p : bundle.head->parameters()) out.push_back(p);
    }
    return out;
}

namespace {

struct BaseGrads {
    TermValues values;
    std::vector<Tensor> extractor;
    std::vector<Tensor> head;
};

// Meta-train loss and its gradients with respect to extractor and head.
BaseGrads base_gradients(const ModelBundle& bundle, const Batch& batch, const PrototypeSet& seen,
                         const LossWeights& weights, bool with_aux) {
    ad::Graph g;
    BoundBundle m = bind_bundle(g, bundle, {true, true, false, false});
    ad::Var features = extract(m.extractor, g.constant(batch.inputs));
    ad::Var ce = ad::softmax_cross_entropy(classify(*m.head, features), batch.labels);
    BaseGrads out;
    out.values.ce = ce.item();
    ad::Var total = with_semantic(ce, features, batch.labels, seen, weights.lambda, out.values);
    if (with_aux) {
        ad::Var aux = criticize(*m.critic, features);
        out.values.aux = aux.item();
        total = ad::add(total, aux);
    }
    out.values.total = total.item();
    if (!std::isfinite(out.values.total)) throw NonFiniteError("non-finite meta-train loss");
    g.backward(total);
    out.extractor = m.extractor.grads();
    out.head = m.head->grads();
    return out;
}

Mlp stepped(const Mlp& mlp, std::span<const Tensor> grads, double scale) {
    Mlp out = mlp;
    std::vector<Tensor*> params = out.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->values();
        auto gv = grads[i].values();
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= scale * gv[k];
    }
    return out;
}

// Meta-test cross-entropy with the given extractor; optionally its gradient
// with respect to the extractor parameters.
double meta_ce(const Mlp& extractor, const Mlp& head, const Batch& batch,
               std::vector<Tensor>* grads) {
    ad::Graph g;
    BoundMlp f = bind(g, extractor, grads != nullptr);
    BoundMlp h = bind(g, head, false);
    ad::Var ce = ad::softmax_cross_entropy(classify(h, extract(f, g.constant(batch.inputs))),
                                           batch.labels);
    if (grads) {
        g.backward(ce);
        *grads = f.grads();
    }
    return ce.item();
}

std::vector<Tensor> critic_grads_at(const Mlp& extractor, const Mlp& critic, const Batch& batch) {
    ad::Graph g;
    BoundMlp f = bind(g, extractor, false);
    BoundMlp c = bind(g, critic, true);
    ad::Var aux = criticize(c, extract(f, g.constant(batch.inputs)));
    g.backward(aux);
    return c.grads();
}

}  // namespace

FcDiagnostics s_fc_step(ModelBundle& bundle, const MetaSplit& split,
                        std::span<const Batch> domain_batches, const PrototypeSet& seen,
                        const LossWeights& weights, const FcOptions& options,
                        Optimizer& base_optimizer, Optimizer* critic_optimizer) {
    if (!bundle.head) throw ConfigError("feature-critic training needs a classifier head");
    if (options.use_aux && !bundle.critic) throw ConfigError("feature-critic training needs a critic");
    if (split.meta_train.empty() || split.meta_test.empty()) {
        throw ConfigError("meta-train and meta-test splits must both be non-empty");
    }
    if (!(options.inner_lr >= 0.0) || !(options.probe_norm > 0.0)) {
        throw ConfigError("inner learning rate must be >= 0 and probe norm > 0");
    }
    const Batch train = concat_batches(domain_batches, split.meta_train);
    check_labels(train.labels, seen);

    FcDiagnostics diag;
    BaseGrads full = base_gradients(bundle, train, seen, weights, options.use_aux);
    diag.base = full.values;

    if (options.use_aux) {
        const Batch test = concat_batches(domain_batches, split.meta_test);
        check_labels(test.labels, seen);
        BaseGrads plain = base_gradients(bundle, train, seen, weights, false);

        const Mlp with_aux = stepped(bundle.extractor, full.extractor, options.inner_lr);
        const Mlp without_aux = stepped(bundle.extractor, plain.extractor, options.inner_lr);
        std::vector<Tensor> meta_grad;
        diag.meta_ce_with_aux = meta_ce(with_aux, *bundle.head, test, &meta_grad);
        diag.meta_ce_without_aux = meta_ce(without_aux, *bundle.head, test, nullptr);
        const double delta = diag.meta_ce_with_aux - diag.meta_ce_without_aux;
        diag.critic_loss = std::tanh(delta);

        // d critic_loss / d omega
        //   = (1 - tanh^2) * d CE_meta(theta') / d omega
        //   = (1 - tanh^2) * (-inner_lr) * d/d omega [ g . grad_theta aux(theta, omega) ]
        // with g = grad CE_meta(theta'). The mixed term is a central difference of
        // grad_omega aux along g.
        double norm2 = 0.0;
        for (const auto& t : meta_grad) {
            for (double v : t.values()) norm2 += v * v;
        }
        for (const Tensor* p : bundle.critic->parameters()) diag.critic_grads.emplace_back(p->shape());
        const double norm = std::sqrt(norm2);
        if (norm > 0.0 && options.inner_lr > 0.0) {
            const double eps = options.probe_norm / norm;
            const Mlp plus = stepped(bundle.extractor, meta_grad, -eps);
            const Mlp minus = stepped(bundle.extractor, meta_grad, eps);
            const auto gp = critic_grads_at(plus, *bundle.critic, train);
            const auto gm = critic_grads_at(minus, *bundle.critic, train);
            const double outer = (1.0 - diag.critic_loss * diag.critic_loss) * (-options.inner_lr) /
                                 (2.0 * eps);
            for (std::size_t i = 0; i < gp.size(); ++i) {
                auto out = diag.critic_grads[i].values();
                for (std::size_t k = 0; k < out.size(); ++k) {
                    out[k] = outer * (gp[i][k] - gm[i][k]);
                }
            }
        }
        if (critic_optimizer) {
            std::vector<Tensor*> cp = bundle.critic->parameters();
            critic_optimizer->step(cp, diag.critic_grads);
        }
    }

    std::vector<Tensor> grads = std::move(full.extractor);
    for (auto& t : full.head) grads.push_back(std::move(t));
    std::vector<Tensor*> params = base_parameters(bundle);
    base_optimizer.step(params, grads);
    return diag;
}

}  // namespace zsdg
