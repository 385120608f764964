#include "zsdg/engine.hpp"

#include "zsdg/checkpoint.hpp"
#include "zsdg/error.hpp"
#include "zsdg/store.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>

namespace zsdg {

namespace {

struct MethodInfo {
    Method method;
    const char* name;
};

constexpr MethodInfo kMethods[] = {
    {Method::Agg, "agg"},   {Method::SAgg, "s-agg"}, {Method::Mtae, "mtae"},
    {Method::SMtae, "s-mtae"}, {Method::Fc, "fc"},   {Method::SFc, "s-fc"},
};

enum class Family { Agg, Mtae, Fc };

Family family(Method m) {
    switch (m) {
        case Method::Agg:
        case Method::SAgg: return Family::Agg;
        case Method::Mtae:
        case Method::SMtae: return Family::Mtae;
        case Method::Fc:
        case Method::SFc: return Family::Fc;
    }
    return Family::Agg;
}

}  // namespace

std::string to_string(Method method) {
    for (const auto& m : kMethods) {
        if (m.method == method) return m.name;
    }
    return "?";
}

const std::vector<std::string>& method_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& m : kMethods) out.emplace_back(m.name);
        return out;
    }();
    return names;
}

Method parse_method(const std::string& name) {
    for (const auto& m : kMethods) {
        if (name == m.name) return m.method;
    }
    std::string known;
    for (const auto& n : method_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown method '" + name + "' (expected one of " + known + ")");
}

bool is_semantic(Method method) {
    return method == Method::SAgg || method == Method::SMtae || method == Method::SFc;
}

DgMode dg_mode(Method method) {
    return method == Method::SMtae ? DgMode::SemanticNn : DgMode::Head;
}

double RunConfig::effective_lambda() const { return is_semantic(method) ? lambda : 0.0; }

void RunConfig::validate() const {
    LossWeights{lambda, eta}.validate();
    optimizer.validate();
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(inner_lr >= 0.0) || !std::isfinite(inner_lr)) {
        throw ConfigError("inner learning rate must be finite and non-negative");
    }
    auto positive = [](const std::vector<std::size_t>& widths, const char* what) {
        for (std::size_t w : widths) {
            if (w == 0) throw ConfigError(std::string(what) + " widths must be positive");
        }
    };
    positive(extractor_hidden, "extractor");
    positive(decoder_hidden, "decoder");
    positive(critic_hidden, "critic");
    if (setting.empty()) throw ConfigError("setting name is empty");
    if (data_dir.empty()) {
        if (!dataset.empty() && dataset != "synthetic") {
            throw ConfigError("dataset '" + dataset + "' needs a prepared data directory");
        }
        if (synthetic_classes < 4 || synthetic_classes > synthetic_class_limit()) {
            throw ConfigError("synthetic class count must lie in [4, " +
                              std::to_string(synthetic_class_limit()) + "]");
        }
        if (synthetic_per_class == 0) throw ConfigError("synthetic images per class must be positive");
    } else if (!std::filesystem::exists(manifest_path(data_dir))) {
        throw IoError("no prepared dataset at " + data_dir.string());
    }
    if (!embedding_path.empty() && !std::filesystem::exists(embedding_path)) {
        throw IoError("embedding file " + embedding_path.string() + " does not exist");
    }
}

const Setting& Experiment::setting(const std::string& name) const {
    for (const auto& s : settings) {
        if (s.name == name) return s;
    }
    std::string known;
    for (const auto& s : settings) known += (known.empty() ? "" : ", ") + s.name;
    throw ConfigError("unknown setting '" + name + "' for dataset " + dataset + " (" + known + ")");
}

Experiment load_experiment(const RunConfig& config) {
    config.validate();
    Experiment ex;
    if (config.data_dir.empty()) {
        SyntheticSpec spec;
        spec.classes = config.synthetic_classes;
        spec.per_class = config.synthetic_per_class;
        spec.seed = config.synthetic_seed;
        SyntheticUniverse u = make_synthetic_zsdg(spec);
        ex.dataset = "synthetic";
        ex.domains = std::move(u.domains);
        ex.table = std::move(u.embeddings);
        ex.settings = std::move(u.settings);
    } else {
        PreparedData data = read_prepared(config.data_dir);
        if (!config.dataset.empty() && config.dataset != data.dataset) {
            throw ConfigError("config names dataset '" + config.dataset + "' but " +
                              config.data_dir.string() + " holds '" + data.dataset + "'");
        }
        ex.dataset = data.dataset;
        ex.domains = std::move(data.domains);
        ex.settings = std::move(data.settings);
        if (data.embeddings) ex.table = std::move(*data.embeddings);
        else if (config.embedding_path.empty()) {
            throw ConfigError("dataset " + data.dataset + " has no embeddings; pass an embedding file");
        }
    }
    if (!config.embedding_path.empty()) ex.table = load_embedding_text(config.embedding_path);
    if (config.normalize_embeddings) ex.table.normalize();
    return ex;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finaliser over the combined value
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

ModelSpec model_spec(const RunConfig& config, std::size_t input_dim, std::size_t embedding_dim,
                     std::size_t seen_classes, std::size_t training_domains) {
    ModelSpec spec;
    spec.input_dim = input_dim;
    spec.embedding_dim = embedding_dim;
    spec.extractor_hidden = config.extractor_hidden;
    spec.decoder_hidden = config.decoder_hidden;
    spec.critic_hidden = config.critic_hidden;
    switch (family(config.method)) {
        case Family::Agg: spec.num_classes = seen_classes; break;
        case Family::Mtae: spec.num_decoders = training_domains; break;
        case Family::Fc:
            spec.num_classes = seen_classes;
            spec.critic = true;
            break;
    }
    return spec;
}

namespace {

// Shared state for one run.
struct Run {
    const RunConfig& config;
    SettingSplit split;
    PrototypeSet seen;
    LossWeights weights;
    ModelBundle bundle;
    RunRecord record;
};

void check_finite(const TermValues& t, std::size_t epoch, std::size_t batch) {
    if (!std::isfinite(t.total)) {
        throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch));
    }
}

template <typename Fn>
void with_context(std::size_t epoch, std::size_t batch, Fn&& fn) {
    try {
        fn();
    } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch) + ")");
    }
}

LabeledImageSet pooled(const std::vector<Domain>& domains) {
    const auto& first = domains.front().images;
    LabeledImageSet out(first.height(), first.width(), first.channels(), first.classes());
    for (const auto& d : domains) {
        for (std::size_t i = 0; i < d.images.size(); ++i) out.add(d.images.pixels(i), d.images.labels()[i]);
    }
    return out;
}

// Consecutive, unshuffled batches; used for the initial-loss pass so it does
// not consume any random stream.
std::vector<std::vector<std::size_t>> sequential(std::size_t count, std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < count; start += batch_size) {
        std::vector<std::size_t> b;
        for (std::size_t i = start; i < std::min(count, start + batch_size); ++i) b.push_back(i);
        out.push_back(std::move(b));
    }
    return out;
}

TermValues mean_of(const std::vector<TermValues>& terms) {
    TermValues acc;
    for (const auto& t : terms) acc += t;
    return terms.empty() ? acc : acc.scaled(1.0 / static_cast<double>(terms.size()));
}

std::vector<Tensor> concat_grads(std::vector<Tensor> a, std::vector<Tensor> b) {
    for (auto& t : b) a.push_back(std::move(t));
    return a;
}

// Aggregation-style terms (with the critic's aux when present) at the current
// parameters, without updating anything.
TermValues agg_terms(const Run& run, const Batch& batch, bool with_aux) {
    ad::Graph g;
    BoundBundle m = bind_bundle(g, run.bundle, {false, false, false, false});
    LossTerms t = s_agg_loss(m, batch, run.seen, run.weights);
    if (with_aux) {
        ad::Var features = extract(m.extractor, g.constant(batch.inputs));
        t.values.aux = criticize(*m.critic, features).item();
        t.values.total += t.values.aux;
    }
    return t.values;
}

void train_agg(Run& run) {
    const RunConfig& c = run.config;
    const LabeledImageSet data = pooled(run.split.train);
    {
        std::vector<TermValues> init;
        for (const auto& idx : sequential(data.size(), c.batch_size)) {
            init.push_back(agg_terms(run, gather_batch(data, idx), false));
        }
        run.record.initial = mean_of(init);
    }
    OptimizerSpec ospec = c.optimizer;
    ospec.weight_decay = c.eta;
    Optimizer opt(ospec);
    BatchStream stream(data.size(), c.batch_size, c.seed + 1);
    for (std::size_t e = 0; e < c.epochs; ++e) {
        std::vector<TermValues> terms;
        const auto batches = make_batches(data, stream);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            ad::Graph g;
            BoundBundle m = bind_bundle(g, run.bundle);
            LossTerms t = s_agg_loss(m, batches[b], run.seen, run.weights);
            check_finite(t.values, e, b);
            g.backward(t.total);
            auto grads = concat_grads(m.extractor.grads(), m.head->grads());
            auto params = base_parameters(run.bundle);
            with_context(e, b, [&] { opt.step(params, grads); });
            terms.push_back(t.values);
        }
        run.record.epochs.push_back(mean_of(terms));
    }
}

std::vector<Tensor*> mtae_parameters(ModelBundle& bundle) {
    std::vector<Tensor*> out = bundle.extractor.parameters();
    for (auto& d : bundle.decoders) {
        for (Tensor* p : d.parameters()) out.push_back(p);
    }
    return out;
}

// Fresh linear head on frozen encoder features, for vanilla MTAE's DG score.
Mlp frozen_head(const Run& run, const LabeledImageSet& data) {
    const RunConfig& c = run.config;
    const Tensor features = extract_features(run.bundle.extractor, data);
    std::mt19937_64 rng(c.seed + 3);
    Mlp head({features.cols(), run.split.seen.size()}, OutputActivation::Linear, rng);
    Optimizer opt(c.optimizer);
    BatchStream stream(data.size(), c.batch_size, derive_seed(c.seed + 3, 0));
    for (std::size_t e = 0; e < c.head_epochs; ++e) {
        for (const auto& idx : stream.next_epoch()) {
            Tensor x({idx.size(), features.cols()});
            std::vector<std::size_t> y;
            for (std::size_t r = 0; r < idx.size(); ++r) {
                std::copy(features.row(idx[r]).begin(), features.row(idx[r]).end(), x.row(r).begin());
                y.push_back(data.labels()[idx[r]]);
            }
            ad::Graph g;
            BoundMlp h = bind(g, head, true);
            ad::Var ce = ad::softmax_cross_entropy(h.forward(g.constant(std::move(x))), y);
            if (!std::isfinite(ce.item())) throw NonFiniteError("non-finite loss in frozen-head training");
            g.backward(ce);
            auto params = head.parameters();
            opt.step(params, h.grads());
        }
    }
    return head;
}

void train_mtae(Run& run) {
    const RunConfig& c = run.config;
    std::vector<Domain> train = run.split.train;
    if (!domains_aligned(train)) train = align_domains_by_class(train, derive_seed(c.seed + 1, 1));
    const std::size_t n = train.front().images.size();
    for (const auto& d : train) {
        if (d.images.size() != n) throw DataError("training domains differ in size after alignment");
    }
    auto objective = [&](const BoundBundle& m, std::span<const std::size_t> idx) {
        return s_mtae_objective(m, make_paired_batch(train, idx), run.seen, run.weights);
    };
    {
        std::vector<TermValues> init;
        for (const auto& idx : sequential(n, c.batch_size)) {
            ad::Graph g;
            init.push_back(objective(bind_bundle(g, run.bundle, {false, false, false, false}), idx).values);
        }
        run.record.initial = mean_of(init);
    }
    OptimizerSpec ospec = c.optimizer;
    ospec.weight_decay = c.eta;
    Optimizer opt(ospec);
    BatchStream stream(n, c.batch_size, c.seed + 1);
    for (std::size_t e = 0; e < c.epochs; ++e) {
        std::vector<TermValues> terms;
        const auto epoch = stream.next_epoch();
        for (std::size_t b = 0; b < epoch.size(); ++b) {
            ad::Graph g;
            BoundBundle m = bind_bundle(g, run.bundle);
            LossTerms t = objective(m, epoch[b]);
            check_finite(t.values, e, b);
            g.backward(t.total);
            std::vector<Tensor> grads = m.extractor.grads();
            for (const auto& d : m.decoders) grads = concat_grads(std::move(grads), d.grads());
            auto params = mtae_parameters(run.bundle);
            with_context(e, b, [&] { opt.step(params, grads); });
            terms.push_back(t.values);
        }
        run.record.epochs.push_back(mean_of(terms));
    }
    if (run.config.method == Method::Mtae) run.bundle.head = frozen_head(run, pooled(run.split.train));
}

void train_fc(Run& run) {
    const RunConfig& c = run.config;
    const auto& train = run.split.train;
    {
        const LabeledImageSet data = pooled(train);
        std::vector<TermValues> init;
        for (const auto& idx : sequential(data.size(), c.batch_size)) {
            init.push_back(agg_terms(run, gather_batch(data, idx), true));
        }
        run.record.initial = mean_of(init);
    }
    OptimizerSpec ospec = c.optimizer;
    ospec.weight_decay = c.eta;
    Optimizer base_opt(ospec);
    Optimizer critic_opt(c.optimizer);
    FcOptions fc;
    fc.inner_lr = c.inner_lr > 0.0 ? c.inner_lr : c.optimizer.learning_rate;

    // An epoch takes as many meta-iterations as an aggregation epoch over the
    // pooled data takes optimiser steps; per-domain streams refill as needed.
    std::vector<BatchStream> streams;
    std::vector<std::deque<std::vector<std::size_t>>> queues(train.size());
    std::size_t pooled_count = 0;
    for (std::size_t d = 0; d < train.size(); ++d) {
        streams.emplace_back(train[d].images.size(), c.batch_size, derive_seed(c.seed + 1, d));
        pooled_count += train[d].images.size();
    }
    const std::size_t per_epoch = (pooled_count + c.batch_size - 1) / c.batch_size;
    std::mt19937_64 meta_rng(c.seed + 2);

    for (std::size_t e = 0; e < c.epochs; ++e) {
        std::vector<TermValues> terms;
        double critic_sum = 0.0;
        for (std::size_t b = 0; b < per_epoch; ++b) {
            std::vector<Batch> batches;
            for (std::size_t d = 0; d < train.size(); ++d) {
                if (queues[d].empty()) {
                    for (auto& idx : streams[d].next_epoch()) queues[d].push_back(std::move(idx));
                }
                batches.push_back(gather_batch(train[d].images, queues[d].front()));
                queues[d].pop_front();
            }
            const MetaSplit split = sample_meta_split(train.size(), meta_rng);
            FcDiagnostics diag;
            with_context(e, b, [&] {
                diag = s_fc_step(run.bundle, split, batches, run.seen, run.weights, fc, base_opt,
                                 &critic_opt);
            });
            check_finite(diag.base, e, b);
            terms.push_back(diag.base);
            critic_sum += diag.critic_loss;
        }
        run.record.epochs.push_back(mean_of(terms));
        run.record.critic_loss.push_back(per_epoch ? critic_sum / static_cast<double>(per_epoch) : 0.0);
    }
}

}  // namespace

TrainOutput train_model(const RunConfig& config_in, const Experiment& experiment) {
    config_in.validate();
    const auto start = std::chrono::steady_clock::now();
    RunConfig config = config_in;
    config.lambda = config.effective_lambda();
    config.dataset = experiment.dataset;

    const Setting& setting = experiment.setting(config.setting);
    if (config.target_domain >= experiment.domains.size()) {
        throw ConfigError("target domain " + std::to_string(config.target_domain) + " outside " +
                          std::to_string(experiment.domains.size()) + " domains");
    }
    Run run{config, apply_setting(experiment.domains, setting, config.target_domain), {}, {}, {}, {}};
    if (run.split.train.empty()) throw DataError("no training domains left after holding out the target");
    if (family(config.method) == Family::Fc && run.split.train.size() < 2) {
        throw ConfigError("feature-critic methods need at least two training domains");
    }
    run.seen = build_prototypes(experiment.table, run.split.seen);
    run.weights = LossWeights{config.lambda, config.eta};
    const ModelSpec spec = model_spec(config, run.split.train.front().images.image_size(),
                                      experiment.table.dim(), run.split.seen.size(),
                                      run.split.train.size());
    run.bundle = init_model(spec, experiment.table, config.seed);
    run.record.config = config;
    run.record.target_tag = experiment.domains[config.target_domain].tag;

    switch (family(config.method)) {
        case Family::Agg: train_agg(run); break;
        case Family::Mtae: train_mtae(run); break;
        case Family::Fc: train_fc(run); break;
    }

    run.record.accuracy.dg = dg_accuracy(run.bundle, run.split.eval_dg, experiment.table,
                                         run.split.seen, dg_mode(config.method));
    run.record.accuracy.zsdg = zsdg_accuracy(run.bundle, run.split.eval_zsdg, experiment.table,
                                             run.split.unseen, config.generalized_zsl,
                                             run.split.seen);
    if (!config.checkpoint_path.empty()) {
        save_checkpoint(run.bundle, config.checkpoint_path);
        run.record.checkpoint = config.checkpoint_path;
    }
    run.record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(run.record), std::move(run.bundle)};
}

RunRecord train(const RunConfig& config, const Experiment& experiment) {
    return train_model(config, experiment).record;
}

RunRecord train(const RunConfig& config) { return train(config, load_experiment(config)); }

}  // namespace zsdg
