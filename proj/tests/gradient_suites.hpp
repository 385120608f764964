#pragma once

// Gradient checks shared by the unit tests and the acceptance binary: every
// autodiff op, and every full training objective on small random models.

#include "support.hpp"

#include "zsdg/objectives.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace zsdg::testing {

using SuiteResult = std::vector<std::pair<std::string, GradCheck>>;

inline PrototypeSet random_prototypes(std::size_t classes, std::size_t dim, std::mt19937_64& rng) {
    PrototypeSet p;
    for (std::size_t c = 0; c < classes; ++c) p.classes.push_back("c" + std::to_string(c));
    p.matrix = random_tensor({classes, dim}, rng);
    return p;
}

inline Batch random_batch(std::size_t n, std::size_t dim, std::size_t classes, std::mt19937_64& rng) {
    Batch b;
    b.inputs = random_tensor({n, dim}, rng, 0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        b.labels.push_back(i % classes);
        b.indices.push_back(i);
    }
    return b;
}

inline ModelSpec small_spec(std::size_t decoders, bool critic) {
    ModelSpec s;
    s.input_dim = 6;
    s.extractor_hidden = {5, 4};
    s.embedding_dim = 3;
    s.num_classes = decoders ? 0 : 3;
    s.num_decoders = decoders;
    s.decoder_hidden = {4};
    s.critic = critic;
    s.critic_hidden = {3};
    return s;
}

// Zero-initialised biases put hidden units exactly on the ReLU kink whenever
// the previous layer is all zero; move them off it.
inline void jitter_biases(ModelBundle& m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 0.3);
    for (auto& [name, t] : m.named_parameters()) {
        if (!name.ends_with(".bias")) continue;
        for (double& v : const_cast<Tensor*>(t)->values()) v = u(rng);
    }
}

inline std::vector<Tensor*> all_parameters(ModelBundle& m) {
    std::vector<Tensor*> out = m.extractor.parameters();
    if (m.head) for (Tensor* p : m.head->parameters()) out.push_back(p);
    for (auto& d : m.decoders) for (Tensor* p : d.parameters()) out.push_back(p);
    if (m.critic) for (Tensor* p : m.critic->parameters()) out.push_back(p);
    return out;
}

inline std::vector<Tensor> all_grads(const BoundBundle& b) {
    std::vector<Tensor> out = b.extractor.grads();
    auto append = [&](const BoundMlp& m) {
        for (auto& t : m.grads()) out.push_back(std::move(t));
    };
    if (b.head) append(*b.head);
    for (const auto& d : b.decoders) append(d);
    if (b.critic) append(*b.critic);
    return out;
}

// Gradient check of `objective` over every parameter of `model`.
inline GradCheck check_objective(ModelBundle& model,
                                   const std::function<ad::Var(const BoundBundle&)>& objective) {
    std::vector<Tensor> analytic;
    {
        ad::Graph g;
        BoundBundle b = bind_bundle(g, model);
        g.backward(objective(b));
        analytic = all_grads(b);
    }
    auto params = all_parameters(model);
    return finite_difference_check(params, analytic, [&] {
        ad::Graph g;
        return objective(bind_bundle(g, model, {false, false, false, false})).item();
    });
}

inline SuiteResult op_suite(int seed) {
    std::mt19937_64 rng(1000 + seed);
    const std::uint64_t s = static_cast<std::uint64_t>(seed);
    SuiteResult results;
    auto m = [&](std::size_t r, std::size_t c) { return random_tensor({r, c}, rng); };
    results.emplace_back("add", check_graph({m(3, 4), m(3, 4)}, [&](ad::Graph&, auto v) {
        return project(ad::add(v[0], v[1]), s);
    }));
    results.emplace_back("sub", check_graph({m(3, 4), m(3, 4)}, [&](ad::Graph&, auto v) {
        return project(ad::sub(v[0], v[1]), s);
    }));
    results.emplace_back("scale", check_graph({m(3, 4)}, [&](ad::Graph&, auto v) {
        return project(ad::scale(v[0], -1.7), s);
    }));
    results.emplace_back("mul", check_graph({m(3, 4), m(3, 4)}, [&](ad::Graph&, auto v) {
        return project(ad::mul(v[0], v[1]), s);
    }));
    results.emplace_back("matmul", check_graph({m(3, 5), m(5, 2)}, [&](ad::Graph&, auto v) {
        return project(ad::matmul(v[0], v[1]), s);
    }));
    results.emplace_back("add_row", check_graph({m(4, 3), m(1, 3)}, [&](ad::Graph&, auto v) {
        return project(ad::add_row(v[0], v[1]), s);
    }));
    results.emplace_back("relu", check_graph({m(4, 4)}, [&](ad::Graph&, auto v) {
        return project(ad::relu(v[0]), s);
    }));
    results.emplace_back("softplus", check_graph({m(4, 4)}, [&](ad::Graph&, auto v) {
        return project(ad::softplus(ad::scale(v[0], 4.0)), s);
    }));
    results.emplace_back("tanh", check_graph({m(4, 4)}, [&](ad::Graph&, auto v) {
        return project(ad::tanh(v[0]), s);
    }));
    results.emplace_back("clamp01", check_graph({random_tensor({4, 4}, rng, -0.5, 1.5)}, [&](ad::Graph&, auto v) {
        return project(ad::clamp01(v[0]), s);
    }));
    results.emplace_back("reshape", check_graph({m(2, 6)}, [&](ad::Graph&, auto v) {
        return project(ad::reshape(v[0], {3, 4}), s);
    }));
    results.emplace_back("concat_rows", check_graph({m(2, 3), m(3, 3)}, [&](ad::Graph&, auto v) {
        return project(ad::concat_rows(v), s);
    }));
    results.emplace_back("slice_rows", check_graph({m(5, 3)}, [&](ad::Graph&, auto v) {
        return project(ad::slice_rows(v[0], 1, 4), s);
    }));
    results.emplace_back("mean_rows", check_graph({m(5, 3)}, [&](ad::Graph&, auto v) {
        return project(ad::mean_rows(v[0]), s);
    }));
    results.emplace_back("mean", check_graph({m(5, 3)}, [&](ad::Graph&, auto v) {
        return ad::mean(ad::mul(v[0], v[0]));
    }));
    results.emplace_back("sum", check_graph({m(5, 3)}, [&](ad::Graph&, auto v) {
        return ad::sum(ad::mul(v[0], v[0]));
    }));
    results.emplace_back("mse_loss", check_graph({m(4, 3), m(4, 3)}, [&](ad::Graph&, auto v) {
        return ad::mse_loss(v[0], v[1]);
    }));
    std::vector<std::size_t> labels{0, 2, 1, 2};
    results.emplace_back("softmax_cross_entropy", check_graph({m(4, 3)}, [&](ad::Graph&, auto v) {
        return ad::softmax_cross_entropy(ad::scale(v[0], 3.0), labels);
    }));
    return results;
}

inline SuiteResult objective_suite(int seed) {
    std::mt19937_64 rng(500 + seed);
    const PrototypeSet protos = random_prototypes(3, 3, rng);
    const LossWeights w{0.5 + seed * 0.1, 0.0};
    SuiteResult results;

    ModelBundle agg = init_model(small_spec(0, false), seed);
    jitter_biases(agg, rng);
    const Batch batch = random_batch(6, 6, 3, rng);
    results.emplace_back("aggregation", check_objective(agg, [&](const BoundBundle& b) {
        return s_agg_loss(b, batch, protos, w).total;
    }));

    ModelBundle mtae = init_model(small_spec(2, false), seed);
    jitter_biases(mtae, rng);
    // Keep decoder outputs inside the clamp so the objective is smooth.
    for (auto& d : mtae.decoders) {
        for (double& v : d.layers().back().bias.storage()) v = 0.5;
        for (double& v : d.layers().back().weight.storage()) v *= 0.1;
    }
    PairedBatch paired;
    paired.inputs = {random_tensor({5, 6}, rng, 0.0, 1.0), random_tensor({5, 6}, rng, 0.0, 1.0)};
    paired.labels = {0, 1, 2, 0, 1};
    results.emplace_back("multi-task", check_objective(mtae, [&](const BoundBundle& b) {
        return s_mtae_objective(b, paired, protos, w).total;
    }));

    ModelBundle fc = init_model(small_spec(0, true), seed);
    jitter_biases(fc, rng);
    results.emplace_back("feature-critic meta-train", check_objective(fc, [&](const BoundBundle& b) {
        ad::Graph& g = b.extractor.weights.front().graph();
        LossTerms t = s_agg_loss(b, batch, protos, w);
        auto features = extract(b.extractor, g.constant(batch.inputs));
        return ad::add(t.total, criticize(*b.critic, features));
    }));
    return results;
}

}  // namespace zsdg::testing
