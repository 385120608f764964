#include "zsdg/models.hpp"

#include "zsdg/error.hpp"

#include <cmath>
#include <map>

namespace zsdg {

namespace {

void check_widths(const std::vector<std::size_t>& widths, const char* what) {
    if (widths.size() < 2) throw ConfigError(std::string(what) + " needs at least two widths");
    for (std::size_t w : widths) {
        if (w == 0) throw ConfigError(std::string(what) + " widths must be positive");
    }
}

std::vector<std::size_t> concat(std::size_t first, const std::vector<std::size_t>& mid,
                                std::size_t last) {
    std::vector<std::size_t> out{first};
    out.insert(out.end(), mid.begin(), mid.end());
    out.push_back(last);
    return out;
}

void check_input(const BoundMlp& mlp, const ad::Var& x, const char* what) {
    if (x.shape().size() != 2 || x.shape()[1] != mlp.input_dim()) {
        throw ShapeError(std::string(what) + ": input " + shape_string(x.shape()) +
                         " does not match width " + std::to_string(mlp.input_dim()));
    }
}

}  // namespace

Mlp::Mlp(std::vector<std::size_t> widths, OutputActivation output, std::mt19937_64& rng)
    : output_(output) {
    check_widths(widths, "mlp");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        DenseLayer layer{Tensor({fan_in, fan_out}), Tensor({1, fan_out}, 0.0)};
        for (double& w : layer.weight.values()) w = dist(rng);
        layers_.push_back(std::move(layer));
    }
}

Mlp::Mlp(std::vector<DenseLayer> layers, OutputActivation output)
    : layers_(std::move(layers)), output_(output) {
    if (layers_.empty()) throw ShapeError("mlp has no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& w = layers_[l].weight.shape();
        const auto& b = layers_[l].bias.shape();
        if (w.size() != 2 || b != Shape{1, w[1]}) {
            throw ShapeError("mlp layer " + std::to_string(l) + ": weight " + shape_string(w) +
                             " and bias " + shape_string(b) + " are inconsistent");
        }
        if (l > 0 && layers_[l - 1].weight.shape()[1] != w[0]) {
            throw ShapeError("mlp layer " + std::to_string(l) + " does not chain with layer " +
                             std::to_string(l - 1));
        }
    }
}

Mlp Mlp::zeros(std::vector<std::size_t> widths, OutputActivation output) {
    check_widths(widths, "mlp");
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        layers.push_back({Tensor({widths[l], widths[l + 1]}), Tensor({1, widths[l + 1]})});
    }
    return Mlp(std::move(layers), output);
}

std::vector<std::size_t> Mlp::widths() const {
    std::vector<std::size_t> w{input_dim()};
    for (const auto& layer : layers_) w.push_back(layer.weight.shape()[1]);
    return w;
}

std::vector<Tensor*> Mlp::parameters() {
    std::vector<Tensor*> out;
    for (auto& layer : layers_) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
    }
    return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& layer : layers_) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
    }
    return out;
}

Tensor Mlp::forward(const Tensor& inputs) const {
    ad::Graph g;
    const BoundMlp bound = bind(g, *this, false);
    return bound.forward(g.constant(inputs)).value();
}

ad::Var BoundMlp::forward(ad::Var inputs) const {
    check_input(*this, inputs, "mlp");
    ad::Var h = inputs;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        h = ad::add_row(ad::matmul(h, weights[l]), biases[l]);
        if (l + 1 < weights.size()) h = ad::relu(h);
    }
    switch (output) {
        case OutputActivation::Linear: return h;
        case OutputActivation::Clamp01: return ad::clamp01(h);
        case OutputActivation::Softplus: return ad::softplus(h);
    }
    return h;
}

std::vector<ad::Var> BoundMlp::vars() const {
    std::vector<ad::Var> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        out.push_back(weights[l]);
        out.push_back(biases[l]);
    }
    return out;
}

std::vector<Tensor> BoundMlp::grads() const {
    std::vector<Tensor> out;
    for (const auto& v : vars()) out.push_back(v.grad());
    return out;
}

BoundMlp bind(ad::Graph& graph, const Mlp& mlp, bool trainable) {
    BoundMlp bound;
    bound.output = mlp.output();
    for (const auto& layer : mlp.layers()) {
        bound.weights.push_back(trainable ? graph.parameter(layer.weight)
                                          : graph.constant(layer.weight));
        bound.biases.push_back(trainable ? graph.parameter(layer.bias)
                                         : graph.constant(layer.bias));
    }
    return bound;
}

void ModelSpec::validate() const {
    if (input_dim == 0) throw ConfigError("model input width must be positive");
    if (embedding_dim == 0) throw ConfigError("embedding width must be positive");
    for (std::size_t w : extractor_hidden) {
        if (w == 0) throw ConfigError("extractor hidden widths must be positive");
    }
    for (std::size_t w : decoder_hidden) {
        if (w == 0) throw ConfigError("decoder hidden widths must be positive");
    }
    for (std::size_t w : critic_hidden) {
        if (w == 0) throw ConfigError("critic hidden widths must be positive");
    }
}

ModelBundle init_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    ModelBundle bundle;
    bundle.extractor = Mlp(concat(spec.input_dim, spec.extractor_hidden, spec.embedding_dim),
                           OutputActivation::Linear, rng);
    if (spec.num_classes > 0) {
        bundle.head = Mlp({spec.embedding_dim, spec.num_classes}, OutputActivation::Linear, rng);
    }
    for (std::size_t d = 0; d < spec.num_decoders; ++d) {
        bundle.decoders.emplace_back(concat(spec.embedding_dim, spec.decoder_hidden, spec.input_dim),
                                     OutputActivation::Clamp01, rng);
    }
    if (spec.critic) {
        bundle.critic = Mlp(concat(spec.embedding_dim, spec.critic_hidden, 1),
                            OutputActivation::Softplus, rng);
    }
    return bundle;
}

ModelBundle init_model(const ModelSpec& spec, const EmbeddingTable& table, std::uint64_t seed) {
    if (spec.embedding_dim != table.dim()) {
        throw ConfigError("extractor output width " + std::to_string(spec.embedding_dim) +
                          " does not match embedding dimension " + std::to_string(table.dim()));
    }
    return init_model(spec, seed);
}

std::vector<std::pair<std::string, const Tensor*>> ModelBundle::named_parameters() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    auto add = [&out](const std::string& prefix, const Mlp& mlp) {
        for (std::size_t l = 0; l < mlp.layers().size(); ++l) {
            const std::string p = prefix + "." + std::to_string(l);
            out.emplace_back(p + ".weight", &mlp.layers()[l].weight);
            out.emplace_back(p + ".bias", &mlp.layers()[l].bias);
        }
    };
    add("extractor", extractor);
    if (head) add("head", *head);
    for (std::size_t d = 0; d < decoders.size(); ++d) add("decoder." + std::to_string(d), decoders[d]);
    if (critic) add("critic", *critic);
    return out;
}

ModelBundle bundle_from_named(std::span<const std::pair<std::string, Tensor>> tensors) {
    // group -> layer -> (weight, bias)
    std::map<std::string, std::map<std::size_t, DenseLayer>> groups;
    std::map<std::string, std::map<std::size_t, int>> seen;
    for (const auto& [name, tensor] : tensors) {
        const auto last = name.rfind('.');
        const auto mid = last == std::string::npos ? std::string::npos : name.rfind('.', last - 1);
        if (mid == std::string::npos) throw FormatError("unrecognised parameter name '" + name + "'");
        const std::string group = name.substr(0, mid);
        const std::string kind = name.substr(last + 1);
        std::size_t layer = 0;
        try {
            layer = std::stoul(name.substr(mid + 1, last - mid - 1));
        } catch (const std::exception&) {
            throw FormatError("unrecognised parameter name '" + name + "'");
        }
        auto& slot = groups[group][layer];
        int& mask = seen[group][layer];
        if (kind == "weight" && !(mask & 1)) {
            slot.weight = tensor;
            mask |= 1;
        } else if (kind == "bias" && !(mask & 2)) {
            slot.bias = tensor;
            mask |= 2;
        } else {
            throw FormatError("unexpected or duplicate parameter '" + name + "'");
        }
    }
    auto build = [&](const std::string& group, OutputActivation act) {
        std::vector<DenseLayer> layers;
        std::size_t expect = 0;
        for (auto& [index, layer] : groups.at(group)) {
            if (index != expect++ || seen[group][index] != 3) {
                throw FormatError("parameter group '" + group + "' is incomplete");
            }
            layers.push_back(std::move(layer));
        }
        groups.erase(group);
        return Mlp(std::move(layers), act);
    };

    if (!groups.count("extractor")) throw FormatError("checkpoint has no extractor");
    ModelBundle bundle;
    bundle.extractor = build("extractor", OutputActivation::Linear);
    if (groups.count("head")) bundle.head = build("head", OutputActivation::Linear);
    if (groups.count("critic")) bundle.critic = build("critic", OutputActivation::Softplus);
    for (std::size_t d = 0; groups.count("decoder." + std::to_string(d)); ++d) {
        bundle.decoders.push_back(build("decoder." + std::to_string(d), OutputActivation::Clamp01));
    }
    if (!groups.empty()) {
        throw FormatError("unrecognised parameter group '" + groups.begin()->first + "'");
    }
    return bundle;
}

ad::Var extract(const BoundMlp& extractor, ad::Var inputs) {
    check_input(extractor, inputs, "extract");
    return extractor.forward(inputs);
}

ad::Var classify(const BoundMlp& head, ad::Var features) {
    check_input(head, features, "classify");
    return head.forward(features);
}

ad::Var decode(std::span<const BoundMlp> decoders, std::size_t domain, ad::Var features) {
    if (domain >= decoders.size()) {
        throw DataError("decoder index " + std::to_string(domain) + " outside bank of " +
                        std::to_string(decoders.size()));
    }
    check_input(decoders[domain], features, "decode");
    return decoders[domain].forward(features);
}

ad::Var criticize(const BoundMlp& critic, ad::Var features) {
    check_input(critic, features, "criticize");
    return critic.forward(ad::mean_rows(features));
}

}  // namespace zsdg
