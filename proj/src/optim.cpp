#include "zsdg/optim.hpp"

#include "zsdg/error.hpp"

#include <cmath>

namespace zsdg {

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
    if (name == "adam") return OptimizerKind::Adam;
    if (name == "sgd" || name == "sgd-momentum") return OptimizerKind::SgdMomentum;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

void OptimizerSpec::validate() const {
    auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v < 1.0; };
    if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
        throw ConfigError("learning rate must be finite and >= 0");
    }
    if (!in_unit(momentum) || !in_unit(beta1) || !in_unit(beta2)) {
        throw ConfigError("momentum/beta parameters must lie in [0, 1)");
    }
    if (!std::isfinite(weight_decay) || weight_decay < 0.0) {
        throw ConfigError("weight decay must be finite and >= 0");
    }
    if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
}

Optimizer::Optimizer(OptimizerSpec spec) : spec_(spec) { spec_.validate(); }

void Optimizer::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (params.size() != grads.size()) {
        throw ShapeError("optimizer: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " gradients");
    }
    if (first_.empty()) {
        for (const Tensor* p : params) {
            first_.emplace_back(p->shape(), 0.0);
            second_.emplace_back(p->shape(), 0.0);
        }
    } else if (first_.size() != params.size()) {
        throw ShapeError("optimizer: parameter list changed between steps");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k]->shape() != grads[k].shape() || first_[k].shape() != grads[k].shape()) {
            throw ShapeError("optimizer: parameter " + std::to_string(k) + " shape " +
                             shape_string(params[k]->shape()) + " vs gradient " +
                             shape_string(grads[k].shape()));
        }
        if (!grads[k].all_finite()) {
            throw NonFiniteError("optimizer: non-finite gradient in parameter " +
                                 std::to_string(k));
        }
    }

    ++steps_;
    const double lr = spec_.learning_rate;
    const double decay = spec_.weight_decay;
    if (spec_.kind == OptimizerKind::SgdMomentum) {
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto p = params[k]->values();
            auto g = grads[k].values();
            auto v = first_[k].values();
            for (std::size_t i = 0; i < p.size(); ++i) {
                v[i] = spec_.momentum * v[i] + g[i];
                if (lr != 0.0) p[i] -= lr * v[i] + lr * decay * p[i];
            }
        }
        return;
    }

    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(spec_.beta1, t);
    const double correction2 = 1.0 - std::pow(spec_.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k]->values();
        auto g = grads[k].values();
        auto m = first_[k].values();
        auto s = second_[k].values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = spec_.beta1 * m[i] + (1.0 - spec_.beta1) * g[i];
            s[i] = spec_.beta2 * s[i] + (1.0 - spec_.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double s_hat = s[i] / correction2;
            if (lr != 0.0) {
                p[i] -= lr * (m_hat / (std::sqrt(s_hat) + spec_.epsilon)) + lr * decay * p[i];
            }
        }
    }
}

}  // namespace zsdg
