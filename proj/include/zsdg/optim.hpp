#pragma once

#include "zsdg/tensor.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace zsdg {

enum class OptimizerKind { SgdMomentum, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerSpec {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double momentum = 0.0;  // sgd only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Decoupled L2 weight decay; each step subtracts lr * weight_decay * param.
    double weight_decay = 0.0;

    void validate() const;
};

/// Stateful first-order optimizer. Slot state is keyed by parameter position,
/// so callers must pass the same parameter list in the same order every step.
class Optimizer {
public:
    explicit Optimizer(OptimizerSpec spec);

    const OptimizerSpec& spec() const { return spec_; }
    std::size_t steps() const { return steps_; }

    /// Throws NonFiniteError (parameters untouched) if any gradient is NaN/Inf.
    void step(std::span<Tensor* const> params, std::span<const Tensor> grads);

private:
    OptimizerSpec spec_;
    std::size_t steps_ = 0;
    std::vector<Tensor> first_;
    std::vector<Tensor> second_;
};

}  // namespace zsdg
