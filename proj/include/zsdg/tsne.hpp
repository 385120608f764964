#pragma once

#include "zsdg/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace zsdg {

struct TsneOptions {
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    std::uint64_t seed = 0;
    double learning_rate = 200.0;
    double exaggeration = 12.0;
    std::size_t exaggeration_iterations = 250;  // also where momentum switches 0.5 -> 0.8
};

/// Row-conditional affinities P(j|i) with bandwidths found by bisection.
struct ConditionalAffinities {
    Tensor p;                              // n x n, zero diagonal, rows sum to 1
    std::vector<double> entropy_bits;      // achieved H(P_i)
    std::vector<std::size_t> iterations;   // bisection steps per row
};

ConditionalAffinities conditional_affinities(const Tensor& features, double perplexity);

/// (Pc + Pc^T) / 2n.
Tensor symmetric_affinities(const ConditionalAffinities& conditional);

/// KL(P || Q) for a low-dimensional layout (n x 2) under Student-t affinities.
double tsne_kl(const Tensor& p, const Tensor& points);

struct TsneResult {
    Tensor points;  // n x 2
    double kl_initial = 0.0;
    double kl_final = 0.0;
    std::size_t max_bisection_iterations = 0;
};

/// Exact O(n^2) t-SNE. Requires 3 <= perplexity < n / 3 and n <= 5000.
TsneResult tsne_project(const Tensor& features, const TsneOptions& options = {});

constexpr std::size_t kTsneMaxPoints = 5000;
constexpr std::size_t kTsneMaxBisection = 64;
constexpr double kTsneEntropyTolerance = 1e-4;

}  // namespace zsdg
