#include "zsdg/tsne.hpp"

#include "zsdg/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace zsdg {

namespace {

Tensor squared_distances(const Tensor& x) {
    const std::size_t n = x.rows(), d = x.cols();
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = x.at(i, k) - x.at(j, k);
                s += diff * diff;
            }
            out.at(i, j) = s;
            out.at(j, i) = s;
        }
    }
    return out;
}

void check_feasible(const Tensor& features, double perplexity) {
    if (features.rank() != 2 || features.rows() == 0) throw ShapeError("t-SNE needs an n x h matrix");
    const std::size_t n = features.rows();
    if (n > kTsneMaxPoints) {
        throw ConfigError("exact t-SNE supports at most " + std::to_string(kTsneMaxPoints) +
                          " points, got " + std::to_string(n));
    }
    if (!(perplexity >= 3.0) || !(perplexity < static_cast<double>(n) / 3.0)) {
        throw ConfigError("perplexity " + std::to_string(perplexity) + " infeasible for " +
                          std::to_string(n) + " points (need 3 <= perplexity < n/3)");
    }
    if (!features.all_finite()) throw NonFiniteError("t-SNE input contains non-finite values");
}

}  // namespace

ConditionalAffinities conditional_affinities(const Tensor& features, double perplexity) {
    check_feasible(features, perplexity);
    const std::size_t n = features.rows();
    const Tensor dist = squared_distances(features);
    const double target = std::log2(perplexity);

    ConditionalAffinities out;
    out.p = Tensor({n, n});
    out.entropy_bits.assign(n, 0.0);
    out.iterations.assign(n, 0);
    std::vector<double> d(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
        // Shift to a zero minimum and scale to unit mean so one fixed bracket
        // on log(beta) fits every row.
        double lo_d = INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) lo_d = std::min(lo_d, dist.at(i, j));
        }
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            d[j] = j == i ? 0.0 : dist.at(i, j) - lo_d;
            mean += d[j];
        }
        mean /= static_cast<double>(n - 1);
        if (mean > 0.0) {
            for (double& v : d) v /= mean;
        }

        auto entropy = [&](double beta) {
            double z = 0.0, dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                w[j] = j == i ? 0.0 : std::exp(-beta * d[j]);
                z += w[j];
                dot += w[j] * d[j];
            }
            return (beta * dot / z + std::log(z)) / std::numbers::ln2;
        };

        double lo = -40.0, hi = 40.0, log_beta = 0.0;
        double h = entropy(1.0);
        std::size_t it = 0;
        while (std::abs(h - target) >= kTsneEntropyTolerance && it < kTsneMaxBisection) {
            // Entropy falls as beta grows.
            if (h > target) {
                lo = log_beta;
            } else {
                hi = log_beta;
            }
            log_beta = 0.5 * (lo + hi);
            h = entropy(std::exp(log_beta));
            ++it;
        }
        out.entropy_bits[i] = h;
        out.iterations[i] = it;
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += w[j];
        for (std::size_t j = 0; j < n; ++j) out.p.at(i, j) = w[j] / z;
    }
    return out;
}

Tensor symmetric_affinities(const ConditionalAffinities& conditional) {
    const Tensor& pc = conditional.p;
    const std::size_t n = pc.rows();
    Tensor p({n, n});
    const double denom = 2.0 * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) p.at(i, j) = (pc.at(i, j) + pc.at(j, i)) / denom;
    }
    return p;
}

namespace {

// Student-t numerators and their sum.
double student_t(const Tensor& y, Tensor& num) {
    const std::size_t n = y.rows();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num.at(i, i) = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = y.at(i, 0) - y.at(j, 0);
            const double dy = y.at(i, 1) - y.at(j, 1);
            const double v = 1.0 / (1.0 + dx * dx + dy * dy);
            num.at(i, j) = v;
            num.at(j, i) = v;
            total += 2.0 * v;
        }
    }
    return total;
}

}  // namespace

double tsne_kl(const Tensor& p, const Tensor& points) {
    const std::size_t n = points.rows();
    if (p.shape() != Shape{n, n} || points.cols() != 2) throw ShapeError("t-SNE KL shape mismatch");
    Tensor num({n, n});
    const double total = student_t(points, num);
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double pij = p.at(i, j);
            if (i == j || pij <= 0.0) continue;
            kl += pij * std::log(pij / (num.at(i, j) / total));
        }
    }
    return kl;
}

TsneResult tsne_project(const Tensor& features, const TsneOptions& options) {
    if (!(options.learning_rate > 0.0) || !(options.exaggeration >= 1.0)) {
        throw ConfigError("t-SNE learning rate must be positive and exaggeration >= 1");
    }
    const ConditionalAffinities cond = conditional_affinities(features, options.perplexity);
    const Tensor p = symmetric_affinities(cond);
    const std::size_t n = features.rows();

    TsneResult out;
    out.max_bisection_iterations = *std::max_element(cond.iterations.begin(), cond.iterations.end());
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> init(0.0, 1e-4);
    Tensor y({n, 2});
    for (double& v : y.values()) v = init(rng);
    out.kl_initial = tsne_kl(p, y);

    Tensor num({n, n});
    Tensor grad({n, 2}), update({n, 2}), gains({n, 2}, 1.0);
    for (std::size_t iter = 0; iter < options.iterations; ++iter) {
        const bool early = iter < options.exaggeration_iterations;
        const double exag = early ? options.exaggeration : 1.0;
        const double momentum = early ? 0.5 : 0.8;
        const double total = student_t(y, num);
        grad.fill(0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double gx = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double m = (exag * p.at(i, j) - num.at(i, j) / total) * num.at(i, j);
                gx += m * (y.at(i, 0) - y.at(j, 0));
                gy += m * (y.at(i, 1) - y.at(j, 1));
            }
            grad.at(i, 0) = 4.0 * gx;
            grad.at(i, 1) = 4.0 * gy;
        }
        for (std::size_t k = 0; k < y.size(); ++k) {
            const bool same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
            gains[k] = same_sign ? gains[k] * 0.8 : gains[k] + 0.2;
            gains[k] = std::max(gains[k], 0.01);
            update[k] = momentum * update[k] - options.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += y.at(i, c);
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) y.at(i, c) -= mean;
        }
    }
    if (!y.all_finite()) throw NonFiniteError("t-SNE diverged");
    out.kl_final = tsne_kl(p, y);
    out.points = std::move(y);
    return out;
}

}  // namespace zsdg
