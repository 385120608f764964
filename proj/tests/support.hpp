#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance binary. None of these call into the library code they check.

#include "zsdg/autodiff.hpp"
#include "zsdg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace zsdg::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.storage()) v = u(rng);
    return t;
}

// --- finite differences ---------------------------------------------------

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / scale;
}

// Compares `analytic[i]` against central differences of `value` with respect
// to every element of `*params[i]`. `value` must read the parameters afresh on
// each call.
inline GradCheck finite_difference_check(std::span<Tensor* const> params,
                                         std::span<const Tensor> analytic,
                                         const std::function<double()>& value, double h = 1e-5) {
    GradCheck out;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto v = params[p]->values();
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double saved = v[k];
            v[k] = saved + h;
            const double up = value();
            v[k] = saved - h;
            const double down = value();
            v[k] = saved;
            const double numeric = (up - down) / (2.0 * h);
            out.max_rel = std::max(out.max_rel, relative_error(analytic[p][k], numeric));
            ++out.checked;
        }
    }
    return out;
}

// Gradient check of a graph built from leaf tensors. `build` receives one
// trainable leaf per input and must return a scalar.
using GraphBuilder = std::function<ad::Var(ad::Graph&, std::span<const ad::Var>)>;

inline GradCheck check_graph(std::vector<Tensor> inputs, const GraphBuilder& build) {
    std::vector<Tensor> analytic;
    {
        ad::Graph g;
        std::vector<ad::Var> leaves;
        for (const auto& t : inputs) leaves.push_back(g.parameter(t));
        g.backward(build(g, leaves));
        for (const auto& v : leaves) analytic.push_back(v.grad());
    }
    std::vector<Tensor*> params;
    for (auto& t : inputs) params.push_back(&t);
    auto value = [&] {
        ad::Graph g;
        std::vector<ad::Var> leaves;
        for (const auto& t : inputs) leaves.push_back(g.constant(t));
        return build(g, leaves).item();
    };
    return finite_difference_check(params, analytic, value);
}

// Reduces a tensor-valued op to a scalar through a fixed random projection,
// so every output element contributes to the checked gradient.
inline ad::Var project(ad::Var v, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor w = random_tensor(v.shape(), rng);
    return ad::sum(ad::mul(v, v.graph().constant(std::move(w))));
}

// --- nearest prototype ----------------------------------------------------

inline std::size_t brute_force_nearest(std::span<const double> query, const Tensor& prototypes) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < prototypes.rows(); ++r) {
        double d = 0.0;
        for (std::size_t c = 0; c < query.size(); ++c) {
            const double diff = query[c] - prototypes.at(r, c);
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = r;
        }
    }
    return best;
}

// --- signed-rank test by enumerating sign patterns ------------------------

enum class Side { TwoSided, Greater, Less };

inline double enumerated_signed_rank_p(std::span<const double> a, std::span<const double> b,
                                       Side side) {
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) d.push_back(a[i] - b[i]);
    }
    const std::size_t n = d.size();
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        double less = 0.0, equal = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(d[j]) < std::abs(d[i])) less += 1.0;
            else if (std::abs(d[j]) == std::abs(d[i])) equal += 1.0;
        }
        rank[i] = less + (equal + 1.0) / 2.0;
    }
    double total = 0.0, observed = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += rank[i];
        if (d[i] > 0) observed += rank[i];
    }
    const double low = std::min(observed, total - observed);
    const double tol = 1e-9;
    std::uint64_t hits = 0;
    const std::uint64_t patterns = std::uint64_t{1} << n;
    for (std::uint64_t mask = 0; mask < patterns; ++mask) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask >> i & 1) s += rank[i];
        }
        bool in = false;
        switch (side) {
            case Side::TwoSided: in = std::min(s, total - s) <= low + tol; break;
            case Side::Greater: in = s >= observed - tol; break;
            case Side::Less: in = s <= observed + tol; break;
        }
        if (in) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(patterns);
}

// --- rotation by a direct inverse map -------------------------------------

// Single-channel h x w image rotated counter-clockwise by `degrees` about the
// centre, bilinear, zero outside the source.
inline std::vector<double> rotate_reference(const std::vector<double>& img, std::size_t h,
                                            std::size_t w, double degrees) {
    const double pi = std::acos(-1.0);
    const double t = degrees * pi / 180.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    auto pixel = [&](long y, long x) {
        if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0.0;
        return img[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    };
    std::vector<double> out(h * w, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            // Output pixel (x, y) with y pointing down; rotating the picture
            // counter-clockwise means sampling the source clockwise.
            const double dx = static_cast<double>(x) - cx;
            const double dy = cy - static_cast<double>(y);
            const double sx = std::cos(t) * dx + std::sin(t) * dy;
            const double sy = -std::sin(t) * dx + std::cos(t) * dy;
            const double col = sx + cx;
            const double row = cy - sy;
            const long x0 = static_cast<long>(std::floor(col));
            const long y0 = static_cast<long>(std::floor(row));
            const double fx = col - static_cast<double>(x0);
            const double fy = row - static_cast<double>(y0);
            out[y * w + x] = (1 - fy) * ((1 - fx) * pixel(y0, x0) + fx * pixel(y0, x0 + 1)) +
                             fy * ((1 - fx) * pixel(y0 + 1, x0) + fx * pixel(y0 + 1, x0 + 1));
        }
    }
    return out;
}

// --- two-means on 2-D points ----------------------------------------------

// Lloyd iterations seeded with the two mutually farthest points; returns the
// best agreement with `truth` over both label assignments.
inline double two_means_agreement(const Tensor& points, std::span<const std::size_t> truth) {
    const std::size_t n = points.rows();
    std::size_t a = 0, b = 0;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = points.at(i, 0) - points.at(j, 0);
            const double dy = points.at(i, 1) - points.at(j, 1);
            if (dx * dx + dy * dy > far) {
                far = dx * dx + dy * dy;
                a = i;
                b = j;
            }
        }
    }
    double c[2][2] = {{points.at(a, 0), points.at(a, 1)}, {points.at(b, 0), points.at(b, 1)}};
    std::vector<std::size_t> assign(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        double sum[2][2] = {{0, 0}, {0, 0}};
        double count[2] = {0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            double d[2];
            for (int k = 0; k < 2; ++k) {
                const double dx = points.at(i, 0) - c[k][0];
                const double dy = points.at(i, 1) - c[k][1];
                d[k] = dx * dx + dy * dy;
            }
            assign[i] = d[1] < d[0] ? 1 : 0;
            sum[assign[i]][0] += points.at(i, 0);
            sum[assign[i]][1] += points.at(i, 1);
            count[assign[i]] += 1;
        }
        for (int k = 0; k < 2; ++k) {
            if (count[k] > 0) {
                c[k][0] = sum[k][0] / count[k];
                c[k][1] = sum[k][1] / count[k];
            }
        }
    }
    std::size_t same = 0;
    for (std::size_t i = 0; i < n; ++i) same += assign[i] == truth[i];
    return static_cast<double>(std::max(same, n - same)) / static_cast<double>(n);
}

}  // namespace zsdg::testing
