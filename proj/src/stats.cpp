#include "zsdg/stats.hpp"

#include "zsdg/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace zsdg {

AggregateCell aggregate(std::span<const double> values) {
    if (values.empty()) throw StatsError("cannot aggregate an empty group");
    // Sorting first makes the result independent of seed order.
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    AggregateCell cell;
    cell.n = v.size();
    cell.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(cell.n);
    if (cell.n > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - cell.mean) * (x - cell.mean);
        cell.std = std::sqrt(ss / static_cast<double>(cell.n - 1));
    }
    return cell;
}

std::string to_string(Alternative alt) {
    switch (alt) {
        case Alternative::TwoSided: return "two-sided";
        case Alternative::Greater: return "greater";
        case Alternative::Less: return "less";
    }
    return "two-sided";
}

Alternative parse_alternative(const std::string& name) {
    if (name == "two-sided") return Alternative::TwoSided;
    if (name == "greater") return Alternative::Greater;
    if (name == "less") return Alternative::Less;
    throw ConfigError("unknown alternative '" + name + "' (two-sided, greater, less)");
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    Alternative alt) {
    if (a.size() != b.size()) {
        throw StatsError("paired samples differ in length (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    }
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        if (!std::isfinite(diff)) throw StatsError("non-finite paired difference");
        if (diff != 0.0) d.push_back(diff);
    }
    if (d.empty()) throw StatsError("all differences zero");
    const std::size_t n = d.size();
    if (n < 5) {
        throw StatsError("only " + std::to_string(n) +
                         " non-zero differences; the signed-rank test needs at least 5");
    }

    // Doubled average ranks are integers: positions i..j share rank (i+j+2)/2.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
    std::vector<std::size_t> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = i + j + 2;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    std::size_t plus2 = 0, total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total2 += rank2[i];
        if (d[i] > 0) plus2 += rank2[i];
    }

    WilcoxonResult r;
    r.n = n;
    r.w_plus = static_cast<double>(plus2) / 2.0;
    r.w_minus = static_cast<double>(total2 - plus2) / 2.0;
    r.statistic = alt == Alternative::TwoSided ? std::min(r.w_plus, r.w_minus) : r.w_plus;

    if (n <= kWilcoxonExactLimit) {
        // counts[s] = number of sign patterns whose doubled positive-rank sum is s
        std::vector<double> counts(total2 + 1, 0.0);
        counts[0] = 1.0;
        std::size_t reach = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t s = reach + 1; s-- > 0;) {
                if (counts[s] != 0.0) counts[s + rank2[i]] += counts[s];
            }
            reach += rank2[i];
        }
        const std::size_t low = std::min(plus2, total2 - plus2);
        double hits = 0.0;
        for (std::size_t s = 0; s <= total2; ++s) {
            bool in = false;
            switch (alt) {
                case Alternative::TwoSided: in = s <= low || s >= total2 - low; break;
                case Alternative::Greater: in = s >= plus2; break;
                case Alternative::Less: in = s <= plus2; break;
            }
            if (in) hits += counts[s];
        }
        r.p_value = std::min(1.0, hits / std::ldexp(1.0, static_cast<int>(n)));
        r.exact = true;
    } else {
        const double nn = static_cast<double>(n);
        const double mean = nn * (nn + 1.0) / 4.0;
        const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
        if (!(var > 0.0)) throw StatsError("degenerate signed-rank variance");
        const double z = (r.w_plus - mean) / std::sqrt(var);
        const double upper = 0.5 * std::erfc(z / std::sqrt(2.0));   // P(Z >= z)
        const double lower = 0.5 * std::erfc(-z / std::sqrt(2.0));  // P(Z <= z)
        switch (alt) {
            case Alternative::TwoSided: r.p_value = std::min(1.0, 2.0 * std::min(upper, lower)); break;
            case Alternative::Greater: r.p_value = upper; break;
            case Alternative::Less: r.p_value = lower; break;
        }
        r.exact = false;
    }
    return r;
}

}  // namespace zsdg
