#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace zsdg {

/// Mean and sample standard deviation (ddof = 1) across seeds; std is 0 when
/// n == 1.
struct AggregateCell {
    double mean = 0.0;
    double std = 0.0;
    std::size_t n = 0;
};

AggregateCell aggregate(std::span<const double> values);

enum class Alternative { TwoSided, Greater, Less };
std::string to_string(Alternative alt);
Alternative parse_alternative(const std::string& name);

struct WilcoxonResult {
    /// min(W+, W-) for two-sided tests, W+ otherwise.
    double statistic = 0.0;
    double w_plus = 0.0;
    double w_minus = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;  // pairs left after dropping zero differences
    bool exact = true;
};

/// Signed-rank test on paired samples, differences a - b. Zero differences
/// are dropped; tied magnitudes share average ranks. Exact p by enumeration
/// of the 2^n sign patterns for n <= 20, tie-corrected normal approximation
/// above.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    Alternative alt = Alternative::TwoSided);

/// Largest n for which the exact distribution is used.
constexpr std::size_t kWilcoxonExactLimit = 20;

}  // namespace zsdg
