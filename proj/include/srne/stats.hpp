#pragma once

#include <span>
#include <stdexcept>

namespace srne {

class InsufficientData : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Alternative { TwoSided, Less, Greater };

struct MannWhitneyResult {
    double u = 0.0; // U statistic of the first sample
    double p = 1.0;
};

/// Mann-Whitney U test, normal approximation with tie correction and a 0.5
/// continuity correction. `Less` tests whether a tends to be smaller than b.
/// Throws InsufficientData when either sample has fewer than 3 values.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                                 Alternative alt = Alternative::TwoSided);

/// min(1, p * comparisons).
double bonferroni(double p, std::size_t comparisons);

} // namespace srne
