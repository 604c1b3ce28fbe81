#include "srne/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace srne {

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b, Alternative alt)
{
    if (a.size() < 3 || b.size() < 3) {
        throw InsufficientData("Mann-Whitney U needs at least 3 values per sample");
    }
    const std::size_t n1 = a.size();
    const std::size_t n2 = b.size();
    const std::size_t n = n1 + n2;

    std::vector<double> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    for (double v : all) {
        if (std::isnan(v)) {
            throw InsufficientData("Mann-Whitney U: NaN in sample");
        }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return all[i] < all[j]; });

    // Average ranks over tie groups.
    std::vector<double> rank(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && all[order[j + 1]] == all[order[i]]) {
            ++j;
        }
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            rank[order[k]] = avg;
        }
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }

    double r1 = 0.0;
    for (std::size_t i = 0; i < n1; ++i) {
        r1 += rank[i];
    }
    const double fn1 = static_cast<double>(n1);
    const double fn2 = static_cast<double>(n2);
    const double fn = static_cast<double>(n);
    const double u1 = r1 - fn1 * (fn1 + 1.0) / 2.0;
    const double u2 = fn1 * fn2 - u1;

    double u = 0.0;
    switch (alt) {
    case Alternative::Greater: u = u1; break;
    case Alternative::Less: u = u2; break;
    case Alternative::TwoSided: u = std::max(u1, u2); break;
    }
    const double mu = fn1 * fn2 / 2.0;
    const double sigma = std::sqrt(fn1 * fn2 / 12.0 * ((fn + 1.0) - tie_term / (fn * (fn - 1.0))));

    MannWhitneyResult r;
    r.u = u1;
    if (sigma == 0.0) {
        r.p = 1.0;
        return r;
    }
    const double z = (u - mu - 0.5) / sigma;
    double p = 0.5 * std::erfc(z / std::sqrt(2.0));
    if (alt == Alternative::TwoSided) {
        p *= 2.0;
    }
    r.p = std::clamp(p, 0.0, 1.0);
    return r;
}

double bonferroni(double p, std::size_t comparisons) { return std::min(1.0, p * static_cast<double>(comparisons)); }

} // namespace srne
