#include "ocular/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "ocular/common.hpp"

namespace ocular {

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b,
                                    double alpha) {
    if (a.size() != b.size())
        throw Error("wilcoxon: series lengths differ (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
    if (a.empty()) throw Error("wilcoxon: empty series");

    std::vector<double> diff;
    diff.reserve(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        if (d != 0) diff.push_back(d);
    }
    if (diff.empty()) throw NumericError("wilcoxon: degenerate: no nonzero pairs");

    const int n = static_cast<int>(diff.size());

    // Rank |d| ascending; average ranks on ties. Doubled ranks are integers.
    std::vector<int> order(diff.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int l, int r) { return std::abs(diff[static_cast<size_t>(l)]) <
                                         std::abs(diff[static_cast<size_t>(r)]); });

    std::vector<int64_t> rank2(diff.size());  // 2 * rank
    std::vector<int> tie_sizes;
    for (size_t i = 0; i < order.size();) {
        size_t j = i;
        const double v = std::abs(diff[static_cast<size_t>(order[i])]);
        while (j < order.size() && std::abs(diff[static_cast<size_t>(order[j])]) == v) ++j;
        // positions i..j-1 (0-based) share ranks i+1..j, average (i+1+j)/2
        const int64_t avg2 = static_cast<int64_t>(i) + 1 + static_cast<int64_t>(j);
        for (size_t k = i; k < j; ++k) rank2[static_cast<size_t>(order[k])] = avg2;
        if (j - i > 1) tie_sizes.push_back(static_cast<int>(j - i));
        i = j;
    }

    int64_t w_plus2 = 0, total2 = 0;
    for (size_t i = 0; i < diff.size(); ++i) {
        total2 += rank2[i];
        if (diff[i] > 0) w_plus2 += rank2[i];
    }
    const int64_t w_minus2 = total2 - w_plus2;
    const int64_t w_min2 = std::min(w_plus2, w_minus2);

    WilcoxonResult result;
    result.n_effective = n;
    result.statistic = static_cast<double>(w_min2) / 2.0;
    result.alpha = alpha;

    if (n <= 25) {
        result.exact = true;
        // Distribution of the doubled positive-rank sum over all 2^n sign
        // assignments, by convolution. Counts fit in 64 bits (<= 2^25).
        std::vector<uint64_t> counts(static_cast<size_t>(total2) + 1, 0);
        counts[0] = 1;
        int64_t reach = 0;
        for (size_t i = 0; i < rank2.size(); ++i) {
            const int64_t r = rank2[i];
            reach += r;
            for (int64_t s = reach; s >= r; --s)
                counts[static_cast<size_t>(s)] += counts[static_cast<size_t>(s - r)];
        }
        // Two-sided tail of the min statistic: assignments whose rank sum is
        // as small as the observed min, or symmetrically as large.
        uint64_t tail = 0;
        for (int64_t s = 0; s <= w_min2; ++s) tail += counts[static_cast<size_t>(s)];
        uint64_t upper = 0;
        for (int64_t s = total2 - w_min2; s <= total2; ++s)
            upper += counts[static_cast<size_t>(s)];
        double p;
        if (w_min2 == total2 - w_min2) {
            p = 1.0;  // observed statistic sits at the distribution center
        } else {
            p = static_cast<double>(tail + upper) / std::ldexp(1.0, n);
        }
        result.p_value = std::min(1.0, p);
    } else {
        result.exact = false;
        const double dn = n;
        const double mu = dn * (dn + 1) / 4.0;
        double var = dn * (dn + 1) * (2 * dn + 1) / 24.0;
        for (int t : tie_sizes) var -= (static_cast<double>(t) * t * t - t) / 48.0;
        const double w = static_cast<double>(w_min2) / 2.0;
        const double z = (w - mu + 0.5) / std::sqrt(var);  // continuity correction; W <= mu
        result.p_value = std::min(1.0, 2.0 * normal_cdf(z));
    }

    result.significant = result.p_value < alpha;
    return result;
}

}  // namespace ocular
