#pragma once

#include <string>
#include <vector>

namespace ocular {

struct WilcoxonResult {
    int n_effective = 0;         // pairs remaining after dropping zero differences
    double statistic = 0;        // W = min(W+, W-)
    double p_value = 1;          // two-sided
    bool exact = false;          // exact sign-assignment distribution vs normal approximation
    bool significant = false;    // p < alpha
    double alpha = 0.05;

    std::string method() const { return exact ? "exact" : "normal-approximation"; }
};

// Paired two-sided Wilcoxon signed-rank test. Zero differences are dropped
// (Wilcoxon's original rule); absolute differences are ranked with average
// ranks on ties. The p-value is exact (distribution of the rank sum over all
// 2^n sign assignments, computed by convolution) for n_effective <= 25, and
// a tie-corrected, continuity-corrected normal approximation above that.
//
// Errors: length mismatch, empty input, or all differences zero
// ("degenerate: no nonzero pairs").
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b,
                                    double alpha = 0.05);

}  // namespace ocular
