#include "mmfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mmfuse/errors.hpp"

namespace mmfuse {

double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
    if (scores.size() != positive.size()) {
        throw ContractError("binary_auc: scores and labels differ in length");
    }
    std::size_t n_pos = 0;
    for (bool p : positive) n_pos += p ? 1 : 0;
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Midranks: tied scores share the average of their 1-based rank positions.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k) {
            if (positive[order[k]]) rank_sum_pos += midrank;
        }
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

AucReport auc_macro_ovr(const Matrix& probs, const std::vector<int>& labels) {
    if (probs.rows() != labels.size()) {
        throw ContractError("auc_macro_ovr: probs rows and labels differ in length");
    }
    const std::size_t classes = probs.cols();
    AucReport report;
    report.per_class.assign(classes, std::numeric_limits<double>::quiet_NaN());

    double total = 0.0;
    std::size_t defined = 0;
    std::vector<double> scores(probs.rows());
    std::vector<bool> positive(probs.rows());
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            scores[i] = probs(i, c);
            positive[i] = labels[i] == static_cast<int>(c);
        }
        const double auc = binary_auc(scores, positive);
        report.per_class[c] = auc;
        if (!std::isnan(auc)) {
            total += auc;
            ++defined;
        }
    }
    if (defined == 0) {
        throw ContractError("AUC undefined: labels contain a single class");
    }
    report.macro = total / static_cast<double>(defined);
    return report;
}

} // namespace mmfuse
