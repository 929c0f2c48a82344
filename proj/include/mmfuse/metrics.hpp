#pragma once

#include <vector>

#include "mmfuse/matrix.hpp"

namespace mmfuse {

struct AucReport {
    double macro = 0.0;
    // One entry per class; NaN where the class is absent from the labels (or
    // fills them entirely). Undefined classes are excluded from the macro mean.
    std::vector<double> per_class;
};

// Mann-Whitney rank AUC with midrank tie handling. Returns NaN when either
// group is empty.
double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive);

// One-vs-rest ROC AUC per class over probs (N x C), macro-averaged with equal
// class weight. Throws when no class has a defined AUC.
AucReport auc_macro_ovr(const Matrix& probs, const std::vector<int>& labels);

} // namespace mmfuse
