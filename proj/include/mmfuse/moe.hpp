#pragma once

#include <vector>

#include "mmfuse/params.hpp"

namespace mmfuse::moe {

// Softmax gate over experts; rows sum to 1. Input is n x F (one combined
// feature row per document).
Var gate(Var features, Var gate_w, Var gate_b);

// One expert: two tanh layers.
Var expert_forward(Var features, const MlpT<Var>& expert);

// Dense mixture: every expert is evaluated and combined by its gate weight.
Var moe_forward(Var features, const MoET<Var>& params);

// Classification head: two tanh layers then a softmax over classes.
Var classify(Var mixed, const HeadT<Var>& head);

// Mean over the batch of -w_i * log(p[i, label_i]), probabilities floored at
// 1e-12 inside the log. Empty weights means unweighted.
Var cross_entropy(Var probs, const std::vector<int>& labels,
                  const std::vector<double>& weights = {});

Matrix gate_value(const Matrix& features, const Matrix& gate_w, const Matrix& gate_b);
Matrix moe_forward_value(const Matrix& features, const MoET<Matrix>& params);
Matrix classify_value(const Matrix& mixed, const HeadT<Matrix>& head);
double cross_entropy_value(const Matrix& probs, const std::vector<int>& labels,
                           const std::vector<double>& weights = {});

} // namespace mmfuse::moe
