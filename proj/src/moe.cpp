#include "mmfuse/moe.hpp"

#include "mmfuse/losses.hpp"

namespace mmfuse::moe {

using losses::affine;

Var gate(Var features, Var gate_w, Var gate_b) {
    return softmax_rows(affine(features, gate_w, gate_b));
}

Var expert_forward(Var features, const MlpT<Var>& expert) {
    Var hidden = tanh(affine(features, expert.w1, expert.b1));
    return tanh(affine(hidden, expert.w2, expert.b2));
}

Var moe_forward(Var features, const MoET<Var>& params) {
    if (params.experts.empty()) throw ContractError("moe_forward: no experts");
    Tape& t = *features.tape;
    const std::size_t n_experts = params.experts.size();

    Var weights = gate(features, params.gate_w, params.gate_b); // n x E
    const std::size_t out_dim = params.experts[0].w2.cols();
    Var ones_row = t.constant(Matrix::ones(1, out_dim));

    Var mixed;
    for (std::size_t i = 0; i < n_experts; ++i) {
        Var out = expert_forward(features, params.experts[i]); // n x out
        Matrix pick(n_experts, 1);
        pick(i, 0) = 1.0;
        Var weight_col = matmul(weights, t.constant(pick));     // n x 1
        Var scaled = hadamard(out, matmul(weight_col, ones_row));
        mixed = i == 0 ? scaled : add(mixed, scaled);
    }
    return mixed;
}

Var classify(Var mixed, const HeadT<Var>& head) {
    Var h1 = tanh(affine(mixed, head.w1, head.b1));
    Var h2 = tanh(affine(h1, head.w2, head.b2));
    return softmax_rows(affine(h2, head.w3, head.b3));
}

Var cross_entropy(Var probs, const std::vector<int>& labels,
                  const std::vector<double>& weights) {
    Tape& t = *probs.tape;
    const std::size_t n = probs.rows();
    const std::size_t classes = probs.cols();
    if (labels.size() != n) {
        throw ContractError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(n) + " rows");
    }
    if (!weights.empty() && weights.size() != n) {
        throw ContractError("cross_entropy: weights length disagrees with batch");
    }
    Matrix onehot(n, classes);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            throw ContractError("cross_entropy: label " + std::to_string(labels[i]) +
                                " out of range [0, " + std::to_string(classes) + ")");
        }
        onehot(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    Var picked = matmul(hadamard(probs, t.constant(onehot)),
                        t.constant(Matrix::ones(classes, 1))); // n x 1
    Var logp = log(clamp_min(picked, 1e-12));
    if (!weights.empty()) {
        Matrix wcol(n, 1);
        for (std::size_t i = 0; i < n; ++i) wcol(i, 0) = weights[i];
        logp = hadamard(logp, t.constant(wcol));
    }
    return mul_scalar(sum(logp), -1.0 / static_cast<double>(n));
}

namespace {

template <typename F>
Matrix eval_matrix(F&& build) {
    Tape tape;
    Var root = build(tape);
    return tape.value(root);
}

} // namespace

Matrix gate_value(const Matrix& features, const Matrix& gate_w, const Matrix& gate_b) {
    return eval_matrix([&](Tape& t) {
        return gate(t.leaf(features), t.leaf(gate_w), t.leaf(gate_b));
    });
}

Matrix moe_forward_value(const Matrix& features, const MoET<Matrix>& params) {
    return eval_matrix([&](Tape& t) {
        MoET<Var> lifted;
        auto& mutable_params = const_cast<MoET<Matrix>&>(params);
        zip_params(mutable_params, lifted, [&](Matrix& m, Var& v) { v = t.leaf(m); });
        return moe_forward(t.leaf(features), lifted);
    });
}

Matrix classify_value(const Matrix& mixed, const HeadT<Matrix>& head) {
    return eval_matrix([&](Tape& t) {
        HeadT<Var> lifted;
        auto& mutable_head = const_cast<HeadT<Matrix>&>(head);
        zip_params(mutable_head, lifted, [&](Matrix& m, Var& v) { v = t.leaf(m); });
        return classify(t.leaf(mixed), lifted);
    });
}

double cross_entropy_value(const Matrix& probs, const std::vector<int>& labels,
                           const std::vector<double>& weights) {
    Tape tape;
    Var root = cross_entropy(tape.leaf(probs), labels, weights);
    return tape.value(root)(0, 0);
}

} // namespace mmfuse::moe
