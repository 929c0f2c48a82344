#include "mmfuse/fusion.hpp"

#include <cmath>

namespace mmfuse::fusion {

Var project_to_common(Var segments, Var w_in) {
    return matmul(segments, w_in);
}

Var self_attention(Var segments, const AttnBlockT<Var>& params) {
    const std::size_t heads = params.wq.size();
    if (heads == 0) throw ContractError("self_attention: no heads");
    const std::size_t head_dim = params.wq[0].cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Var merged;
    for (std::size_t h = 0; h < heads; ++h) {
        Var q = matmul(segments, params.wq[h]);
        Var k = matmul(segments, params.wk[h]);
        Var v = matmul(segments, params.wv[h]);
        Var weights = softmax_rows(mul_scalar(matmul(q, transpose(k)), scale));
        Var head = matmul(weights, v);
        merged = h == 0 ? head : concat_cols(merged, head);
    }
    return matmul(merged, params.wo);
}

Var attention_pool(Var segments, Var pool_q) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(segments.cols()));
    Var logits = mul_scalar(matmul(segments, pool_q), scale); // L x 1
    Var weights = softmax_rows(transpose(logits));            // 1 x L
    return matmul(weights, segments);                         // 1 x d
}

Var cross_modal_attention(Var source, Var target, const CrossBlockT<Var>& params) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(source.cols()));
    Var q = matmul(source, params.wq);
    Var k = matmul(target, params.wk);
    Var v = matmul(target, params.wv);
    Var weights = softmax_rows(mul_scalar(matmul(q, transpose(k)), scale));
    return matmul(weights, v);
}

Var modality_document_embedding(Var segments, const AttnBlockT<Var>& params) {
    return attention_pool(self_attention(segments, params), params.pool_q);
}

Var joint_document_embedding(Var seg_a2t, Var seg_t2a, const AttnBlockT<Var>& params) {
    Var stacked = concat_rows(seg_a2t, seg_t2a);
    return attention_pool(self_attention(stacked, params), params.pool_q);
}

} // namespace mmfuse::fusion
