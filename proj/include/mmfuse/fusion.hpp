#pragma once

#include "mmfuse/params.hpp"

namespace mmfuse::fusion {

// S (L x d_m) projected into the common dimension: S * W_in.
Var project_to_common(Var segments, Var w_in);

// Scaled dot-product self-attention per head, heads concatenated column-wise
// and mixed by wo. Scaling is 1/sqrt(d_h) inside each head.
Var self_attention(Var segments, const AttnBlockT<Var>& params);

// Softmax(S q / sqrt(d)) over segments, then the weighted sum of rows.
// Returns a 1 x d row.
Var attention_pool(Var segments, Var pool_q);

// Queries from source, keys and values from target, scaled by 1/sqrt(d).
Var cross_modal_attention(Var source, Var target, const CrossBlockT<Var>& params);

// self_attention followed by attention_pool.
Var modality_document_embedding(Var segments, const AttnBlockT<Var>& params);

// Row-stacks the two cross-attended segment matrices, then self-attention and
// attention pooling over the 2L rows.
Var joint_document_embedding(Var seg_a2t, Var seg_t2a, const AttnBlockT<Var>& params);

} // namespace mmfuse::fusion
