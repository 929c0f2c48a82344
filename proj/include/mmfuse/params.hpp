#pragma once

#include <vector>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/matrix.hpp"

namespace mmfuse {

// Parameter blocks are templated on the matrix type so the same structure
// serves both plain weights (Matrix) and their tape handles (Var). zip_params
// walks two instances member-by-member in a fixed order.

// Multi-head self-attention with an attention-pooling query.
// wq/wk/wv hold one d x d_h projection per head; wo is d x d; pool_q is d x 1.
template <class M>
struct AttnBlockT {
    std::vector<M> wq, wk, wv;
    M wo;
    M pool_q;
};

// Single-head cross-modal attention (queries from source, keys/values from
// target); all three projections are d x d.
template <class M>
struct CrossBlockT {
    M wq, wk, wv;
};

// Two-layer MLP: x -> tanh(x w1 + b1) -> (. w2 + b2)
template <class M>
struct MlpT {
    M w1, b1, w2, b2;
};

// Classification head: two tanh layers then a softmax projection.
template <class M>
struct HeadT {
    M w1, b1, w2, b2, w3, b3;
};

template <class M>
struct MoET {
    std::vector<MlpT<M>> experts;
    M gate_w, gate_b;
};

template <class A, class B, class F>
void zip_params(MlpT<A>& x, MlpT<B>& y, F&& f) {
    f(x.w1, y.w1);
    f(x.b1, y.b1);
    f(x.w2, y.w2);
    f(x.b2, y.b2);
}

template <class A, class B, class F>
void zip_params(HeadT<A>& x, HeadT<B>& y, F&& f) {
    f(x.w1, y.w1);
    f(x.b1, y.b1);
    f(x.w2, y.w2);
    f(x.b2, y.b2);
    f(x.w3, y.w3);
    f(x.b3, y.b3);
}

template <class A, class B, class F>
void zip_params(AttnBlockT<A>& x, AttnBlockT<B>& y, F&& f) {
    y.wq.resize(x.wq.size());
    y.wk.resize(x.wk.size());
    y.wv.resize(x.wv.size());
    for (std::size_t h = 0; h < x.wq.size(); ++h) {
        f(x.wq[h], y.wq[h]);
        f(x.wk[h], y.wk[h]);
        f(x.wv[h], y.wv[h]);
    }
    f(x.wo, y.wo);
    f(x.pool_q, y.pool_q);
}

template <class A, class B, class F>
void zip_params(CrossBlockT<A>& x, CrossBlockT<B>& y, F&& f) {
    f(x.wq, y.wq);
    f(x.wk, y.wk);
    f(x.wv, y.wv);
}

template <class A, class B, class F>
void zip_params(MoET<A>& x, MoET<B>& y, F&& f) {
    y.experts.resize(x.experts.size());
    for (std::size_t i = 0; i < x.experts.size(); ++i) zip_params(x.experts[i], y.experts[i], f);
    f(x.gate_w, y.gate_w);
    f(x.gate_b, y.gate_b);
}

} // namespace mmfuse
