#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmfuse/config.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/gradcheck.hpp"
#include "mmfuse/rng.hpp"
#include "oracles.hpp"

using namespace mmfuse;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.gaussian();
    return m;
}

AttnBlockT<Matrix> random_attn(Rng& rng, std::size_t dim, std::size_t heads) {
    AttnBlockT<Matrix> p;
    const std::size_t head_dim = dim / heads;
    for (std::size_t h = 0; h < heads; ++h) {
        p.wq.push_back(random_matrix(rng, dim, head_dim, 0.5));
        p.wk.push_back(random_matrix(rng, dim, head_dim, 0.5));
        p.wv.push_back(random_matrix(rng, dim, head_dim, 0.5));
    }
    p.wo = random_matrix(rng, dim, dim, 0.5);
    p.pool_q = random_matrix(rng, dim, 1, 0.5);
    return p;
}

AttnBlockT<Var> lift_attn(Tape& t, const AttnBlockT<Matrix>& p) {
    AttnBlockT<Var> out;
    for (std::size_t h = 0; h < p.wq.size(); ++h) {
        out.wq.push_back(t.leaf(p.wq[h]));
        out.wk.push_back(t.leaf(p.wk[h]));
        out.wv.push_back(t.leaf(p.wv[h]));
    }
    out.wo = t.leaf(p.wo);
    out.pool_q = t.leaf(p.pool_q);
    return out;
}

CrossBlockT<Var> lift_cross(Tape& t, const CrossBlockT<Matrix>& p) {
    return {t.leaf(p.wq), t.leaf(p.wk), t.leaf(p.wv)};
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
    return worst;
}

} // namespace

TEST_CASE("project_to_common: identity, hand product, oracle") {
    Tape t;
    Rng rng(1);
    Matrix s = random_matrix(rng, 4, 3);
    Var projected = fusion::project_to_common(t.leaf(s), t.leaf(Matrix::identity(3)));
    CHECK(max_abs_diff(projected.value(), s) == 0.0);

    Matrix segs(2, 3);
    segs(0, 0) = 1; segs(0, 1) = 2; segs(0, 2) = 3;
    segs(1, 0) = 4; segs(1, 1) = 5; segs(1, 2) = 6;
    Matrix w(3, 2);
    w(0, 0) = 1; w(0, 1) = 0; w(1, 0) = 0; w(1, 1) = 1; w(2, 0) = 1; w(2, 1) = 1;
    Var hand = fusion::project_to_common(t.leaf(segs), t.leaf(w));
    CHECK(hand.value()(0, 0) == 4.0);  // 1 + 3
    CHECK(hand.value()(0, 1) == 5.0);  // 2 + 3
    CHECK(hand.value()(1, 0) == 10.0); // 4 + 6
    CHECK(hand.value()(1, 1) == 11.0); // 5 + 6

    Matrix s2 = random_matrix(rng, 5, 7);
    Matrix w2 = random_matrix(rng, 7, 4);
    Var r = fusion::project_to_common(t.leaf(s2), t.leaf(w2));
    CHECK(max_abs_diff(r.value(), oracle::matmul(s2, w2)) <= 1e-12);

    CHECK_THROWS_AS(fusion::project_to_common(t.leaf(Matrix(2, 3)), t.leaf(Matrix(4, 2))),
                    DimensionError);
}

TEST_CASE("self_attention: single segment reduces to value-output projection") {
    Tape t;
    Rng rng(2);
    AttnBlockT<Matrix> p = random_attn(rng, 4, 1);
    Matrix s = random_matrix(rng, 1, 4);
    Var out = fusion::self_attention(t.leaf(s), lift_attn(t, p));
    const Matrix expected = oracle::matmul(oracle::matmul(s, p.wv[0]), p.wo);
    CHECK(max_abs_diff(out.value(), expected) <= 1e-12);
}

TEST_CASE("self_attention is equivariant under row permutation") {
    Tape t;
    Rng rng(3);
    AttnBlockT<Matrix> p = random_attn(rng, 6, 2);
    Matrix s = random_matrix(rng, 5, 6);
    const std::size_t perm[5] = {3, 0, 4, 1, 2};
    Matrix sp(5, 6);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 6; ++j) sp(i, j) = s(perm[i], j);

    Var a = fusion::self_attention(t.leaf(s), lift_attn(t, p));
    Var b = fusion::self_attention(t.leaf(sp), lift_attn(t, p));
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            CHECK(b.value()(i, j) == doctest::Approx(a.value()(perm[i], j)).epsilon(1e-12));
}

TEST_CASE("self_attention matches the scalar-loop oracle") {
    Tape t;
    Rng rng(4);
    AttnBlockT<Matrix> p = random_attn(rng, 4, 2);
    Matrix s = random_matrix(rng, 3, 4);
    Var out = fusion::self_attention(t.leaf(s), lift_attn(t, p));
    CHECK(max_abs_diff(out.value(), oracle::self_attention(s, p.wq, p.wk, p.wv, p.wo)) <= 1e-12);
}

TEST_CASE("attention_pool: fixed points and oracle") {
    Tape t;
    Rng rng(5);
    Matrix q = random_matrix(rng, 3, 1);

    Matrix single = random_matrix(rng, 1, 3);
    Var pooled = fusion::attention_pool(t.leaf(single), t.leaf(q));
    CHECK(max_abs_diff(pooled.value(), single) <= 1e-15);

    Matrix repeated(4, 3);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) repeated(i, j) = single(0, j);
    Var conv = fusion::attention_pool(t.leaf(repeated), t.leaf(q));
    CHECK(max_abs_diff(conv.value(), single) <= 1e-12);

    Matrix s = random_matrix(rng, 4, 3);
    Var r = fusion::attention_pool(t.leaf(s), t.leaf(q));
    const std::vector<double> expected = oracle::attention_pool(s, q);
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(r.value()(0, j) == doctest::Approx(expected[j]).epsilon(1e-12));
}

TEST_CASE("cross_modal_attention: single-key, zero-logit, and oracle cases") {
    Rng rng(6);
    CrossBlockT<Matrix> p{random_matrix(rng, 4, 4, 0.5), random_matrix(rng, 4, 4, 0.5),
                          random_matrix(rng, 4, 4, 0.5)};

    {
        // One target segment: every output row equals its value projection.
        Tape t;
        Matrix src = random_matrix(rng, 3, 4);
        Matrix tgt = random_matrix(rng, 1, 4);
        Var out = fusion::cross_modal_attention(t.leaf(src), t.leaf(tgt), lift_cross(t, p));
        const Matrix vproj = oracle::matmul(tgt, p.wv);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                CHECK(out.value()(i, j) == doctest::Approx(vproj(0, j)).epsilon(1e-12));
    }
    {
        // Zero query/key projections: uniform attention over the targets.
        Tape t;
        CrossBlockT<Matrix> zero{Matrix(4, 4), Matrix(4, 4), p.wv};
        Matrix src = random_matrix(rng, 2, 4);
        Matrix tgt = random_matrix(rng, 5, 4);
        Var out = fusion::cross_modal_attention(t.leaf(src), t.leaf(tgt), lift_cross(t, zero));
        const Matrix vproj = oracle::matmul(tgt, p.wv);
        for (std::size_t j = 0; j < 4; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < 5; ++i) mean += vproj(i, j);
            mean /= 5.0;
            CHECK(out.value()(0, j) == doctest::Approx(mean).epsilon(1e-12));
            CHECK(out.value()(1, j) == doctest::Approx(mean).epsilon(1e-12));
        }
    }
    {
        Tape t;
        Matrix src = random_matrix(rng, 3, 4);
        Matrix tgt = random_matrix(rng, 3, 4);
        Var out = fusion::cross_modal_attention(t.leaf(src), t.leaf(tgt), lift_cross(t, p));
        CHECK(max_abs_diff(out.value(), oracle::cross_attention(src, tgt, p.wq, p.wk, p.wv)) <=
              1e-12);
    }
}

TEST_CASE("joint_document_embedding: duplicated-stack symmetry and composed oracle") {
    Rng rng(7);
    AttnBlockT<Matrix> p = random_attn(rng, 4, 2);

    {
        // Identical inputs duplicate rows; attention and pooling are invariant
        // to the duplication, so the joint embedding equals the L-row path.
        Tape t;
        Matrix s = random_matrix(rng, 3, 4);
        Var joint = fusion::joint_document_embedding(t.leaf(s), t.leaf(s), lift_attn(t, p));
        Var single = fusion::modality_document_embedding(t.leaf(s), lift_attn(t, p));
        CHECK(max_abs_diff(joint.value(), single.value()) <= 1e-12);
    }
    {
        // L = 1 on both sides: pooling over exactly two rows.
        Tape t;
        Matrix a = random_matrix(rng, 1, 4);
        Matrix b = random_matrix(rng, 1, 4);
        Var joint = fusion::joint_document_embedding(t.leaf(a), t.leaf(b), lift_attn(t, p));
        CHECK(joint.value().rows() == 1);
        CHECK(joint.value().cols() == 4);
        CHECK(joint.value().all_finite());
    }
    {
        Tape t;
        Matrix a = random_matrix(rng, 3, 4);
        Matrix b = random_matrix(rng, 3, 4);
        Var joint = fusion::joint_document_embedding(t.leaf(a), t.leaf(b), lift_attn(t, p));

        Matrix stacked(6, 4);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                stacked(i, j) = a(i, j);
                stacked(3 + i, j) = b(i, j);
            }
        const Matrix attended = oracle::self_attention(stacked, p.wq, p.wk, p.wv, p.wo);
        const std::vector<double> expected = oracle::attention_pool(attended, p.pool_q);
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(joint.value()(0, j) == doctest::Approx(expected[j]).epsilon(1e-11));
    }
}

TEST_CASE("modality_document_embedding is invariant to row permutation") {
    Rng rng(8);
    AttnBlockT<Matrix> p = random_attn(rng, 6, 3);
    Matrix s = random_matrix(rng, 5, 6);
    const std::size_t perm[5] = {4, 2, 0, 3, 1};
    Matrix sp(5, 6);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 6; ++j) sp(i, j) = s(perm[i], j);

    Tape t;
    Var a = fusion::modality_document_embedding(t.leaf(s), lift_attn(t, p));
    Var b = fusion::modality_document_embedding(t.leaf(sp), lift_attn(t, p));
    CHECK(max_abs_diff(a.value(), b.value()) <= 1e-10);
}

TEST_CASE("modality_document_embedding matches the composed oracle") {
    Rng rng(9);
    AttnBlockT<Matrix> p = random_attn(rng, 4, 2);
    Matrix s = random_matrix(rng, 4, 4);
    Tape t;
    Var out = fusion::modality_document_embedding(t.leaf(s), lift_attn(t, p));
    const Matrix attended = oracle::self_attention(s, p.wq, p.wk, p.wv, p.wo);
    const std::vector<double> expected = oracle::attention_pool(attended, p.pool_q);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(out.value()(0, j) == doctest::Approx(expected[j]).epsilon(1e-11));
}

TEST_CASE("fusion outputs stay finite for inputs up to magnitude 1e3") {
    Rng rng(10);
    AttnBlockT<Matrix> p = random_attn(rng, 4, 2);
    CrossBlockT<Matrix> c{random_matrix(rng, 4, 4), random_matrix(rng, 4, 4),
                          random_matrix(rng, 4, 4)};
    for (int rep = 0; rep < 5; ++rep) {
        Tape t;
        Matrix s = random_matrix(rng, 6, 4, 1e3);
        Matrix s2 = random_matrix(rng, 6, 4, 1e3);
        Var doc = fusion::modality_document_embedding(t.leaf(s), lift_attn(t, p));
        Var crossed = fusion::cross_modal_attention(t.leaf(s), t.leaf(s2), lift_cross(t, c));
        CHECK(doc.value().all_finite());
        CHECK(crossed.value().all_finite());
    }
}

TEST_CASE("heads must divide the common dimension") {
    ModelDims dims;
    dims.common_dim = 10;
    dims.heads = 3;
    CHECK_THROWS_AS(dims.validate(), ConfigError);
}

TEST_CASE("gradients through the joint embedding pass grad_check") {
    Rng rng(11);
    const std::size_t d = 4, heads = 2, head_dim = 2, L = 3;
    // Inputs: two segment matrices and every attention parameter.
    std::vector<Matrix> inputs;
    inputs.push_back(random_matrix(rng, L, d));
    inputs.push_back(random_matrix(rng, L, d));
    for (std::size_t h = 0; h < heads; ++h) {
        inputs.push_back(random_matrix(rng, d, head_dim, 0.5));
        inputs.push_back(random_matrix(rng, d, head_dim, 0.5));
        inputs.push_back(random_matrix(rng, d, head_dim, 0.5));
    }
    inputs.push_back(random_matrix(rng, d, d, 0.5));
    inputs.push_back(random_matrix(rng, d, 1, 0.5));
    for (int block = 0; block < 2; ++block) {
        inputs.push_back(random_matrix(rng, d, d, 0.5));
        inputs.push_back(random_matrix(rng, d, d, 0.5));
        inputs.push_back(random_matrix(rng, d, d, 0.5));
    }

    GradCheckResult r = grad_check(
        [&](Tape& t, const std::vector<Var>& in) {
            std::size_t i = 2;
            AttnBlockT<Var> attn;
            for (std::size_t h = 0; h < heads; ++h) {
                attn.wq.push_back(in[i++]);
                attn.wk.push_back(in[i++]);
                attn.wv.push_back(in[i++]);
            }
            attn.wo = in[i++];
            attn.pool_q = in[i++];
            CrossBlockT<Var> a2t{in[i], in[i + 1], in[i + 2]};
            i += 3;
            CrossBlockT<Var> t2a{in[i], in[i + 1], in[i + 2]};

            Var sa2t = fusion::cross_modal_attention(in[0], in[1], a2t);
            Var st2a = fusion::cross_modal_attention(in[1], in[0], t2a);
            Var joint = fusion::joint_document_embedding(sa2t, st2a, attn);
            return sum(hadamard(joint, t.constant(Matrix::ones(1, d))));
        },
        inputs, 1e-3, 4);
    CHECK(r.max_rel_err <= 1e-4);
}
