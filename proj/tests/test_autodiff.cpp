#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/gradcheck.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/verification.hpp"

using namespace mmfuse;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian();
    return m;
}

bool bit_identical(const Matrix& a, const Matrix& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace

TEST_CASE("matmul forward basics") {
    Tape t;
    Var identity = t.leaf(Matrix::identity(2));
    Matrix b(2, 2);
    b(0, 0) = 3; b(0, 1) = 4; b(1, 0) = 5; b(1, 1) = 6;
    Var bv = t.leaf(b);
    Var c = matmul(identity, bv);
    CHECK(c.value()(0, 0) == 3.0);
    CHECK(c.value()(0, 1) == 4.0);
    CHECK(c.value()(1, 0) == 5.0);
    CHECK(c.value()(1, 1) == 6.0);

    Matrix row(1, 2);
    row(0, 0) = 1; row(0, 1) = 2;
    Matrix col(2, 1);
    col(0, 0) = 3; col(1, 0) = 4;
    Var dot = matmul(t.leaf(row), t.leaf(col));
    CHECK(dot.value()(0, 0) == 11.0);
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
    Tape t;
    Var a = t.leaf(Matrix(2, 3));
    Var b = t.leaf(Matrix(2, 2));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), DimensionError);
}

TEST_CASE("matmul gradient matches central finite differences") {
    Rng rng(42);
    std::vector<Matrix> inputs{random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)};
    GradCheckResult r = grad_check(
        [](Tape&, const std::vector<Var>& in) { return sum(matmul(in[0], in[1])); }, inputs,
        1e-6);
    CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("matmul matches a scalar triple-loop oracle") {
    Rng rng(7);
    Matrix a = random_matrix(rng, 3, 5);
    Matrix b = random_matrix(rng, 5, 4);
    Matrix c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 5; ++k) acc += a(i, k) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax_rows: symmetry, stability, contract") {
    Tape t;
    Var flat = softmax_rows(t.leaf(Matrix(1, 3, 0.0)));
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(flat.value()(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }

    Matrix hot(1, 2);
    hot(0, 0) = 1000.0;
    Var stable = softmax_rows(t.leaf(hot));
    CHECK(stable.value()(0, 0) == doctest::Approx(1.0));
    CHECK(stable.value()(0, 1) == doctest::Approx(0.0));
    CHECK(std::isfinite(stable.value()(0, 0)));

    Matrix bad(1, 2);
    bad(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(softmax_rows(t.leaf(bad)), NumericError);
}

TEST_CASE("softmax_rows rows sum to one and entries lie in (0,1)") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        Tape t;
        Matrix m = random_matrix(rng, 4, 6);
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= 5.0;
        Var s = softmax_rows(t.leaf(m));
        for (std::size_t i = 0; i < 4; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                total += s.value()(i, j);
                CHECK(s.value()(i, j) > 0.0);
                CHECK(s.value()(i, j) < 1.0);
            }
            CHECK(std::fabs(total - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("softmax_rows stays finite and normalized at magnitude 1e3") {
    Rng rng(4);
    for (int rep = 0; rep < 10; ++rep) {
        Tape t;
        Matrix m = random_matrix(rng, 3, 5);
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= 1e3;
        Var s = softmax_rows(t.leaf(m));
        CHECK(s.value().all_finite());
        for (std::size_t i = 0; i < 3; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < 5; ++j) total += s.value()(i, j);
            CHECK(std::fabs(total - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("elementwise forward spot checks and error paths") {
    Tape t;
    CHECK(exp(t.leaf(Matrix(1, 1, 0.0))).value()(0, 0) == 1.0);

    Var wide = concat_cols(t.leaf(Matrix(2, 3, 1.0)), t.leaf(Matrix(2, 5, 2.0)));
    CHECK(wide.rows() == 2);
    CHECK(wide.cols() == 8);

    CHECK_THROWS_AS(log(t.leaf(Matrix(1, 1, -1.0))), NumericError);
    CHECK_THROWS_AS(log(t.leaf(Matrix(1, 1, 0.0))), NumericError);
    CHECK_THROWS_AS(concat_cols(t.leaf(Matrix(2, 3)), t.leaf(Matrix(3, 3))), DimensionError);
    CHECK_THROWS_AS(concat_rows(t.leaf(Matrix(2, 3)), t.leaf(Matrix(2, 4))), DimensionError);
    CHECK_THROWS_AS(add(t.leaf(Matrix(2, 3)), t.leaf(Matrix(3, 2))), DimensionError);
    CHECK_THROWS_AS(divide(t.leaf(Matrix(1, 1, 1.0)), t.leaf(Matrix(1, 1, 0.0))), NumericError);
    CHECK_THROWS_AS(sqrt(t.leaf(Matrix(1, 1, -0.5))), NumericError);
    CHECK_THROWS_AS(slice_rows(t.leaf(Matrix(2, 2)), 1, 4), ContractError);
}

TEST_CASE("backward: sum seeds all-ones gradient") {
    Tape t;
    Var a = t.leaf(Matrix(2, 2, 3.0));
    t.backward(sum(a));
    for (std::size_t i = 0; i < 4; ++i) CHECK(a.grad().data()[i] == 1.0);
}

TEST_CASE("backward: sum(A*B) reproduces the hand-derived pattern") {
    // d sum(A B) / dA = ones * B^T, i.e. grad_A(i,k) = sum_j B(k,j)
    Tape t;
    Rng rng(11);
    Matrix a = random_matrix(rng, 2, 2);
    Matrix b = random_matrix(rng, 2, 2);
    Var av = t.leaf(a), bv = t.leaf(b);
    t.backward(sum(matmul(av, bv)));
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t k = 0; k < 2; ++k) {
            CHECK(av.grad()(i, k) == doctest::Approx(b(k, 0) + b(k, 1)).epsilon(1e-15));
        }
    }
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(bv.grad()(k, j) == doctest::Approx(a(0, k) + a(1, k)).epsilon(1e-15));
        }
    }
}

TEST_CASE("backward rejects non-scalar roots") {
    Tape t;
    Var a = t.leaf(Matrix(2, 2, 1.0));
    CHECK_THROWS_AS(t.backward(a), ContractError);
}

TEST_CASE("backward zeroes gradients between calls") {
    Tape t;
    Var a = t.leaf(Matrix(2, 2, 1.5));
    Var root = sum(square(a));
    t.backward(root);
    Matrix first = a.grad();
    t.backward(root);
    CHECK(bit_identical(first, a.grad()));
}

TEST_CASE("gradient accumulation is additive across consumers") {
    Tape t;
    Var x = t.leaf(Matrix(2, 2, 2.0));
    t.backward(sum(add(x, x)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad().data()[i] == 2.0);
}

TEST_CASE("gradient of a sum of objectives equals the sum of gradients") {
    Rng rng(5);
    Matrix x = random_matrix(rng, 3, 3);

    Tape tf;
    Var xf = tf.leaf(x);
    tf.backward(sum(square(xf)));
    Tape tg;
    Var xg = tg.leaf(x);
    tg.backward(sum(exp(xg)));
    Tape th;
    Var xh = th.leaf(x);
    th.backward(add(sum(square(xh)), sum(exp(xh))));

    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(xh.grad().data()[i] == xf.grad().data()[i] + xg.grad().data()[i]);
    }
}

TEST_CASE("grad_check: closed-form and degenerate cases") {
    Rng rng(17);
    std::vector<Matrix> inputs{random_matrix(rng, 3, 3)};
    GradCheckResult quad = grad_check(
        [](Tape&, const std::vector<Var>& in) { return sum(square(in[0])); }, inputs, 1e-6);
    CHECK(quad.max_rel_err <= 1e-7);

    GradCheckResult constant = grad_check(
        [](Tape& t, const std::vector<Var>&) { return t.constant(Matrix(1, 1, 4.0)); }, inputs,
        1e-6);
    CHECK(constant.max_rel_err == 0.0);

    CHECK_THROWS_AS(grad_check([](Tape&, const std::vector<Var>& in) { return in[0]; },
                               {Matrix(2, 2, 1.0)}, 1e-6),
                    ContractError);
    CHECK_THROWS_AS(grad_check([](Tape&, const std::vector<Var>& in) { return sum(in[0]); },
                               inputs, 0.0),
                    ContractError);
}

TEST_CASE("tape replay determinism: identical seeds, identical bits") {
    auto run = [](Matrix& grad_out) {
        Rng rng(99);
        Tape t;
        Var a = t.leaf(random_matrix(rng, 3, 4));
        Var b = t.leaf(random_matrix(rng, 4, 3));
        Var root = sum(tanh(matmul(softmax_rows(matmul(a, b)), matmul(a, b))));
        t.backward(root);
        grad_out = a.grad();
        return root.value()(0, 0);
    };
    Matrix g1, g2;
    const double v1 = run(g1);
    const double v2 = run(g2);
    CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
    CHECK(bit_identical(g1, g2));
}

TEST_CASE("verification suite: every primitive within 1e-6, composites within 1e-4") {
    const auto entries = run_gradcheck_suite(1, 10);
    for (const auto& entry : entries) {
        INFO(entry.name, " max_rel_err=", entry.max_rel_err);
        CHECK(entry.max_rel_err <= entry.threshold);
    }
}
