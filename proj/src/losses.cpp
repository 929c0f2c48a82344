#include "mmfuse/losses.hpp"

#include <cmath>

namespace mmfuse::losses {

Var affine(Var x, Var w, Var b) {
    Var xw = matmul(x, w);
    if (xw.rows() == 1) return add(xw, b);
    Var ones = x.tape->constant(Matrix::ones(xw.rows(), 1));
    return add(xw, matmul(ones, b));
}

Var shared_project(Var x, const MlpT<Var>& projector) {
    Var hidden = tanh(affine(x, projector.w1, projector.b1));
    return affine(hidden, projector.w2, projector.b2);
}

double scaled_sim(const std::vector<double>& x, const std::vector<double>& y, double tau) {
    if (!(tau > 0.0)) throw ContractError("scaled_sim: tau must be positive");
    if (x.size() != y.size()) {
        throw DimensionError("scaled_sim: vectors of length " + std::to_string(x.size()) +
                             " and " + std::to_string(y.size()));
    }
    double nx = 0.0, ny = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        nx += x[i] * x[i];
        ny += y[i] * y[i];
        dot += x[i] * y[i];
    }
    if (nx == 0.0 || ny == 0.0) throw NumericError("scaled_sim: zero vector");
    const double cosine =
        dot / std::max(std::sqrt(nx) * std::sqrt(ny), 1e-12);
    return std::exp(cosine / tau);
}

namespace {

void require_batch(Var a, Var b, const char* where) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (!av.same_shape(bv)) {
        throw DimensionError(std::string(where) + ": batch shapes " + av.shape_str() + " and " +
                             bv.shape_str() + " differ");
    }
    if (av.rows() < 2) {
        throw ContractError(std::string(where) + ": batch size must be >= 2, got " +
                            std::to_string(av.rows()));
    }
}

// n x 1 column holding the diagonal of a square matrix node.
Var diag_col(Var m) {
    Tape& t = *m.tape;
    const std::size_t n = m.rows();
    Var masked = hadamard(m, t.constant(Matrix::identity(n)));
    return matmul(masked, t.constant(Matrix::ones(n, 1)));
}

// n x 1 column of row sums over off-diagonal entries.
Var offdiag_row_sums(Var m) {
    Tape& t = *m.tape;
    const std::size_t n = m.rows();
    Matrix mask = Matrix::ones(n, n);
    for (std::size_t i = 0; i < n; ++i) mask(i, i) = 0.0;
    return matmul(hadamard(m, t.constant(mask)), t.constant(Matrix::ones(n, 1)));
}

} // namespace

Var contrastive_loss(Var z_audio, Var z_text, Var z_joint, double tau, bool include_positives) {
    require_batch(z_audio, z_joint, "contrastive_loss");
    require_batch(z_text, z_joint, "contrastive_loss");
    if (!(tau > 0.0)) throw ContractError("contrastive_loss: tau must be positive");
    const std::size_t n = z_audio.rows();
    const double inv_tau = 1.0 / tau;

    Var na = normalize_rows(z_audio);
    Var nt = normalize_rows(z_text);
    Var nj = normalize_rows(z_joint);

    Var sim_aa = exp(mul_scalar(matmul(na, transpose(na)), inv_tau));
    Var sim_tt = exp(mul_scalar(matmul(nt, transpose(nt)), inv_tau));
    Var sim_jj = exp(mul_scalar(matmul(nj, transpose(nj)), inv_tau));
    Var sim_aj = exp(mul_scalar(matmul(na, transpose(nj)), inv_tau));
    Var sim_tj = exp(mul_scalar(matmul(nt, transpose(nj)), inv_tau));

    Var omega_a = offdiag_row_sums(add(add(sim_aa, sim_aj), sim_jj));
    Var omega_t = offdiag_row_sums(add(add(sim_tt, sim_tj), sim_jj));
    Var pos_a = diag_col(sim_aj);
    Var pos_t = diag_col(sim_tj);
    if (include_positives) {
        omega_a = add(omega_a, pos_a);
        omega_t = add(omega_t, pos_t);
    }
    Var ratios = add(divide(pos_a, omega_a), divide(pos_t, omega_t));
    return mul_scalar(sum(log(ratios)), -1.0 / static_cast<double>(n));
}

Var standard_contrastive_loss(Var z_audio, Var z_text, double tau) {
    require_batch(z_audio, z_text, "standard_contrastive_loss");
    if (!(tau > 0.0)) throw ContractError("standard_contrastive_loss: tau must be positive");
    const std::size_t n = z_audio.rows();

    Var logits = mul_scalar(matmul(normalize_rows(z_audio), transpose(normalize_rows(z_text))),
                            1.0 / tau);
    Var positives = diag_col(logits);
    Var row_lse = logsumexp_rows(logits);
    Var col_lse = logsumexp_rows(transpose(logits));
    Var per_row = add(sub(row_lse, positives), sub(col_lse, positives));
    return mul_scalar(sum(per_row), 0.5 / static_cast<double>(n));
}

Var cka(Var x, Var y) {
    const Matrix& xv = x.value();
    const Matrix& yv = y.value();
    if (xv.rows() != yv.rows()) {
        throw DimensionError("cka: row counts differ, " + xv.shape_str() + " vs " +
                             yv.shape_str());
    }
    if (xv.rows() < 2) throw ContractError("cka: need at least 2 rows");
    Tape& t = *x.tape;
    const std::size_t n = xv.rows();

    Matrix centering = Matrix::identity(n);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) centering(i, j) -= inv_n;
    Var h = t.constant(centering);
    Var xc = matmul(h, x);
    Var yc = matmul(h, y);

    Var numerator = sum(square(matmul(transpose(xc), yc)));
    Var denom_x = sqrt(sum(square(matmul(transpose(xc), xc))));
    Var denom_y = sqrt(sum(square(matmul(transpose(yc), yc))));
    if (denom_x.value()(0, 0) == 0.0) {
        throw NumericError("cka: left input has zero variance after centering");
    }
    if (denom_y.value()(0, 0) == 0.0) {
        throw NumericError("cka: right input has zero variance after centering");
    }
    return divide(numerator, hadamard(denom_x, denom_y));
}

Var cka_loss(Var z_audio, Var z_text, Var z_joint) {
    Tape& t = *z_joint.tape;
    Var two = t.constant(Matrix(1, 1, 2.0));
    return sub(two, add(cka(z_joint, z_audio), cka(z_joint, z_text)));
}

Var infonce_mi(Var z_joint, Var z_modality, double gamma) {
    require_batch(z_joint, z_modality, "infonce_mi");
    if (!(gamma > 0.0)) throw ContractError("infonce_mi: gamma must be positive");
    Tape& t = *z_joint.tape;
    const std::size_t n = z_joint.rows();

    Var scores = mul_scalar(matmul(z_joint, transpose(z_modality)), 1.0 / gamma);
    Var positives = diag_col(scores);
    Var lse = logsumexp_rows(scores);
    Var mean_ratio = mul_scalar(sum(sub(positives, lse)), 1.0 / static_cast<double>(n));
    return add(mean_ratio, t.constant(Matrix(1, 1, std::log(static_cast<double>(n)))));
}

Var mi_loss(Var z_audio, Var z_text, Var z_joint, double gamma) {
    Var mi_audio = infonce_mi(z_joint, z_audio, gamma);
    Var mi_text = infonce_mi(z_joint, z_text, gamma);
    return sub(square(sub(mi_audio, mi_text)), add(mi_audio, mi_text));
}

namespace {

template <typename F>
double eval_scalar(F&& build) {
    Tape tape;
    Var root = build(tape);
    return tape.value(root)(0, 0);
}

} // namespace

double contrastive_loss_value(const Matrix& z_audio, const Matrix& z_text, const Matrix& z_joint,
                              double tau, bool include_positives) {
    return eval_scalar([&](Tape& t) {
        return contrastive_loss(t.leaf(z_audio), t.leaf(z_text), t.leaf(z_joint), tau,
                                include_positives);
    });
}

double standard_contrastive_loss_value(const Matrix& z_audio, const Matrix& z_text, double tau) {
    return eval_scalar([&](Tape& t) {
        return standard_contrastive_loss(t.leaf(z_audio), t.leaf(z_text), tau);
    });
}

double cka_value(const Matrix& x, const Matrix& y) {
    const double v = eval_scalar([&](Tape& t) { return cka(t.leaf(x), t.leaf(y)); });
    return std::min(1.0, std::max(0.0, v));
}

double cka_loss_value(const Matrix& z_audio, const Matrix& z_text, const Matrix& z_joint) {
    return eval_scalar([&](Tape& t) {
        return cka_loss(t.leaf(z_audio), t.leaf(z_text), t.leaf(z_joint));
    });
}

double infonce_mi_value(const Matrix& z_joint, const Matrix& z_modality, double gamma) {
    return eval_scalar([&](Tape& t) {
        return infonce_mi(t.leaf(z_joint), t.leaf(z_modality), gamma);
    });
}

double mi_loss_value(const Matrix& z_audio, const Matrix& z_text, const Matrix& z_joint,
                     double gamma) {
    return eval_scalar([&](Tape& t) {
        return mi_loss(t.leaf(z_audio), t.leaf(z_text), t.leaf(z_joint), gamma);
    });
}

} // namespace mmfuse::losses
