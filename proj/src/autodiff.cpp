#include "mmfuse/autodiff.hpp"

#include <cmath>
#include <string>

namespace mmfuse {

namespace {

void require_same_tape(Var a, Var b, const char* op) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw ContractError(std::string(op) + ": operands belong to different tapes");
    }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shapes " + a.shape_str() + " and " +
                             b.shape_str() + " differ");
    }
}

} // namespace

const Matrix& Var::value() const { return tape->value(*this); }
const Matrix& Var::grad() const { return tape->grad(*this); }

Var Tape::push(Node node) {
    grads_valid_ = false;
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.op = Op::Leaf;
    return push(std::move(n));
}

const Matrix& Tape::grad(Var v) const {
    if (!grads_valid_) throw ContractError("grad: backward() has not been run on this tape");
    return nodes_[v.id].grad;
}

void Tape::backward(Var root) {
    if (root.tape != this) throw ContractError("backward: root is not on this tape");
    const Matrix& rv = nodes_[root.id].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw ContractError("backward: root must be 1x1, got " + rv.shape_str());
    }
    for (auto& n : nodes_) {
        if (n.grad.same_shape(n.value) && !n.grad.empty()) {
            n.grad.fill(0.0);
        } else {
            n.grad = Matrix(n.value.rows(), n.value.cols());
        }
    }
    nodes_[root.id].grad(0, 0) = 1.0;
    for (std::uint32_t id = root.id + 1; id-- > 0;) {
        accumulate_parents(id);
    }
    grads_valid_ = true;
}

void Tape::accumulate_parents(std::uint32_t id) {
    Node& n = nodes_[id];
    const Matrix& g = n.grad;
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::MatMul: {
            const Matrix& av = nodes_[n.a].value;
            const Matrix& bv = nodes_[n.b].value;
            matmul_nt_acc(g, bv, nodes_[n.a].grad);
            matmul_tn_acc(av, g, nodes_[n.b].grad);
            break;
        }
        case Op::SoftmaxRows: {
            const Matrix& y = n.value;
            Matrix& ga = nodes_[n.a].grad;
            for (std::size_t i = 0; i < y.rows(); ++i) {
                const double* yi = y.row(i);
                const double* gi = g.row(i);
                double dot = 0.0;
                for (std::size_t j = 0; j < y.cols(); ++j) dot += gi[j] * yi[j];
                double* gai = ga.row(i);
                for (std::size_t j = 0; j < y.cols(); ++j) gai[j] += yi[j] * (gi[j] - dot);
            }
            break;
        }
        case Op::Exp: {
            Matrix& ga = nodes_[n.a].grad;
            const Matrix& y = n.value;
            for (std::size_t i = 0; i < y.size(); ++i) ga.data()[i] += g.data()[i] * y.data()[i];
            break;
        }
        case Op::Log: {
            Matrix& ga = nodes_[n.a].grad;
            const Matrix& x = nodes_[n.a].value;
            for (std::size_t i = 0; i < x.size(); ++i) ga.data()[i] += g.data()[i] / x.data()[i];
            break;
        }
        case Op::Add: {
            Matrix& ga = nodes_[n.a].grad;
            Matrix& gb = nodes_[n.b].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga.data()[i] += g.data()[i];
                gb.data()[i] += g.data()[i];
            }
            break;
        }
        case Op::Sub: {
            Matrix& ga = nodes_[n.a].grad;
            Matrix& gb = nodes_[n.b].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga.data()[i] += g.data()[i];
                gb.data()[i] -= g.data()[i];
            }
            break;
        }
        case Op::MulScalar: {
            Matrix& ga = nodes_[n.a].grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += n.scalar * g.data()[i];
            break;
        }
        case Op::Hadamard: {
            Matrix& ga = nodes_[n.a].grad;
            Matrix& gb = nodes_[n.b].grad;
            const Matrix& av = nodes_[n.a].value;
            const Matrix& bv = nodes_[n.b].value;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga.data()[i] += g.data()[i] * bv.data()[i];
                gb.data()[i] += g.data()[i] * av.data()[i];
            }
            break;
        }
        case Op::Div: {
            Matrix& ga = nodes_[n.a].grad;
            Matrix& gb = nodes_[n.b].grad;
            const Matrix& bv = nodes_[n.b].value;
            const Matrix& y = n.value;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double gb_i = g.data()[i] / bv.data()[i];
                ga.data()[i] += gb_i;
                gb.data()[i] -= gb_i * y.data()[i];
            }
            break;
        }
        case Op::Square: {
            Matrix& ga = nodes_[n.a].grad;
            const Matrix& x = nodes_[n.a].value;
            for (std::size_t i = 0; i < g.size(); ++i)
                ga.data()[i] += 2.0 * g.data()[i] * x.data()[i];
            break;
        }
        case Op::Relu: {
            Matrix& ga = nodes_[n.a].grad;
            const Matrix& x = nodes_[n.a].value;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x.data()[i] > 0.0) ga.data()[i] += g.data()[i];
            break;
        }
        case Op::Tanh: {
            Matrix& ga = nodes_[n.a].grad;
            const Matrix& y = n.value;
            for (std::size_t i = 0; i < g.size(); ++i)
                ga.data()[i] += g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
            break;
        }
        case Op::Sqrt: {
            Matrix& ga = nodes_[n.a].grad;
            const Matrix& y = n.value;
            for (std::size_t i = 0; i < g.size(); ++i)
                ga.data()[i] += g.data()[i] * 0.5 / y.data()[i];
            break;
        }
        case Op::ClampMin: {
            Matrix& ga = nodes_[n.a].grad;
            const Matrix& x = nodes_[n.a].value;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x.data()[i] > n.scalar) ga.data()[i] += g.data()[i];
            break;
        }
        case Op::Sum: {
            Matrix& ga = nodes_[n.a].grad;
            const double gv = g(0, 0);
            for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += gv;
            break;
        }
        case Op::Mean: {
            Matrix& ga = nodes_[n.a].grad;
            const double gv = g(0, 0) / static_cast<double>(ga.size());
            for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += gv;
            break;
        }
        case Op::Transpose: {
            Matrix& ga = nodes_[n.a].grad;
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
            break;
        }
        case Op::ConcatRows: {
            Matrix& ga = nodes_[n.a].grad;
            Matrix& gb = nodes_[n.b].grad;
            for (std::size_t i = 0; i < ga.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += g(i, j);
            for (std::size_t i = 0; i < gb.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gb(i, j) += g(ga.rows() + i, j);
            break;
        }
        case Op::ConcatCols: {
            Matrix& ga = nodes_[n.a].grad;
            Matrix& gb = nodes_[n.b].grad;
            for (std::size_t i = 0; i < g.rows(); ++i) {
                for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(i, j);
                for (std::size_t j = 0; j < gb.cols(); ++j) gb(i, j) += g(i, ga.cols() + j);
            }
            break;
        }
        case Op::SliceRows: {
            Matrix& ga = nodes_[n.a].grad;
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) ga(n.i0 + i, j) += g(i, j);
            break;
        }
        case Op::LogSumExpRows: {
            Matrix& ga = nodes_[n.a].grad;
            const Matrix& x = nodes_[n.a].value;
            const Matrix& y = n.value; // n x 1
            for (std::size_t i = 0; i < x.rows(); ++i) {
                const double gi = g(i, 0);
                if (gi == 0.0) continue;
                const double* xi = x.row(i);
                double* gai = ga.row(i);
                for (std::size_t j = 0; j < x.cols(); ++j)
                    gai[j] += gi * std::exp(xi[j] - y(i, 0));
            }
            break;
        }
        case Op::NormalizeRows: {
            Matrix& ga = nodes_[n.a].grad;
            const Matrix& x = nodes_[n.a].value;
            const Matrix& y = n.value;
            const double eps = n.scalar;
            for (std::size_t i = 0; i < x.rows(); ++i) {
                const double* xi = x.row(i);
                const double* yi = y.row(i);
                const double* gi = g.row(i);
                double* gai = ga.row(i);
                double norm2 = 0.0;
                for (std::size_t j = 0; j < x.cols(); ++j) norm2 += xi[j] * xi[j];
                const double norm = std::sqrt(norm2);
                if (norm > eps) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < x.cols(); ++j) dot += gi[j] * yi[j];
                    for (std::size_t j = 0; j < x.cols(); ++j)
                        gai[j] += (gi[j] - dot * yi[j]) / norm;
                } else {
                    for (std::size_t j = 0; j < x.cols(); ++j) gai[j] += gi[j] / eps;
                }
            }
            break;
        }
    }
}

Var matmul(Var a, Var b) {
    require_same_tape(a, b, "matmul");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (av.cols() != bv.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " + av.shape_str() + " vs " +
                             bv.shape_str());
    }
    Tape::Node n;
    n.value = mmfuse::matmul(av, bv);
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    return t.push(std::move(n));
}

Var softmax_rows(Var m) {
    Tape& t = *m.tape;
    const Matrix& x = t.value(m);
    if (!x.all_finite()) throw NumericError("softmax_rows: input has non-finite entries");
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* xi = x.row(i);
        double* yi = y.row(i);
        double mx = xi[0];
        for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, xi[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            yi[j] = std::exp(xi[j] - mx);
            total += yi[j];
        }
        for (std::size_t j = 0; j < x.cols(); ++j) yi[j] /= total;
    }
    Tape::Node n;
    n.value = std::move(y);
    n.op = Op::SoftmaxRows;
    n.a = m.id;
    return t.push(std::move(n));
}

namespace {

template <typename F>
Var unary_map(Var m, Op op, F&& f, double scalar = 0.0) {
    Tape& t = *m.tape;
    const Matrix& x = t.value(m);
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = f(x.data()[i]);
    Tape::Node n;
    n.value = std::move(y);
    n.op = op;
    n.a = m.id;
    n.scalar = scalar;
    return t.push(std::move(n));
}

} // namespace

Var exp(Var m) {
    return unary_map(m, Op::Exp, [](double v) { return std::exp(v); });
}

Var log(Var m) {
    const Matrix& x = m.tape->value(m);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x.data()[i] > 0.0)) {
            throw NumericError("log: non-positive entry " + std::to_string(x.data()[i]));
        }
    }
    return unary_map(m, Op::Log, [](double v) { return std::log(v); });
}

Var add(Var a, Var b) {
    require_same_tape(a, b, "add");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    require_same_shape(av, bv, "add");
    Matrix y(av.rows(), av.cols());
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = av.data()[i] + bv.data()[i];
    Tape::Node n;
    n.value = std::move(y);
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    return t.push(std::move(n));
}

Var sub(Var a, Var b) {
    require_same_tape(a, b, "sub");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    require_same_shape(av, bv, "sub");
    Matrix y(av.rows(), av.cols());
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = av.data()[i] - bv.data()[i];
    Tape::Node n;
    n.value = std::move(y);
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    return t.push(std::move(n));
}

Var mul_scalar(Var m, double c) {
    return unary_map(m, Op::MulScalar, [c](double v) { return c * v; }, c);
}

Var hadamard(Var a, Var b) {
    require_same_tape(a, b, "hadamard");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    require_same_shape(av, bv, "hadamard");
    Matrix y(av.rows(), av.cols());
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = av.data()[i] * bv.data()[i];
    Tape::Node n;
    n.value = std::move(y);
    n.op = Op::Hadamard;
    n.a = a.id;
    n.b = b.id;
    return t.push(std::move(n));
}

Var divide(Var a, Var b) {
    require_same_tape(a, b, "divide");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    require_same_shape(av, bv, "divide");
    Matrix y(av.rows(), av.cols());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (bv.data()[i] == 0.0) throw NumericError("divide: zero denominator entry");
        y.data()[i] = av.data()[i] / bv.data()[i];
    }
    Tape::Node n;
    n.value = std::move(y);
    n.op = Op::Div;
    n.a = a.id;
    n.b = b.id;
    return t.push(std::move(n));
}

Var square(Var m) {
    return unary_map(m, Op::Square, [](double v) { return v * v; });
}

Var relu(Var m) {
    return unary_map(m, Op::Relu, [](double v) { return v > 0.0 ? v : 0.0; });
}

Var tanh(Var m) {
    return unary_map(m, Op::Tanh, [](double v) { return std::tanh(v); });
}

Var sqrt(Var m) {
    const Matrix& x = m.tape->value(m);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x.data()[i] < 0.0) {
            throw NumericError("sqrt: negative entry " + std::to_string(x.data()[i]));
        }
    }
    return unary_map(m, Op::Sqrt, [](double v) { return std::sqrt(v); });
}

Var clamp_min(Var m, double floor) {
    return unary_map(m, Op::ClampMin, [floor](double v) { return v > floor ? v : floor; }, floor);
}

Var sum(Var m) {
    Tape& t = *m.tape;
    const Matrix& x = t.value(m);
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) total += x.data()[i];
    Tape::Node n;
    n.value = Matrix(1, 1, total);
    n.op = Op::Sum;
    n.a = m.id;
    return t.push(std::move(n));
}

Var mean(Var m) {
    Tape& t = *m.tape;
    const Matrix& x = t.value(m);
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) total += x.data()[i];
    Tape::Node n;
    n.value = Matrix(1, 1, total / static_cast<double>(x.size()));
    n.op = Op::Mean;
    n.a = m.id;
    return t.push(std::move(n));
}

Var transpose(Var m) {
    Tape& t = *m.tape;
    Tape::Node n;
    n.value = mmfuse::transpose(t.value(m));
    n.op = Op::Transpose;
    n.a = m.id;
    return t.push(std::move(n));
}

Var concat_rows(Var a, Var b) {
    require_same_tape(a, b, "concat_rows");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (av.cols() != bv.cols()) {
        throw DimensionError("concat_rows: column counts differ, " + av.shape_str() + " vs " +
                             bv.shape_str());
    }
    Matrix y(av.rows() + bv.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) y(i, j) = av(i, j);
    for (std::size_t i = 0; i < bv.rows(); ++i)
        for (std::size_t j = 0; j < bv.cols(); ++j) y(av.rows() + i, j) = bv(i, j);
    Tape::Node n;
    n.value = std::move(y);
    n.op = Op::ConcatRows;
    n.a = a.id;
    n.b = b.id;
    return t.push(std::move(n));
}

Var concat_cols(Var a, Var b) {
    require_same_tape(a, b, "concat_cols");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (av.rows() != bv.rows()) {
        throw DimensionError("concat_cols: row counts differ, " + av.shape_str() + " vs " +
                             bv.shape_str());
    }
    Matrix y(av.rows(), av.cols() + bv.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        for (std::size_t j = 0; j < av.cols(); ++j) y(i, j) = av(i, j);
        for (std::size_t j = 0; j < bv.cols(); ++j) y(i, av.cols() + j) = bv(i, j);
    }
    Tape::Node n;
    n.value = std::move(y);
    n.op = Op::ConcatCols;
    n.a = a.id;
    n.b = b.id;
    return t.push(std::move(n));
}

Var slice_rows(Var m, std::size_t begin, std::size_t end) {
    Tape& t = *m.tape;
    const Matrix& x = t.value(m);
    if (begin >= end || end > x.rows()) {
        throw ContractError("slice_rows: range [" + std::to_string(begin) + ", " +
                            std::to_string(end) + ") invalid for " + x.shape_str());
    }
    Matrix y(end - begin, x.cols());
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) = x(begin + i, j);
    Tape::Node n;
    n.value = std::move(y);
    n.op = Op::SliceRows;
    n.a = m.id;
    n.i0 = static_cast<std::uint32_t>(begin);
    n.i1 = static_cast<std::uint32_t>(end);
    return t.push(std::move(n));
}

Var logsumexp_rows(Var m) {
    Tape& t = *m.tape;
    const Matrix& x = t.value(m);
    if (!x.all_finite()) throw NumericError("logsumexp_rows: input has non-finite entries");
    Matrix y(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* xi = x.row(i);
        double mx = xi[0];
        for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, xi[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) total += std::exp(xi[j] - mx);
        y(i, 0) = mx + std::log(total);
    }
    Tape::Node n;
    n.value = std::move(y);
    n.op = Op::LogSumExpRows;
    n.a = m.id;
    return t.push(std::move(n));
}

Var normalize_rows(Var m, double eps) {
    Tape& t = *m.tape;
    const Matrix& x = t.value(m);
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* xi = x.row(i);
        double* yi = y.row(i);
        double norm2 = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) norm2 += xi[j] * xi[j];
        const double denom = std::max(std::sqrt(norm2), eps);
        for (std::size_t j = 0; j < x.cols(); ++j) yi[j] = xi[j] / denom;
    }
    Tape::Node n;
    n.value = std::move(y);
    n.op = Op::NormalizeRows;
    n.a = m.id;
    n.scalar = eps;
    return t.push(std::move(n));
}

} // namespace mmfuse
