#pragma once

#include <cstdint>
#include <vector>

#include "mmfuse/matrix.hpp"

namespace mmfuse {

class Tape;

// Handle to a node on a tape. Cheap to copy; the tape owns all storage.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    bool valid() const { return tape != nullptr; }
    const Matrix& value() const;
    const Matrix& grad() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    SoftmaxRows,
    Exp,
    Log,
    Add,
    Sub,
    MulScalar,
    Hadamard,
    Div,
    Square,
    Relu,
    Tanh,
    Sqrt,
    ClampMin,
    Sum,
    Mean,
    Transpose,
    ConcatRows,
    ConcatCols,
    SliceRows,
    LogSumExpRows,
    NormalizeRows,
};

// Reverse-mode tape over dense 2-D matrices. Nodes are recorded in creation
// order, which is already topological; backward() runs the reverse sweep.
// A tape is confined to one thread; independent tapes may run concurrently.
class Tape {
public:
    struct Node {
        Matrix value;
        Matrix grad; // allocated lazily by backward()
        Op op = Op::Leaf;
        std::uint32_t a = 0;
        std::uint32_t b = 0;
        double scalar = 0.0;
        std::uint32_t i0 = 0;
        std::uint32_t i1 = 0;
    };

    Var leaf(Matrix value);
    // A constant participates in the graph but its gradient is never read.
    Var constant(Matrix value) { return leaf(std::move(value)); }

    // Seeds the 1x1 root with 1.0, zeroes every gradient first, then
    // accumulates parent gradients in reverse topological order.
    void backward(Var root);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    const Matrix& grad(Var v) const;

    std::size_t size() const { return nodes_.size(); }
    void reserve(std::size_t n) { nodes_.reserve(n); }

    // Op constructors use this; not part of the public contract.
    Var push(Node node);

private:
    void accumulate_parents(std::uint32_t id);

    std::vector<Node> nodes_;
    bool grads_valid_ = false;
};

Var matmul(Var a, Var b);
Var softmax_rows(Var m);
Var exp(Var m);
Var log(Var m);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul_scalar(Var m, double c);
Var hadamard(Var a, Var b);
Var divide(Var a, Var b);
Var square(Var m);
Var relu(Var m);
Var tanh(Var m);
Var sqrt(Var m);
Var clamp_min(Var m, double floor);
Var sum(Var m);
Var mean(Var m);
Var transpose(Var m);
Var concat_rows(Var a, Var b);
Var concat_cols(Var a, Var b);
Var slice_rows(Var m, std::size_t begin, std::size_t end);
// Row-wise log(sum(exp(.))) with max subtraction; returns an n x 1 column.
Var logsumexp_rows(Var m);
// Rows scaled to unit L2 norm; norms below eps are clamped to eps.
Var normalize_rows(Var m, double eps = 1e-12);

} // namespace mmfuse
