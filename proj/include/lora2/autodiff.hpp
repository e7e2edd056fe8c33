#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "lora2/tensor.hpp"

namespace lora2 {

class Tape;

// Handle to a tape node. Cheap to copy; valid until the tape is rewound past it.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order, so creation order is already topological. Single-threaded per
// training run; values are immutable once an op wrote them (leaf values may
// be mutated between passes by the optimizer).
class Tape {
public:
    enum class Op : std::uint8_t {
        Leaf,
        MatMul,
        Transpose,
        Add,
        Sub,
        Scale,
        Exp,
        Log,
        Abs,
        Square,
        SoftmaxRows,
        SumAll,
        MeanAll,
        DiagLMul,
        SliceRows,
        SliceCols,
        ConcatRows,
        ConcatCols,
    };

    struct Node {
        Op op = Op::Leaf;
        int a = -1;
        int b = -1;
        double factor = 0.0;   // Scale
        std::size_t i0 = 0;    // slice bounds
        std::size_t i1 = 0;
        bool requires_grad = false;
        Tensor value;
        Tensor grad;
    };

    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var scalar(double v, bool requires_grad = false) {
        return leaf(Tensor::scalar(v), requires_grad);
    }

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node
    // reachable below `loss` that requires them. Does not clear first, so
    // repeated calls accumulate.
    void backward(Var loss);

    void zero_grads();

    std::size_t mark() const { return nodes_.size(); }
    void rewind(std::size_t m);

    std::size_t node_count() const { return nodes_.size(); }

    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    // Leaf-value mutation for the optimizer / resize machinery.
    Tensor& leaf_value(Var v);

    friend Var matmul(Var a, Var b);
    friend Var transpose(Var a);
    friend Var add(Var a, Var b);
    friend Var sub(Var a, Var b);
    friend Var scale(Var a, double s);
    friend Var exp(Var a);
    friend Var log(Var a);
    friend Var abs(Var a);
    friend Var square(Var a);
    friend Var softmax_rows(Var a);
    friend Var sum_all(Var a);
    friend Var mean_all(Var a);
    friend Var diag_lmul(Var d, Var x);
    friend Var slice_rows(Var a, std::size_t r0, std::size_t r1);
    friend Var slice_cols(Var a, std::size_t c0, std::size_t c1);
    friend Var concat_rows(Var a, Var b);
    friend Var concat_cols(Var a, Var b);

private:
    int push(Node n);
    Var emit(Op op, Var a, Var b, Tensor value, double factor = 0.0, std::size_t i0 = 0,
             std::size_t i1 = 0);
    void backward_node(int id, std::vector<Tensor>& adjoint);

    // deque keeps node references stable across appends, so Tensor references
    // handed out by value()/grad() survive later op construction
    std::deque<Node> nodes_;
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var square(Var a);
Var softmax_rows(Var a);
Var sum_all(Var a);
Var mean_all(Var a);
Var diag_lmul(Var d, Var x);
Var slice_rows(Var a, std::size_t r0, std::size_t r1);
Var slice_cols(Var a, std::size_t c0, std::size_t c1);
Var concat_rows(Var a, Var b);
Var concat_cols(Var a, Var b);

// Scalar function of one tensor input, built fresh on the given tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// h must lie in [1e-7, 1e-3]; throws EvalError if f(x) is non-finite.
double grad_check(const ScalarFn& f, const Tensor& x, double h);

} // namespace lora2
