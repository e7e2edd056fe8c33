#include "lora2/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "lora2/error.hpp"

namespace lora2 {

const Tensor& Var::value() const { return tape->node(id).value; }
const Tensor& Var::grad() const { return tape->node(id).grad; }
bool Var::requires_grad() const { return tape->node(id).requires_grad; }

namespace {

void check_same_tape(Var a, Var b, const char* op) {
    if (a.tape != b.tape)
        throw ContractError(std::string(op) + ": operands live on different tapes");
}

// C += A * B with optional transposes. Plain triple loop; matrices here stay small.
void gemm_acc(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c) {
    const std::size_t m = ta ? a.cols : a.rows;
    const std::size_t k = ta ? a.rows : a.cols;
    const std::size_t n = tb ? b.rows : b.cols;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ta ? a.at(p, i) : a.at(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                const double bv = tb ? b.at(j, p) : b.at(p, j);
                c.at(i, j) += av * bv;
            }
        }
    }
}

Tensor gemm(const Tensor& a, const Tensor& b) {
    Tensor c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t p = 0; p < a.cols; ++p) {
            const double av = a.at(i, p);
            for (std::size_t j = 0; j < b.cols; ++j) c.at(i, j) += av * b.at(p, j);
        }
    return c;
}

} // namespace

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    n.grad = Tensor(value.rows, value.cols);
    n.value = std::move(value);
    return Var{this, push(std::move(n))};
}

Var Tape::emit(Op op, Var a, Var b, Tensor value, double factor, std::size_t i0,
               std::size_t i1) {
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.valid() ? b.id : -1;
    n.factor = factor;
    n.i0 = i0;
    n.i1 = i1;
    n.requires_grad = a.requires_grad() || (b.valid() && b.requires_grad());
    n.grad = Tensor(value.rows, value.cols);
    n.value = std::move(value);
    return Var{this, push(std::move(n))};
}

Tensor& Tape::leaf_value(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.op != Op::Leaf) throw ContractError("leaf_value: node is not a leaf");
    return n.value;
}

void Tape::zero_grads() {
    for (Node& n : nodes_) n.grad.fill(0.0);
}

void Tape::rewind(std::size_t m) {
    if (m > nodes_.size()) throw ContractError("rewind: mark beyond tape end");
    nodes_.resize(m);
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: loss from another tape");
    Node& top = nodes_[static_cast<std::size_t>(loss.id)];
    if (top.value.size() != 1)
        throw ContractError("backward: loss must be scalar, got " + top.value.shape_str());

    // Fresh adjoints per call, accumulated into the persistent grads at the
    // end, so repeated calls add one d(loss)/d(value) each time.
    std::vector<Tensor> adjoint(static_cast<std::size_t>(loss.id) + 1);
    adjoint[static_cast<std::size_t>(loss.id)] = Tensor::scalar(1.0);
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        Tensor& adj = adjoint[static_cast<std::size_t>(id)];
        if (adj.size() == 0) continue; // not an ancestor of the loss
        if (!n.requires_grad) continue;
        for (std::size_t i = 0; i < adj.data.size(); ++i) n.grad.data[i] += adj.data[i];
        backward_node(id, adjoint);
    }
}

namespace {

Tensor& adj_slot(std::vector<Tensor>& adjoint, int id, const Tensor& shape_like) {
    Tensor& t = adjoint[static_cast<std::size_t>(id)];
    if (t.size() == 0) t = Tensor(shape_like.rows, shape_like.cols);
    return t;
}

} // namespace

void Tape::backward_node(int id, std::vector<Tensor>& adjoint) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == Op::Leaf) return;
    Node& na = nodes_[static_cast<std::size_t>(n.a)];
    Node* nb = n.b >= 0 ? &nodes_[static_cast<std::size_t>(n.b)] : nullptr;
    const Tensor& g = adjoint[static_cast<std::size_t>(id)];
    const bool need_a = na.requires_grad;
    const bool need_b = nb != nullptr && nb->requires_grad;

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::MatMul:
            if (need_a) gemm_acc(g, false, nb->value, true, adj_slot(adjoint, n.a, na.value));
            if (need_b) gemm_acc(na.value, true, g, false, adj_slot(adjoint, n.b, nb->value));
            break;
        case Op::Transpose:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j) ga.at(j, i) += g.at(i, j);
            }
            break;
        case Op::Add:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            }
            if (need_b) {
                Tensor& gb = adj_slot(adjoint, n.b, nb->value);
                for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
            }
            break;
        case Op::Sub:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            }
            if (need_b) {
                Tensor& gb = adj_slot(adjoint, n.b, nb->value);
                for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
            }
            break;
        case Op::Scale:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += n.factor * g.data[i];
            }
            break;
        case Op::Exp:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] * n.value.data[i];
            }
            break;
        case Op::Log:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] / na.value.data[i];
            }
            break;
        case Op::Abs:
            // sign(0) = 0 convention, matching the L1 subgradient contract
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    const double x = na.value.data[i];
                    const double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                    ga.data[i] += g.data[i] * s;
                }
            }
            break;
        case Op::Square:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] * 2.0 * na.value.data[i];
            }
            break;
        case Op::SoftmaxRows:
            // dz_j = p_j * (g_j - sum_k g_k p_k), per row
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.rows; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < g.cols; ++j)
                        dot += g.at(i, j) * n.value.at(i, j);
                    for (std::size_t j = 0; j < g.cols; ++j)
                        ga.at(i, j) += n.value.at(i, j) * (g.at(i, j) - dot);
                }
            }
            break;
        case Op::SumAll:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (double& gv : ga.data) gv += g.data[0];
            }
            break;
        case Op::MeanAll:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                const double inv = 1.0 / static_cast<double>(na.value.size());
                for (double& gv : ga.data) gv += g.data[0] * inv;
            }
            break;
        case Op::DiagLMul: {
            // out = diag(d) * x, a = d (vector), b = x
            Tensor* ga = need_a ? &adj_slot(adjoint, n.a, na.value) : nullptr;
            Tensor* gb = need_b ? &adj_slot(adjoint, n.b, nb->value) : nullptr;
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = 0; j < g.cols; ++j) {
                    if (ga) ga->data[i] += g.at(i, j) * nb->value.at(i, j);
                    if (gb) gb->at(i, j) += na.value.data[i] * g.at(i, j);
                }
            break;
        }
        case Op::SliceRows:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j) ga.at(n.i0 + i, j) += g.at(i, j);
            }
            break;
        case Op::SliceCols:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j) ga.at(i, n.i0 + j) += g.at(i, j);
            }
            break;
        case Op::ConcatRows:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < na.value.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j) ga.at(i, j) += g.at(i, j);
            }
            if (need_b) {
                Tensor& gb = adj_slot(adjoint, n.b, nb->value);
                for (std::size_t i = 0; i < nb->value.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j)
                        gb.at(i, j) += g.at(na.value.rows + i, j);
            }
            break;
        case Op::ConcatCols:
            if (need_a) {
                Tensor& ga = adj_slot(adjoint, n.a, na.value);
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < na.value.cols; ++j) ga.at(i, j) += g.at(i, j);
            }
            if (need_b) {
                Tensor& gb = adj_slot(adjoint, n.b, nb->value);
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < nb->value.cols; ++j)
                        gb.at(i, j) += g.at(i, na.value.cols + j);
            }
            break;
    }
}

Var matmul(Var a, Var b) {
    check_same_tape(a, b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols != bv.rows)
        throw ShapeError("matmul: inner dimensions disagree " + av.shape_str() + " vs " +
                         bv.shape_str());
    return a.tape->emit(Tape::Op::MatMul, a, b, gemm(av, bv));
}

Var transpose(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.cols, av.rows);
    for (std::size_t i = 0; i < av.rows; ++i)
        for (std::size_t j = 0; j < av.cols; ++j) out.at(j, i) = av.at(i, j);
    return a.tape->emit(Tape::Op::Transpose, a, Var{}, std::move(out));
}

Var add(Var a, Var b) {
    check_same_tape(a, b, "add");
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.value().data[i];
    return a.tape->emit(Tape::Op::Add, a, b, std::move(out));
}

Var sub(Var a, Var b) {
    check_same_tape(a, b, "sub");
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.value().data[i];
    return a.tape->emit(Tape::Op::Sub, a, b, std::move(out));
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    for (double& v : out.data) v *= s;
    return a.tape->emit(Tape::Op::Scale, a, Var{}, std::move(out), s);
}

Var exp(Var a) {
    Tensor out = a.value();
    for (double& v : out.data) v = std::exp(v);
    return a.tape->emit(Tape::Op::Exp, a, Var{}, std::move(out));
}

Var log(Var a) {
    Tensor out = a.value();
    for (double& v : out.data) v = std::log(v);
    return a.tape->emit(Tape::Op::Log, a, Var{}, std::move(out));
}

Var abs(Var a) {
    Tensor out = a.value();
    for (double& v : out.data) v = std::abs(v);
    return a.tape->emit(Tape::Op::Abs, a, Var{}, std::move(out));
}

Var square(Var a) {
    Tensor out = a.value();
    for (double& v : out.data) v *= v;
    return a.tape->emit(Tape::Op::Square, a, Var{}, std::move(out));
}

Var softmax_rows(Var a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.rows; ++i) {
        double m = out.at(i, 0);
        for (std::size_t j = 1; j < out.cols; ++j) m = std::max(m, out.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < out.cols; ++j) {
            out.at(i, j) = std::exp(out.at(i, j) - m);
            sum += out.at(i, j);
        }
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) /= sum;
    }
    return a.tape->emit(Tape::Op::SoftmaxRows, a, Var{}, std::move(out));
}

Var sum_all(Var a) {
    double s = 0.0;
    for (double v : a.value().data) s += v;
    return a.tape->emit(Tape::Op::SumAll, a, Var{}, Tensor::scalar(s));
}

Var mean_all(Var a) {
    double s = 0.0;
    for (double v : a.value().data) s += v;
    s /= static_cast<double>(a.value().size());
    return a.tape->emit(Tape::Op::MeanAll, a, Var{}, Tensor::scalar(s));
}

Var diag_lmul(Var d, Var x) {
    check_same_tape(d, x, "diag_lmul");
    const Tensor& dv = d.value();
    const Tensor& xv = x.value();
    if (dv.rows != 1 && dv.cols != 1)
        throw ShapeError("diag_lmul: d must be a vector, got " + dv.shape_str());
    if (dv.size() != xv.rows)
        throw ShapeError("diag_lmul: diagonal length " + dv.shape_str() +
                         " does not match rows of " + xv.shape_str());
    Tensor out = xv;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) *= dv.data[i];
    return d.tape->emit(Tape::Op::DiagLMul, d, x, std::move(out));
}

Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
    const Tensor& av = a.value();
    if (r0 >= r1 || r1 > av.rows)
        throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") on " + av.shape_str());
    Tensor out(r1 - r0, av.cols);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) = av.at(r0 + i, j);
    return a.tape->emit(Tape::Op::SliceRows, a, Var{}, std::move(out), 0.0, r0, r1);
}

Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Tensor& av = a.value();
    if (c0 >= c1 || c1 > av.cols)
        throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") on " + av.shape_str());
    Tensor out(av.rows, c1 - c0);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) = av.at(i, c0 + j);
    return a.tape->emit(Tape::Op::SliceCols, a, Var{}, std::move(out), 0.0, c0, c1);
}

Var concat_rows(Var a, Var b) {
    check_same_tape(a, b, "concat_rows");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols != bv.cols)
        throw ShapeError("concat_rows: column mismatch " + av.shape_str() + " vs " +
                         bv.shape_str());
    Tensor out(av.rows + bv.rows, av.cols);
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.data.size());
    return a.tape->emit(Tape::Op::ConcatRows, a, b, std::move(out));
}

Var concat_cols(Var a, Var b) {
    check_same_tape(a, b, "concat_cols");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rows != bv.rows)
        throw ShapeError("concat_cols: row mismatch " + av.shape_str() + " vs " +
                         bv.shape_str());
    Tensor out(av.rows, av.cols + bv.cols);
    for (std::size_t i = 0; i < av.rows; ++i) {
        for (std::size_t j = 0; j < av.cols; ++j) out.at(i, j) = av.at(i, j);
        for (std::size_t j = 0; j < bv.cols; ++j) out.at(i, av.cols + j) = bv.at(i, j);
    }
    return a.tape->emit(Tape::Op::ConcatCols, a, b, std::move(out));
}

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
    if (h < 1e-7 || h > 1e-3)
        throw DomainError("grad_check: h must lie in [1e-7, 1e-3]");

    Tape tape;
    Var leaf = tape.leaf(x, true);
    Var loss = f(tape, leaf);
    if (loss.value().size() != 1)
        throw ContractError("grad_check: f must return a scalar");
    if (!std::isfinite(loss.value().data[0]))
        throw EvalError("grad_check: f(x) is non-finite");
    tape.backward(loss);
    const Tensor analytic = leaf.grad();

    auto eval = [&](const Tensor& xt) {
        Tape t;
        Var l = t.leaf(xt, false);
        Var out = f(t, l);
        const double v = out.value().data[0];
        if (!std::isfinite(v)) throw EvalError("grad_check: perturbed f(x) is non-finite");
        return v;
    };

    double worst = 0.0;
    Tensor xp = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double orig = x.data[i];
        xp.data[i] = orig + h;
        const double fp = eval(xp);
        xp.data[i] = orig - h;
        const double fm = eval(xp);
        xp.data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max(1.0, std::abs(analytic.data[i]));
        worst = std::max(worst, std::abs(analytic.data[i] - numeric) / denom);
    }
    return worst;
}

} // namespace lora2
