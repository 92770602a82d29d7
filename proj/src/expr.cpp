#include "jointdist/expr.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "jointdist/errors.hpp"
#include "jointdist/special_math.hpp"

namespace jointdist {

Variable::Variable(std::string name, Tensor value, bool trainable)
    : name_(std::move(name)), value_(std::move(value)), trainable_(trainable) {
    if (value_.dtype() != DType::Real64) {
        throw DomainError("variable '" + name_ + "' must be real64");
    }
}

void Variable::assign(const Tensor& value) {
    if (value.dtype() != value_.dtype() || !(value.shape() == value_.shape())) {
        throw ShapeError("assignment to variable '" + name_ + "' of shape " +
                         value_.shape().str() + " with " + dtype_name(value.dtype()) +
                         value.shape().str());
    }
    value_ = value;
}

VariablePtr make_variable(std::string name, Tensor value, bool trainable) {
    return std::make_shared<Variable>(std::move(name), std::move(value), trainable);
}

struct ExprNode {
    Op op = Op::Constant;
    std::vector<std::shared_ptr<const ExprNode>> inputs;
    Shape shape;
    DType dtype = DType::Real64;

    Tensor value;     // Constant
    VariablePtr var;  // VarRef

    bool adjoint_a = false, adjoint_b = false;  // MatMul
    std::vector<int64_t> axes;                  // ReduceSum (payload axes, normalized)
    bool keep_dims = false;
    std::vector<SlicePiece> pieces;  // Slice (payload axes)
    std::vector<int64_t> perm;       // Transpose (payload axes)
};

namespace {

using NodePtr = std::shared_ptr<const ExprNode>;

const char* op_name(Op op) {
    switch (op) {
        case Op::Constant: return "constant";
        case Op::VarRef: return "variable";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Neg: return "neg";
        case Op::Log: return "log";
        case Op::Exp: return "exp";
        case Op::Sqrt: return "sqrt";
        case Op::Square: return "square";
        case Op::Softplus: return "softplus";
        case Op::Sigmoid: return "sigmoid";
        case Op::Lgamma: return "lgamma";
        case Op::Digamma: return "digamma";
        case Op::Round: return "round";
        case Op::WidenToReal: return "widen_to_real";
        case Op::MatMul: return "matmul";
        case Op::ReduceSum: return "reduce_sum";
        case Op::Slice: return "slice";
        case Op::Reshape: return "reshape";
        case Op::Transpose: return "transpose";
    }
    return "?";
}

}  // namespace

Expr wrap_node(NodePtr node, bool batched) {
    Expr e;
    e.node_ = std::move(node);
    e.batched_ = batched;
    return e;
}

Expr::Expr(double scalar_constant) : Expr(Expr::constant(Tensor::scalar(scalar_constant))) {}

Expr::Expr(const Tensor& constant) : Expr(Expr::constant(constant)) {}

Expr Expr::constant(Tensor value) {
    auto n = std::make_shared<ExprNode>();
    n->op = Op::Constant;
    n->shape = value.shape();
    n->dtype = value.dtype();
    n->value = std::move(value);
    return wrap_node(std::move(n), false);
}

Expr Expr::variable(VariablePtr v) {
    if (!v) throw Error("null variable");
    auto n = std::make_shared<ExprNode>();
    n->op = Op::VarRef;
    n->shape = v->value().shape();
    n->dtype = v->value().dtype();
    n->var = std::move(v);
    return wrap_node(std::move(n), false);
}

const Shape& Expr::shape() const {
    if (!node_) throw Error("use of an undefined expression");
    return node_->shape;
}

DType Expr::dtype() const {
    if (!node_) throw Error("use of an undefined expression");
    return node_->dtype;
}

Expr Expr::as_batched() const {
    if (!node_) throw Error("use of an undefined expression");
    if (node_->shape.rank() < 1) {
        throw ShapeError("a batched expression needs at least one leading axis");
    }
    Expr e = *this;
    e.batched_ = true;
    return e;
}

Expr Expr::as_plain() const {
    if (!node_) throw Error("use of an undefined expression");
    Expr e = *this;
    e.batched_ = false;
    return e;
}

Tensor Expr::eval() const {
    EvalContext ctx;
    return ctx.eval(*this);
}

bool Expr::is_constant_graph() const {
    if (!node_) throw Error("use of an undefined expression");
    std::vector<const ExprNode*> stack = {node_.get()};
    std::unordered_set<const ExprNode*> seen;
    while (!stack.empty()) {
        const ExprNode* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        if (n->op == Op::VarRef) return false;
        for (const auto& in : n->inputs) stack.push_back(in.get());
    }
    return true;
}

Shape visible_shape(const Expr& e) {
    const Shape& s = e.shape();
    return e.batched() ? s.suffix(s.rank() - 1) : s;
}

int64_t batch_extent(const Expr& e) {
    if (!e.batched()) throw Error("batch_extent of a non-batched expression");
    return e.shape().dim(0);
}

namespace {

void require_real(const Expr& e, const char* where) {
    if (e.dtype() != DType::Real64) {
        throw DomainError(std::string(where) + " requires real64 input; use widen_to_real for " +
                          "int64 tensors");
    }
}

int64_t visible_rank(const Expr& e) { return e.shape().rank() - (e.batched() ? 1 : 0); }

// Shared hidden-axis extent across batched arguments.
int64_t common_batch_extent(std::initializer_list<const Expr*> args) {
    int64_t n = -1;
    for (const Expr* a : args) {
        if (!a->batched()) continue;
        const int64_t an = batch_extent(*a);
        if (n == -1) {
            n = an;
        } else if (n != an) {
            throw ShapeError("mixed hidden batch sizes " + std::to_string(n) + " and " +
                             std::to_string(an) + " in one expression");
        }
    }
    return n;
}

NodePtr make_op(Op op, std::vector<Expr> inputs, Shape shape, DType dtype = DType::Real64) {
    auto n = std::make_shared<ExprNode>();
    n->op = op;
    n->inputs.reserve(inputs.size());
    for (const Expr& e : inputs) n->inputs.push_back(e.node());
    n->shape = std::move(shape);
    n->dtype = dtype;
    return n;
}

Expr reshape_payload(const Expr& x, Shape target, bool batched) {
    auto n = make_op(Op::Reshape, {x}, target, x.dtype());
    if (x.shape().num_elements() != target.num_elements()) {
        throw ShapeError("cannot reshape " + x.shape().str() + " to " + target.str());
    }
    return wrap_node(std::move(n), batched);
}

// Pads a batched argument's payload with unit axes directly after the hidden
// axis so that its visible rank becomes `target_visible_rank`. Plain
// arguments never need padding: their rank is at most the visible rank, so
// right-aligned broadcasting cannot touch the hidden axis.
Expr align_batched_arg(const Expr& e, int64_t target_visible_rank) {
    if (!e.batched()) return e;
    const int64_t vr = visible_rank(e);
    if (vr >= target_visible_rank) return e;
    std::vector<int64_t> dims;
    dims.push_back(e.shape().dim(0));
    for (int64_t i = 0; i < target_visible_rank - vr; ++i) dims.push_back(1);
    for (int64_t i = 1; i < e.shape().rank(); ++i) dims.push_back(e.shape().dims()[(size_t)i]);
    return reshape_payload(e, Shape(std::move(dims)), true);
}

Expr binary_elementwise(Op op, const Expr& a, const Expr& b) {
    require_real(a, op_name(op));
    require_real(b, op_name(op));
    if (!a.batched() && !b.batched()) {
        Shape out = broadcast_shapes(a.shape(), b.shape());
        return wrap_node(make_op(op, {a, b}, std::move(out)), false);
    }
    common_batch_extent({&a, &b});
    const int64_t r = std::max(visible_rank(a), visible_rank(b));
    const Expr a2 = align_batched_arg(a, r);
    const Expr b2 = align_batched_arg(b, r);
    Shape out = broadcast_shapes(a2.shape(), b2.shape());
    return wrap_node(make_op(op, {a2, b2}, std::move(out)), true);
}

Expr unary_elementwise(Op op, const Expr& x) {
    require_real(x, op_name(op));
    return wrap_node(make_op(op, {x}, x.shape()), x.batched());
}

}  // namespace

Expr add(const Expr& a, const Expr& b) { return binary_elementwise(Op::Add, a, b); }
Expr sub(const Expr& a, const Expr& b) { return binary_elementwise(Op::Sub, a, b); }
Expr mul(const Expr& a, const Expr& b) { return binary_elementwise(Op::Mul, a, b); }
Expr div(const Expr& a, const Expr& b) { return binary_elementwise(Op::Div, a, b); }
Expr neg(const Expr& x) { return unary_elementwise(Op::Neg, x); }
Expr log(const Expr& x) { return unary_elementwise(Op::Log, x); }
Expr exp(const Expr& x) { return unary_elementwise(Op::Exp, x); }
Expr sqrt(const Expr& x) { return unary_elementwise(Op::Sqrt, x); }
Expr square(const Expr& x) { return unary_elementwise(Op::Square, x); }
Expr softplus(const Expr& x) { return unary_elementwise(Op::Softplus, x); }
Expr sigmoid(const Expr& x) { return unary_elementwise(Op::Sigmoid, x); }
Expr lgamma(const Expr& x) { return unary_elementwise(Op::Lgamma, x); }
Expr digamma(const Expr& x) { return unary_elementwise(Op::Digamma, x); }
Expr round(const Expr& x) { return unary_elementwise(Op::Round, x); }

Expr widen_to_real(const Expr& x) {
    if (x.dtype() == DType::Real64) return x;
    return wrap_node(make_op(Op::WidenToReal, {x}, x.shape(), DType::Real64), x.batched());
}

Expr matmul(const Expr& a, const Expr& b, bool adjoint_a, bool adjoint_b) {
    require_real(a, "matmul");
    require_real(b, "matmul");
    if (!a.batched() && !b.batched()) {
        Shape out = matmul_result_shape(a.shape(), b.shape(), adjoint_a, adjoint_b);
        auto n = make_op(Op::MatMul, {a, b}, std::move(out));
        auto m = std::const_pointer_cast<ExprNode>(n);
        m->adjoint_a = adjoint_a;
        m->adjoint_b = adjoint_b;
        return wrap_node(std::move(n), false);
    }
    if (visible_rank(a) < 2 || visible_rank(b) < 2) {
        throw ShapeError("matmul requires rank >= 2 operands");
    }
    common_batch_extent({&a, &b});
    const int64_t lead = std::max(visible_rank(a), visible_rank(b)) - 2;
    const Expr a2 = align_batched_arg(a, lead + 2);
    const Expr b2 = align_batched_arg(b, lead + 2);
    Shape out = matmul_result_shape(a2.shape(), b2.shape(), adjoint_a, adjoint_b);
    auto n = make_op(Op::MatMul, {a2, b2}, std::move(out));
    auto m = std::const_pointer_cast<ExprNode>(n);
    m->adjoint_a = adjoint_a;
    m->adjoint_b = adjoint_b;
    return wrap_node(std::move(n), true);
}

namespace {

Expr reduce_sum_payload(const Expr& x, std::vector<int64_t> payload_axes, bool keep_dims,
                        bool batched) {
    require_real(x, "reduce_sum");
    // Normalize and check distinctness against the payload rank.
    std::vector<int64_t> axes;
    std::vector<bool> seen(static_cast<size_t>(x.shape().rank()), false);
    for (int64_t a : payload_axes) {
        const int64_t n = normalize_axis(a, x.shape().rank());
        if (seen[static_cast<size_t>(n)]) {
            throw ShapeError("duplicate reduction axis " + std::to_string(a));
        }
        seen[static_cast<size_t>(n)] = true;
        axes.push_back(n);
    }
    std::sort(axes.begin(), axes.end());
    std::vector<int64_t> out_dims;
    for (int64_t i = 0; i < x.shape().rank(); ++i) {
        const bool reduced = seen[static_cast<size_t>(i)];
        if (reduced && keep_dims) out_dims.push_back(1);
        if (!reduced) out_dims.push_back(x.shape().dims()[static_cast<size_t>(i)]);
    }
    auto n = make_op(Op::ReduceSum, {x}, Shape(std::move(out_dims)));
    auto m = std::const_pointer_cast<ExprNode>(n);
    m->axes = std::move(axes);
    m->keep_dims = keep_dims;
    return wrap_node(std::move(n), batched);
}

}  // namespace

Expr reduce_sum(const Expr& x) {
    std::vector<int64_t> axes;
    const int64_t first = x.batched() ? 1 : 0;
    for (int64_t i = first; i < x.shape().rank(); ++i) axes.push_back(i);
    return reduce_sum_payload(x, std::move(axes), false, x.batched());
}

Expr reduce_sum(const Expr& x, const std::vector<int64_t>& axes, bool keep_dims) {
    std::vector<int64_t> payload_axes;
    for (int64_t a : axes) {
        // Non-negative user axes shift past the hidden axis; negative axes
        // address from the end and stay valid as-is.
        payload_axes.push_back(a >= 0 && x.batched() ? a + 1 : a);
    }
    return reduce_sum_payload(x, std::move(payload_axes), keep_dims, x.batched());
}

Expr slice(const Expr& x, const std::vector<SlicePiece>& pieces) {
    std::vector<SlicePiece> payload = pieces;
    if (x.batched()) {
        for (SlicePiece& p : payload) {
            if (p.axis >= 0) p.axis += 1;
        }
    }
    Shape out = slice_result_shape(x.shape(), payload);
    auto n = make_op(Op::Slice, {x}, std::move(out), x.dtype());
    auto m = std::const_pointer_cast<ExprNode>(n);
    m->pieces = std::move(payload);
    return wrap_node(std::move(n), x.batched());
}

Expr reshape(const Expr& x, const Shape& target) {
    if (!x.batched()) return reshape_payload(x, target, false);
    return reshape_payload(x, Shape{std::vector<int64_t>{x.shape().dim(0)}}.concat(target), true);
}

Expr transpose(const Expr& x, const std::vector<int64_t>& perm) {
    std::vector<int64_t> payload;
    const int64_t vr = visible_rank(x);
    if (x.batched()) payload.push_back(0);
    for (int64_t p : perm) {
        const int64_t n = normalize_axis(p, vr);
        payload.push_back(x.batched() ? n + 1 : n);
    }
    if (static_cast<int64_t>(perm.size()) != vr) {
        throw ShapeError("permutation size does not match rank");
    }
    std::vector<int64_t> out_dims;
    for (int64_t p : payload) out_dims.push_back(x.shape().dims()[static_cast<size_t>(p)]);
    auto n = make_op(Op::Transpose, {x}, Shape(std::move(out_dims)), x.dtype());
    auto m = std::const_pointer_cast<ExprNode>(n);
    m->perm = std::move(payload);
    return wrap_node(std::move(n), x.batched());
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

template <typename Fn>
Tensor map_unary(const Tensor& x, Op op, Fn fn) {
    const auto src = x.reals();
    std::vector<double> out(src.size());
    for (size_t i = 0; i < src.size(); ++i) {
        out[i] = fn(src[i], i);
    }
    (void)op;
    return Tensor::real(std::move(out), x.shape());
}

template <typename Fn>
Tensor map_binary(const Tensor& a, const Tensor& b, Fn fn) {
    const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    const Tensor ax = broadcast_to(a, out_shape);
    const Tensor bx = broadcast_to(b, out_shape);
    const auto av = ax.reals();
    const auto bv = bx.reals();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fn(av[i], bv[i]);
    return Tensor::real(std::move(out), out_shape);
}

[[noreturn]] void domain_error(Op op, double v, size_t index) {
    throw DomainError(std::string(op_name(op)) + " of out-of-domain value " + std::to_string(v) +
                      " at flat index " + std::to_string(index));
}

Tensor eval_node(const ExprNode& n, const std::vector<const Tensor*>& in) {
    switch (n.op) {
        case Op::Constant: return n.value;
        case Op::VarRef: return n.var->value();
        case Op::Add: return map_binary(*in[0], *in[1], [](double a, double b) { return a + b; });
        case Op::Sub: return map_binary(*in[0], *in[1], [](double a, double b) { return a - b; });
        case Op::Mul: return map_binary(*in[0], *in[1], [](double a, double b) { return a * b; });
        case Op::Div: return map_binary(*in[0], *in[1], [](double a, double b) { return a / b; });
        case Op::Neg: return map_unary(*in[0], n.op, [](double v, size_t) { return -v; });
        case Op::Log:
            return map_unary(*in[0], n.op, [](double v, size_t i) {
                if (v <= 0.0) domain_error(Op::Log, v, i);
                return std::log(v);
            });
        case Op::Exp: return map_unary(*in[0], n.op, [](double v, size_t) { return std::exp(v); });
        case Op::Sqrt:
            return map_unary(*in[0], n.op, [](double v, size_t i) {
                if (v < 0.0) domain_error(Op::Sqrt, v, i);
                return std::sqrt(v);
            });
        case Op::Square: return map_unary(*in[0], n.op, [](double v, size_t) { return v * v; });
        case Op::Softplus:
            return map_unary(*in[0], n.op, [](double v, size_t) { return softplus(v); });
        case Op::Sigmoid:
            return map_unary(*in[0], n.op, [](double v, size_t) { return sigmoid(v); });
        case Op::Lgamma:
            return map_unary(*in[0], n.op, [](double v, size_t i) {
                if (v <= 0.0) domain_error(Op::Lgamma, v, i);
                return std::lgamma(v);
            });
        case Op::Digamma:
            return map_unary(*in[0], n.op, [](double v, size_t i) {
                if (v <= 0.0) domain_error(Op::Digamma, v, i);
                return digamma(v);
            });
        case Op::Round:
            return map_unary(*in[0], n.op, [](double v, size_t) { return std::nearbyint(v); });
        case Op::WidenToReal: return in[0]->widened();
        case Op::MatMul: return matmul(*in[0], *in[1], n.adjoint_a, n.adjoint_b);
        case Op::ReduceSum: {
            if (n.axes.empty()) return *in[0];
            return reduce_sum(*in[0], n.axes, n.keep_dims);
        }
        case Op::Slice: return slice(*in[0], n.pieces);
        case Op::Reshape: return reshape(*in[0], n.shape);
        case Op::Transpose: return transpose(*in[0], n.perm);
    }
    throw Error("unhandled op");
}

// Post-order over the unique nodes of a graph (children before parents).
std::vector<const ExprNode*> topological_order(const ExprNode* root) {
    std::vector<const ExprNode*> order;
    std::unordered_set<const ExprNode*> done;
    std::vector<std::pair<const ExprNode*, size_t>> stack = {{root, 0}};
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (done.count(node)) {
            stack.pop_back();
            continue;
        }
        if (next_child < node->inputs.size()) {
            const ExprNode* child = node->inputs[next_child].get();
            ++next_child;
            if (!done.count(child)) stack.emplace_back(child, 0);
        } else {
            done.insert(node);
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

const Tensor& EvalContext::eval(const Expr& e) {
    if (!e.defined()) throw Error("evaluation of an undefined expression");
    const auto order = topological_order(e.node().get());
    for (const ExprNode* n : order) {
        if (memo_.count(n)) continue;
        std::vector<const Tensor*> in;
        in.reserve(n->inputs.size());
        for (const auto& c : n->inputs) in.push_back(&memo_.at(c.get()));
        memo_.emplace(n, eval_node(*n, in));
    }
    return memo_.at(e.node().get());
}

// ---------------------------------------------------------------------------
// Reverse-mode gradients
// ---------------------------------------------------------------------------

namespace {

/// Recorded forward pass plus per-node adjoints, accumulated in reverse
/// topological order. Adjoints of broadcast inputs are summed back to the
/// input's shape as they are accumulated.
struct GradientTape {
    EvalContext forward;
    std::unordered_map<const ExprNode*, Tensor> adjoint;

    void accumulate(const ExprNode* node, const Tensor& contribution) {
        const Tensor reduced = reduce_to_shape(contribution, node->shape);
        auto it = adjoint.find(node);
        if (it == adjoint.end()) {
            adjoint.emplace(node, reduced);
        } else {
            const auto a = it->second.reals();
            const auto b = reduced.reals();
            std::vector<double> sum(a.size());
            for (size_t i = 0; i < a.size(); ++i) sum[i] = a[i] + b[i];
            it->second = Tensor::real(std::move(sum), node->shape);
        }
    }
};

Tensor scale_elem(const Tensor& g, const Tensor& f) {
    return map_binary(g, f, [](double a, double b) { return a * b; });
}

void backprop_node(const ExprNode* n, const Tensor& g, GradientTape& tape) {
    auto val = [&](size_t i) -> const Tensor& {
        return tape.forward.eval(wrap_node(n->inputs[i], false));
    };
    auto flows = [&](size_t i) { return n->inputs[i]->dtype == DType::Real64; };
    auto push = [&](size_t i, const Tensor& contribution) {
        if (flows(i)) tape.accumulate(n->inputs[i].get(), contribution);
    };
    switch (n->op) {
        case Op::Constant:
        case Op::VarRef:
        case Op::Round:
            return;
        case Op::WidenToReal:
            return;  // integer inputs have no gradients
        case Op::Add:
            push(0, g);
            push(1, g);
            return;
        case Op::Sub:
            push(0, g);
            push(1, map_unary(g, n->op, [](double v, size_t) { return -v; }));
            return;
        case Op::Mul:
            push(0, scale_elem(g, val(1)));
            push(1, scale_elem(g, val(0)));
            return;
        case Op::Div: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            push(0, map_binary(g, b, [](double gv, double bv) { return gv / bv; }));
            const Tensor a_over_b2 =
                map_binary(a, b, [](double av, double bv) { return -av / (bv * bv); });
            push(1, scale_elem(g, a_over_b2));
            return;
        }
        case Op::Neg:
            push(0, map_unary(g, n->op, [](double v, size_t) { return -v; }));
            return;
        case Op::Log:
            push(0, map_binary(g, val(0), [](double gv, double x) { return gv / x; }));
            return;
        case Op::Exp:
            push(0, map_binary(g, val(0), [](double gv, double x) { return gv * std::exp(x); }));
            return;
        case Op::Sqrt:
            push(0, map_binary(g, val(0),
                               [](double gv, double x) { return gv * 0.5 / std::sqrt(x); }));
            return;
        case Op::Square:
            push(0, map_binary(g, val(0), [](double gv, double x) { return gv * 2.0 * x; }));
            return;
        case Op::Softplus:
            push(0, map_binary(g, val(0), [](double gv, double x) { return gv * sigmoid(x); }));
            return;
        case Op::Sigmoid:
            push(0, map_binary(g, val(0), [](double gv, double x) {
                     const double s = sigmoid(x);
                     return gv * s * (1.0 - s);
                 }));
            return;
        case Op::Lgamma:
            push(0, map_binary(g, val(0), [](double gv, double x) { return gv * digamma(x); }));
            return;
        case Op::Digamma:
            push(0, map_binary(g, val(0), [](double gv, double x) { return gv * trigamma(x); }));
            return;
        case Op::MatMul: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            Tensor da = Tensor::scalar(0), db = Tensor::scalar(0);
            if (!n->adjoint_a && !n->adjoint_b) {
                da = matmul(g, b, false, true);
                db = matmul(a, g, true, false);
            } else if (n->adjoint_a && !n->adjoint_b) {
                da = matmul(b, g, false, true);
                db = matmul(a, g, false, false);
            } else if (!n->adjoint_a && n->adjoint_b) {
                da = matmul(g, b, false, false);
                db = matmul(g, a, true, false);
            } else {
                da = matmul(b, g, true, true);
                db = matmul(g, a, true, true);
            }
            push(0, da);
            push(1, db);
            return;
        }
        case Op::ReduceSum: {
            if (n->axes.empty()) {
                push(0, g);
                return;
            }
            Tensor expanded = g;
            if (!n->keep_dims) {
                std::vector<int64_t> kept = n->inputs[0]->shape.dims();
                for (int64_t a : n->axes) kept[static_cast<size_t>(a)] = 1;
                expanded = reshape(g, Shape(std::move(kept)));
            }
            push(0, broadcast_to(expanded, n->inputs[0]->shape));
            return;
        }
        case Op::Slice:
            push(0, slice_scatter(g, n->inputs[0]->shape, n->pieces));
            return;
        case Op::Reshape:
            push(0, reshape(g, n->inputs[0]->shape));
            return;
        case Op::Transpose: {
            std::vector<int64_t> inverse(n->perm.size());
            for (size_t i = 0; i < n->perm.size(); ++i) {
                inverse[static_cast<size_t>(n->perm[i])] = static_cast<int64_t>(i);
            }
            push(0, transpose(g, inverse));
            return;
        }
    }
}

}  // namespace

std::vector<Tensor> gradient(const Expr& output, std::span<const VariablePtr> vars) {
    if (!output.defined()) throw Error("gradient of an undefined expression");
    GradientTape tape;
    const Tensor out_val = tape.forward.eval(output);
    if (out_val.dtype() != DType::Real64 || out_val.size() != 1) {
        throw ShapeError("gradient requires a scalar real64 output, got " +
                         std::string(dtype_name(out_val.dtype())) + out_val.shape().str());
    }

    const auto order = topological_order(output.node().get());
    tape.adjoint.emplace(output.node().get(), Tensor::ones(output.shape()));

    std::unordered_map<const Variable*, Tensor> per_var;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const ExprNode* n = *it;
        const auto adj_it = tape.adjoint.find(n);
        if (adj_it == tape.adjoint.end()) continue;  // unreached from the output
        if (n->dtype != DType::Real64) continue;
        if (n->op == Op::VarRef) {
            auto pv = per_var.find(n->var.get());
            if (pv == per_var.end()) {
                per_var.emplace(n->var.get(), adj_it->second);
            } else {
                const auto a = pv->second.reals();
                const auto b = adj_it->second.reals();
                std::vector<double> sum(a.size());
                for (size_t i = 0; i < a.size(); ++i) sum[i] = a[i] + b[i];
                pv->second = Tensor::real(std::move(sum), n->shape);
            }
            continue;
        }
        backprop_node(n, adj_it->second, tape);
    }

    std::vector<Tensor> grads;
    grads.reserve(vars.size());
    for (const VariablePtr& v : vars) {
        auto it = per_var.find(v.get());
        grads.push_back(it != per_var.end() ? it->second : Tensor::zeros(v->value().shape()));
    }
    return grads;
}

void collect_variables(const Expr& e, std::vector<VariablePtr>& out) {
    if (!e.defined()) return;
    // Depth-first in input order so discovery order follows declaration order.
    std::unordered_set<const ExprNode*> seen;
    std::function<void(const ExprNode*)> visit = [&](const ExprNode* n) {
        if (!seen.insert(n).second) return;
        if (n->op == Op::VarRef) {
            for (const auto& v : out) {
                if (v.get() == n->var.get()) return;
            }
            out.push_back(n->var);
            return;
        }
        for (const auto& c : n->inputs) visit(c.get());
    };
    visit(e.node().get());
}

}  // namespace jointdist
