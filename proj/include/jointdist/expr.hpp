#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "jointdist/tensor.hpp"

namespace jointdist {

/// Mutable named parameter container. Shape and dtype are fixed at creation;
/// assignment replaces the values only. Expressions read variables at
/// evaluation time, never at graph-construction time.
class Variable {
public:
    Variable(std::string name, Tensor value, bool trainable = true);

    const std::string& name() const { return name_; }
    const Tensor& value() const { return value_; }
    bool trainable() const { return trainable_; }

    void assign(const Tensor& value);

private:
    std::string name_;
    Tensor value_;
    bool trainable_;
};

using VariablePtr = std::shared_ptr<Variable>;

VariablePtr make_variable(std::string name, Tensor value, bool trainable = true);

enum class Op {
    Constant,
    VarRef,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Log,
    Exp,
    Sqrt,
    Square,
    Softplus,
    Sigmoid,
    Lgamma,
    Digamma,
    Round,
    WidenToReal,
    MatMul,
    ReduceSum,
    Slice,
    Reshape,
    Transpose,
};

struct ExprNode;

/// Handle to a node in a lazily evaluated computation graph. Shapes and
/// dtypes are inferred eagerly at construction; values are computed on
/// demand. The handle additionally carries a "batched" mark used by the
/// vectorized execution mode: a batched expression's payload has a hidden
/// leading axis indexing independent worlds, and operator builders lift
/// themselves so that user-visible axis arithmetic ignores that axis.
class Expr {
public:
    Expr() = default;
    Expr(double scalar_constant);  // NOLINT: implicit by design
    Expr(const Tensor& constant);  // NOLINT: implicit by design

    static Expr constant(Tensor value);
    static Expr variable(VariablePtr v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    DType dtype() const;

    bool batched() const { return batched_; }
    /// Reinterprets this expression's leading axis as the hidden batch axis.
    Expr as_batched() const;
    /// Drops the hidden-axis mark: the payload becomes an ordinary tensor
    /// whose leading axis indexes worlds (e.g. to aggregate per-world
    /// densities into one loss).
    Expr as_plain() const;

    /// Evaluates in a fresh context (no cross-call caching of variable reads).
    Tensor eval() const;

    /// True when no variable read is reachable from this node.
    bool is_constant_graph() const;

    const std::shared_ptr<const ExprNode>& node() const { return node_; }

private:
    friend Expr wrap_node(std::shared_ptr<const ExprNode> node, bool batched);
    std::shared_ptr<const ExprNode> node_;
    bool batched_ = false;
};

/// Payload shape without the hidden batch axis.
Shape visible_shape(const Expr& e);

/// Extent of the hidden batch axis; throws unless batched.
int64_t batch_extent(const Expr& e);

// Elementwise ops (binary ops broadcast; all require real64 inputs).
Expr add(const Expr& a, const Expr& b);
Expr sub(const Expr& a, const Expr& b);
Expr mul(const Expr& a, const Expr& b);
Expr div(const Expr& a, const Expr& b);
Expr neg(const Expr& x);
Expr log(const Expr& x);
Expr exp(const Expr& x);
Expr sqrt(const Expr& x);
Expr square(const Expr& x);
Expr softplus(const Expr& x);
Expr sigmoid(const Expr& x);
Expr lgamma(const Expr& x);
Expr digamma(const Expr& x);

/// Nearest integer; gradients do not flow through.
Expr round(const Expr& x);

/// Explicit int64 -> real64 widening (identity on real input). The only way
/// integer tensors enter arithmetic.
Expr widen_to_real(const Expr& x);

inline Expr operator+(const Expr& a, const Expr& b) { return add(a, b); }
inline Expr operator-(const Expr& a, const Expr& b) { return sub(a, b); }
inline Expr operator*(const Expr& a, const Expr& b) { return mul(a, b); }
inline Expr operator/(const Expr& a, const Expr& b) { return div(a, b); }
inline Expr operator-(const Expr& x) { return neg(x); }

Expr matmul(const Expr& a, const Expr& b, bool adjoint_a = false, bool adjoint_b = false);

/// Sum over all (visible) axes.
Expr reduce_sum(const Expr& x);
/// Sum over the given axes; negative axes address from the end of the rank.
Expr reduce_sum(const Expr& x, const std::vector<int64_t>& axes, bool keep_dims = false);

Expr slice(const Expr& x, const std::vector<SlicePiece>& pieces);
Expr reshape(const Expr& x, const Shape& target);
Expr transpose(const Expr& x, const std::vector<int64_t>& perm);

/// Shared per-evaluation cache. Values of one expression graph are memoized
/// within a context; variable reads are performed once per context, so a
/// fresh context always observes current variable contents.
class EvalContext {
public:
    const Tensor& eval(const Expr& e);

private:
    std::unordered_map<const ExprNode*, Tensor> memo_;
};

/// Reverse-mode gradient of a scalar real-valued expression with respect to
/// each variable. Variables the output does not reach get zero gradients.
std::vector<Tensor> gradient(const Expr& output, std::span<const VariablePtr> vars);

/// Appends variables reachable from e in first-reached (DFS, input-order)
/// order, skipping ones already present in `out`.
void collect_variables(const Expr& e, std::vector<VariablePtr>& out);

}  // namespace jointdist
