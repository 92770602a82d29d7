#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "jointdist/expr.hpp"

namespace jointdist {

/// Strictly positive bijective maps used to expose unconstrained variables as
/// constrained parameters.
class Bijector {
public:
    enum class Kind { Exp, Softplus };

    static Bijector exp() { return Bijector(Kind::Exp); }
    static Bijector softplus() { return Bijector(Kind::Softplus); }

    Kind kind() const { return kind_; }

    Expr forward(const Expr& unconstrained) const;
    Tensor forward(const Tensor& unconstrained) const;
    Tensor inverse(const Tensor& constrained) const;

private:
    explicit Bijector(Kind kind) : kind_(kind) {}
    Kind kind_;
};

/// Constrained proxy of an unconstrained variable: reads apply the bijector
/// forward, assignment of a constrained value stores its inverse.
/// Constructed from the constrained initial value.
class TransformedVariable {
public:
    TransformedVariable(std::string name, const Tensor& constrained_init, Bijector bijector,
                        bool trainable = true);

    /// Constrained read as an expression (defers the underlying variable read
    /// to evaluation time).
    Expr read() const { return bijector_.forward(Expr::variable(underlying_)); }

    Tensor constrained_value() const { return bijector_.forward(underlying_->value()); }
    void assign(const Tensor& constrained) { underlying_->assign(bijector_.inverse(constrained)); }

    const VariablePtr& underlying() const { return underlying_; }
    const Bijector& bijector() const { return bijector_; }

private:
    VariablePtr underlying_;
    Bijector bijector_;
};

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
};

/// Adam with bias-corrected moment estimates.
class Adam {
public:
    explicit Adam(AdamOptions options = {}) : options_(options) {}

    const AdamOptions& options() const { return options_; }
    int64_t step() const { return step_; }

    void apply(std::span<const VariablePtr> vars, std::span<const Tensor> grads);

    /// Bookkeeping for the unreachable-variable warning; returns true the
    /// first time a variable is reported.
    bool note_missing_gradient(const Variable* v) { return warned_.insert(v).second; }

private:
    AdamOptions options_;
    int64_t step_ = 0;
    std::unordered_map<const Variable*, std::pair<std::vector<double>, std::vector<double>>>
        moments_;
    std::unordered_set<const Variable*> warned_;
};

/// One optimization step: evaluates the loss under a tape restricted to
/// `vars`, applies one Adam update, returns the pre-update loss. Variables
/// the loss does not reach get a zero update and a once-per-variable warning
/// on stderr.
double fit_step(const std::function<Expr()>& loss_fn, Adam& optimizer,
                std::span<const VariablePtr> vars);

/// Runs `num_steps` sequential fit steps and returns every pre-update loss.
std::vector<double> minimize(const std::function<Expr()>& loss_fn, int64_t num_steps,
                             Adam& optimizer, std::span<const VariablePtr> vars);

}  // namespace jointdist
