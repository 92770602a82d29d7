#include "jointdist/trainable.hpp"

#include <cmath>
#include <iostream>

#include "jointdist/errors.hpp"
#include "jointdist/special_math.hpp"

namespace jointdist {

Expr Bijector::forward(const Expr& unconstrained) const {
    switch (kind_) {
        case Kind::Exp: return jointdist::exp(unconstrained);
        case Kind::Softplus: return jointdist::softplus(unconstrained);
    }
    throw Error("unhandled bijector");
}

namespace {

Tensor map_values(const Tensor& t, double (*fn)(double)) {
    const auto src = t.reals();
    std::vector<double> out(src.size());
    for (size_t i = 0; i < src.size(); ++i) out[i] = fn(src[i]);
    return Tensor::real(std::move(out), t.shape());
}

}  // namespace

Tensor Bijector::forward(const Tensor& unconstrained) const {
    switch (kind_) {
        case Kind::Exp: return map_values(unconstrained, [](double v) { return std::exp(v); });
        case Kind::Softplus: return map_values(unconstrained, &jointdist::softplus);
    }
    throw Error("unhandled bijector");
}

Tensor Bijector::inverse(const Tensor& constrained) const {
    for (int64_t i = 0; i < constrained.size(); ++i) {
        if (!(constrained.as_real(i) > 0.0)) {
            throw DomainError("bijector inverse of a non-positive value " +
                              std::to_string(constrained.as_real(i)));
        }
    }
    switch (kind_) {
        case Kind::Exp: return map_values(constrained, [](double v) { return std::log(v); });
        case Kind::Softplus: return map_values(constrained, &softplus_inverse);
    }
    throw Error("unhandled bijector");
}

TransformedVariable::TransformedVariable(std::string name, const Tensor& constrained_init,
                                         Bijector bijector, bool trainable)
    : underlying_(make_variable(std::move(name), bijector.inverse(constrained_init), trainable)),
      bijector_(bijector) {}

void Adam::apply(std::span<const VariablePtr> vars, std::span<const Tensor> grads) {
    if (vars.size() != grads.size()) {
        throw Error("Adam: got " + std::to_string(grads.size()) + " gradients for " +
                    std::to_string(vars.size()) + " variables");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < vars.size(); ++i) {
        const Variable* key = vars[i].get();
        const Tensor& value = vars[i]->value();
        const auto g = grads[i].reals();
        if (!(grads[i].shape() == value.shape())) {
            throw ShapeError("Adam: gradient shape " + grads[i].shape().str() +
                             " does not match variable '" + vars[i]->name() + "' of shape " +
                             value.shape().str());
        }
        auto& [m, v] = moments_[key];
        if (m.empty()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        const auto x = value.reals();
        std::vector<double> updated(x.size());
        for (size_t j = 0; j < x.size(); ++j) {
            m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
            v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            updated[j] = x[j] - options_.learning_rate * m_hat / (std::sqrt(v_hat) +
                                                                  options_.epsilon);
        }
        vars[i]->assign(Tensor::real(std::move(updated), value.shape()));
    }
}

double fit_step(const std::function<Expr()>& loss_fn, Adam& optimizer,
                std::span<const VariablePtr> vars) {
    const Expr loss = loss_fn();
    if (loss.shape().num_elements() != 1 || loss.dtype() != DType::Real64) {
        throw ShapeError("fit_step: loss must be a real scalar, got " + loss.shape().str());
    }
    // Only the listed variables are watched; others the loss may read are
    // treated as constants of the step.
    std::vector<VariablePtr> reachable;
    collect_variables(loss, reachable);
    for (const auto& v : vars) {
        const bool found =
            std::any_of(reachable.begin(), reachable.end(),
                        [&](const VariablePtr& r) { return r.get() == v.get(); });
        if (!found && optimizer.note_missing_gradient(v.get())) {
            std::cerr << "warning: variable '" << v->name()
                      << "' is not reachable from the loss; it will not be updated\n";
        }
    }
    const double loss_value = loss.eval().scalar_value();
    const std::vector<Tensor> grads = gradient(loss, vars);
    optimizer.apply(vars, grads);
    return loss_value;
}

std::vector<double> minimize(const std::function<Expr()>& loss_fn, int64_t num_steps,
                             Adam& optimizer, std::span<const VariablePtr> vars) {
    std::vector<double> trace;
    trace.reserve(static_cast<size_t>(std::max<int64_t>(num_steps, 0)));
    for (int64_t i = 0; i < num_steps; ++i) {
        trace.push_back(fit_step(loss_fn, optimizer, vars));
    }
    return trace;
}

}  // namespace jointdist
