#pragma once

#include <memory>
#include <string>
#include <vector>

#include "jointdist/random.hpp"
#include "jointdist/structured.hpp"

namespace jointdist {

class DistributionLike;
using DistLikePtr = std::shared_ptr<const DistributionLike>;

/// Common contract of everything that can stand as a node in a joint model:
/// tensor-valued distributions and joint distributions themselves (whose
/// samples are structured). Properties are fixed for the object's lifetime.
class DistributionLike {
public:
    virtual ~DistributionLike() = default;

    virtual Structure<DType> dtype_structure() const = 0;
    virtual Structure<Shape> event_structure() const = 0;
    virtual Structure<Shape> batch_structure() const = 0;

    virtual StructuredValue sample_structured(const Shape& sample_shape,
                                              RandomStream& rng) const = 0;
    virtual Expr log_prob_structured(const StructuredValue& x) const = 0;

    virtual StructuredValue mean_structured() const = 0;
    virtual StructuredValue stddev_structured() const = 0;
    /// Total entropy over all components, as a scalar expression.
    virtual Expr entropy() const = 0;

    /// Appends reachable variables in parameter declaration order.
    virtual void collect_variables_into(std::vector<VariablePtr>& out) const = 0;

    /// True when any parameter expression carries a hidden batch axis; such a
    /// node depends on vectorized upstream draws and must not be treated as a
    /// root by the vectorized executor.
    virtual bool has_batched_params() const = 0;

    /// Node realization used by the joint driver: missing -> sample, fully
    /// given -> use verbatim, partially given -> conditionally complete
    /// (supported by composite nodes only).
    virtual StructuredValue realize(const Shape& sample_shape, const StructuredValue& value,
                                    RandomStream& rng) const;

    virtual std::string describe() const = 0;
};

class Distribution;
using DistPtr = std::shared_ptr<const Distribution>;

/// Tensor-valued distribution: samples of shape
/// sample_shape ++ batch_shape ++ event_shape, log-densities of shape
/// broadcast(x.shape minus event dims, batch_shape). Parameters are
/// expressions, so they may reference variables (read at evaluation time) or
/// upstream sampled values.
class Distribution : public DistributionLike {
public:
    DType dtype() const { return dtype_; }
    const Shape& batch_shape() const { return batch_shape_; }
    const Shape& event_shape() const { return event_shape_; }
    bool reparameterizable() const { return reparameterizable_; }

    Expr sample(const Shape& sample_shape, RandomStream& rng) const;
    Expr log_prob(const Expr& x) const;

    virtual Expr mean() const;
    virtual Expr stddev() const;
    /// Per-batch-element entropy (shape == batch_shape).
    virtual Expr entropy_elements() const;

    const std::vector<Expr>& params() const { return params_; }

    // DistributionLike (leaf wrappers)
    Structure<DType> dtype_structure() const final { return Structure<DType>(dtype_); }
    Structure<Shape> event_structure() const final { return Structure<Shape>(event_shape_); }
    Structure<Shape> batch_structure() const final { return Structure<Shape>(batch_shape_); }
    StructuredValue sample_structured(const Shape& sample_shape, RandomStream& rng) const final;
    Expr log_prob_structured(const StructuredValue& x) const final;
    StructuredValue mean_structured() const final { return StructuredValue(mean()); }
    StructuredValue stddev_structured() const final { return StructuredValue(stddev()); }
    Expr entropy() const final;
    void collect_variables_into(std::vector<VariablePtr>& out) const override;
    bool has_batched_params() const override;

    /// Whether x of this dtype may condition / be scored by this
    /// distribution. Integer-valued distributions may accept real input.
    virtual bool accepts_value_dtype(DType dt) const { return dt == dtype_; }

    std::string describe() const override { return name_; }

    /// True when parameters carry a hidden batch axis (the hidden extent is
    /// then the leading dim of batch_shape()).
    bool hidden_batched() const { return hidden_batched_; }

protected:
    Distribution(std::string name, DType dtype, Shape batch_shape, Shape event_shape,
                 bool reparameterizable, std::vector<Expr> params);

    virtual Expr sample_impl(const Shape& sample_shape, RandomStream& rng) const = 0;
    virtual Expr log_prob_impl(const Expr& x) const = 0;

    [[noreturn]] void no_moment(const char* which) const;

    std::string name_;

private:
    DType dtype_;
    Shape batch_shape_;
    Shape event_shape_;
    bool reparameterizable_;
    std::vector<Expr> params_;
    bool hidden_batched_ = false;
};

// Concrete distribution factories. Batch shape is the broadcast of parameter
// shapes (excluding the trailing event axis of Dirichlet concentrations and
// Multinomial probs/logits).

DistPtr normal(Expr loc, Expr scale);
DistPtr inverse_gamma(Expr concentration, Expr scale);
DistPtr gamma(Expr concentration, Expr rate);
DistPtr poisson(Expr rate);
DistPtr bernoulli(Expr probs);
DistPtr dirichlet(Expr concentration);
DistPtr multinomial_probs(Expr total_count, Expr probs);
DistPtr multinomial_logits(Expr total_count, Expr logits);

/// Draws a block of i.i.d. inner samples as a single event:
/// event_shape = block_shape ++ inner.event_shape.
DistPtr iid_sample(DistPtr inner, Shape block_shape);

/// Reinterprets the trailing `ndims` batch dims of `inner` as event dims,
/// summing their log-densities.
DistPtr independent(DistPtr inner, int64_t ndims);

}  // namespace jointdist
