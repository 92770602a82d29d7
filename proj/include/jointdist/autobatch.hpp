#pragma once

#include "jointdist/joint.hpp"

namespace jointdist {

/// Vectorized interpretation of a joint model: the model body is treated as
/// the description of a single world, and execution threads a hidden leading
/// axis of extent `num_worlds` through every operation. The global batch
/// shape is [num_worlds], a single shape rather than a structure. Whether a
/// node is a root is computed (a node whose parameters carry no hidden axis
/// is independent of upstream draws), so no annotations are needed.
class AutoBatchedJoint {
public:
    AutoBatchedJoint(JointPtr inner, int64_t num_worlds);

    int64_t num_worlds() const { return num_worlds_; }
    Shape batch_shape() const { return Shape{num_worlds_}; }
    const JointPtr& inner() const { return inner_; }

    /// One draw per world; every leaf gains a leading axis of extent
    /// num_worlds and the worlds are mutually independent.
    StructuredValue sample(RandomStream& rng) const;

    /// Per-world joint log-density, shape [num_worlds]. Element i equals the
    /// single-world log-density of slice i exactly.
    Expr log_prob(const StructuredValue& x) const;

private:
    JointPtr inner_;
    int64_t num_worlds_;
};

/// Independent joint realizations with a leading axis of size n, via the
/// vectorized interpretation above.
StructuredValue vectorized_sample(const JointPtr& jd, int64_t num_worlds, RandomStream& rng);

/// Scalar joint log-density of one world under the global-batch
/// interpretation, evaluated through the ordinary (non-vectorized) driver:
/// each component's local batch dims count toward its event and are summed.
/// Coincides with log_prob for models whose components have scalar
/// densities, and stays defined when local batch shapes do not align.
Expr single_world_log_prob(const JointPtr& jd, const StructuredValue& x);

}  // namespace jointdist
