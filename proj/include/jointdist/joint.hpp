#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "jointdist/distributions.hpp"

namespace jointdist {

/// One emission of a model backend: the node's conditional distribution plus
/// its display name and whether it is a root (parentless) node. Root nodes
/// are the only place a requested sample shape is injected.
struct NodeRequest {
    DistLikePtr dist;
    std::string name;
    bool root = false;
};

/// Receives each node of a forward run in canonical order and answers with
/// the value bound to it.
class NodeSink {
public:
    virtual ~NodeSink() = default;
    virtual StructuredValue on_node(size_t index, const NodeRequest& request) = 0;
};

/// A compiled model: drives a sink through the nodes in canonical order.
/// Whether the user-visible structure is a named map or an ordered list is a
/// property of the flavor; node names and root flags are recorded from the
/// emissions themselves.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual void drive(NodeSink& sink) const = 0;
    virtual bool dict_shaped() const = 0;
    virtual const char* flavor_name() const = 0;
};

class JointDistribution;
using JointPtr = std::shared_ptr<const JointDistribution>;

/// Joint distribution over a structure of tensors, factored into a canonical
/// sequence of conditional distributions. Sampling runs the model forward;
/// the log-density is the sum of per-node conditional log-densities. The
/// object is immutable after construction (apart from variables it
/// references) and satisfies the node contract itself, so joints nest.
class JointDistribution final : public DistributionLike,
                                public std::enable_shared_from_this<JointDistribution> {
public:
    /// Compiles a backend: runs one probe pass to freeze the canonical node
    /// sequence, the structure properties, and the reachable variables.
    static JointPtr compile(std::shared_ptr<const ModelBackend> backend);

    size_t node_count() const { return names_.size(); }
    const std::vector<std::string>& node_names() const { return names_; }
    const std::vector<bool>& root_flags() const { return roots_; }
    const char* flavor_name() const { return backend_->flavor_name(); }

    StructuredValue sample(const Shape& sample_shape, RandomStream& rng) const;

    /// Joint log-density of a fully specified structure. Differentiable with
    /// respect to any variables the model reads.
    Expr log_prob(const StructuredValue& x) const;

    /// Runs the model forward, conditioning on the given leaves (missing
    /// leaves are sampled). Returns the conditional distribution of every
    /// node together with the realized values.
    std::pair<Structure<DistLikePtr>, StructuredValue> sample_distributions(
        const Shape& sample_shape, const StructuredValue& value, RandomStream& rng) const;

    /// Canonical-order core of sample_distributions. `values` is empty (all
    /// missing) or has exactly one optional entry per node. When
    /// `sample_shape_trace` is given, it receives the sample shape passed to
    /// each node's sampler.
    std::pair<std::vector<DistLikePtr>, std::vector<StructuredValue>> flat_sample_distributions(
        const Shape& sample_shape, const std::vector<std::optional<StructuredValue>>& values,
        RandomStream& rng, std::vector<Shape>* sample_shape_trace = nullptr) const;

    /// Converts a user-visible structure to the canonical node list. With
    /// allow_missing, wholly missing slots become nullopt and partially
    /// missing subtrees pass through for composite nodes to complete.
    std::vector<std::optional<StructuredValue>> flatten(const StructuredValue& value,
                                                        bool allow_missing) const;
    StructuredValue unflatten(std::vector<StructuredValue> parts) const;

    // Analytic moments, defined only when every node is a root.
    StructuredValue joint_mean() const;
    StructuredValue joint_stddev() const;
    /// Sum of component entropies (scalar).
    Expr joint_entropy() const;

    /// All variables reachable from the model, deduplicated, ordered by first
    /// reach in canonical node order then parameter declaration order.
    const std::vector<VariablePtr>& variables() const { return variables_; }
    std::vector<VariablePtr> trainable_variables() const;

    /// Drives a sink through the model while checking the emission sequence
    /// against the compiled one (count, names, root flags).
    void drive_checked(NodeSink& sink) const;

    // DistributionLike
    Structure<DType> dtype_structure() const override { return dtype_structure_; }
    Structure<Shape> event_structure() const override { return event_structure_; }
    Structure<Shape> batch_structure() const override { return batch_structure_; }
    StructuredValue sample_structured(const Shape& sample_shape,
                                      RandomStream& rng) const override;
    Expr log_prob_structured(const StructuredValue& x) const override;
    StructuredValue mean_structured() const override { return joint_mean(); }
    StructuredValue stddev_structured() const override { return joint_stddev(); }
    Expr entropy() const override { return joint_entropy(); }
    void collect_variables_into(std::vector<VariablePtr>& out) const override;
    bool has_batched_params() const override;
    StructuredValue realize(const Shape& sample_shape, const StructuredValue& value,
                            RandomStream& rng) const override;
    std::string describe() const override;

private:
    explicit JointDistribution(std::shared_ptr<const ModelBackend> backend);

    void require_independent(const char* what) const;

    std::shared_ptr<const ModelBackend> backend_;
    std::vector<std::string> names_;
    std::vector<bool> roots_;
    std::vector<DistLikePtr> probe_dists_;
    Structure<DType> dtype_structure_;
    Structure<Shape> event_structure_;
    Structure<Shape> batch_structure_;
    std::vector<VariablePtr> variables_;
};

/// Per-node random stream used by every driver pass: a pure function of the
/// caller stream position (one draw per pass) and the node index, so node
/// draws do not depend on how much randomness other nodes consumed.
RandomStream node_stream(uint64_t pass_key, size_t node_index);

}  // namespace jointdist
