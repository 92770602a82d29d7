#include "jointdist/autobatch.hpp"

#include "jointdist/errors.hpp"

namespace jointdist {

namespace {

StructuredValue mark_batched(const StructuredValue& v) {
    return v.map_leaves([](const Expr& e) { return e.batched() ? e : e.as_batched(); });
}

// Vectorized forward pass. Roots are sampled once with sample_shape
// [num_worlds]; dependent nodes inherit the hidden axis through their
// parameters and are sampled with an empty sample shape.
class BatchedSampleSink final : public NodeSink {
public:
    BatchedSampleSink(int64_t n, uint64_t pass_key,
                      const std::vector<std::optional<StructuredValue>>* values)
        : n_(n), pass_key_(pass_key), values_(values) {}

    StructuredValue on_node(size_t index, const NodeRequest& request) override {
        RandomStream rng = node_stream(pass_key_, index);
        StructuredValue value;
        if (values_ && !values_->empty() && (*values_)[index].has_value()) {
            value = *(*values_)[index];
        } else {
            const bool is_root = !request.dist->has_batched_params();
            if (const auto* joint = dynamic_cast<const JointDistribution*>(request.dist.get())) {
                if (!is_root) {
                    throw CapabilityError(
                        "vectorized execution of a nested joint with vectorized parameters is "
                        "not supported");
                }
                value = joint->sample(Shape{n_}, rng);
            } else {
                value = request.dist->sample_structured(is_root ? Shape{n_} : Shape{}, rng);
            }
        }
        value = mark_batched(value);
        dists.push_back(request.dist);
        values_out.push_back(value);
        return value;
    }

    std::vector<DistLikePtr> dists;
    std::vector<StructuredValue> values_out;

private:
    int64_t n_;
    uint64_t pass_key_;
    const std::vector<std::optional<StructuredValue>>* values_;
};

}  // namespace

AutoBatchedJoint::AutoBatchedJoint(JointPtr inner, int64_t num_worlds)
    : inner_(std::move(inner)), num_worlds_(num_worlds) {
    if (!inner_) throw Error("null joint distribution");
    if (num_worlds_ < 1) throw ShapeError("the number of worlds must be positive");
}

StructuredValue AutoBatchedJoint::sample(RandomStream& rng) const {
    const uint64_t pass_key = rng.next_u64();
    BatchedSampleSink sink(num_worlds_, pass_key, nullptr);
    inner_->drive_checked(sink);
    return inner_->unflatten(std::move(sink.values_out));
}

Expr AutoBatchedJoint::log_prob(const StructuredValue& x) const {
    auto values = inner_->flatten(x, /*allow_missing=*/false);
    // Every leaf must carry the shared leading world axis.
    for (size_t i = 0; i < values.size(); ++i) {
        values[i]->for_each_leaf([&](const std::string& path, const Expr& leaf) {
            if (leaf.shape().rank() < 1 || leaf.shape().dim(0) != num_worlds_) {
                throw ShapeError("leaf '" + path + "' of node " + std::to_string(i) +
                                 " has shape " + leaf.shape().str() +
                                 ", expected a leading axis of extent " +
                                 std::to_string(num_worlds_));
            }
        });
        values[i] = mark_batched(*values[i]);
    }
    BatchedSampleSink sink(num_worlds_, /*pass_key=*/0, &values);
    inner_->drive_checked(sink);
    Expr total;
    for (size_t i = 0; i < sink.dists.size(); ++i) {
        Expr term = sink.dists[i]->log_prob_structured(sink.values_out[i]);
        // The batch shape of this joint is the single global [num_worlds];
        // any local batch dims a component carries count toward its event,
        // so its per-world densities are summed.
        if (visible_shape(term).rank() > 0) term = reduce_sum(term);
        total = i == 0 ? term : add(total, term);
    }
    if (!total.defined()) return Expr(0.0);
    if (!(visible_shape(total) == Shape{})) {
        throw ShapeError("per-world log density has residual shape " +
                         visible_shape(total).str());
    }
    return total;
}

StructuredValue vectorized_sample(const JointPtr& jd, int64_t num_worlds, RandomStream& rng) {
    return AutoBatchedJoint(jd, num_worlds).sample(rng);
}

Expr single_world_log_prob(const JointPtr& jd, const StructuredValue& x) {
    const auto values = jd->flatten(x, /*allow_missing=*/false);
    RandomStream unused(0);
    const auto [ds, xs] = jd->flat_sample_distributions(Shape{}, values, unused);
    Expr total;
    for (size_t i = 0; i < ds.size(); ++i) {
        Expr term = ds[i]->log_prob_structured(xs[i]);
        if (term.shape().rank() > 0) term = reduce_sum(term);
        total = i == 0 ? term : add(total, term);
    }
    return total.defined() ? total : Expr(0.0);
}

}  // namespace jointdist
