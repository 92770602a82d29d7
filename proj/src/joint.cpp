#include "jointdist/joint.hpp"

#include <algorithm>

#include "jointdist/errors.hpp"

namespace jointdist {

RandomStream node_stream(uint64_t pass_key, size_t node_index) {
    return RandomStream(pass_key).substream(node_index);
}

namespace {

// Composes per-node parts into the user-visible structure.
template <typename T>
Structure<T> compose_structure(bool dict_shaped, const std::vector<std::string>& names,
                               std::vector<Structure<T>> parts) {
    if (!dict_shaped) return Structure<T>::list(std::move(parts));
    typename Structure<T>::Dict d;
    for (size_t i = 0; i < parts.size(); ++i) d.emplace_back(names[i], std::move(parts[i]));
    return Structure<T>::dict(std::move(d));
}

// Validates a provided leaf value against a tensor-valued node.
void check_leaf_value(const StructuredValue& v, const Distribution& d, size_t index,
                      const std::string& name) {
    const std::string where = "node " + std::to_string(index) + " ('" + name + "')";
    if (!v.is_leaf()) {
        throw StructureError(where + ": expected a tensor value, got a structured one");
    }
    if (!d.accepts_value_dtype(v.leaf().dtype())) {
        throw StructureError(where + ": value dtype " + dtype_name(v.leaf().dtype()) +
                             " does not match " + dtype_name(d.dtype()));
    }
    // Values are used verbatim; they must end with batch ++ event. Extra
    // leading axes are sample dims and pass through.
    const Shape expect = d.batch_shape().concat(d.event_shape());
    if (!v.leaf().shape().ends_with(expect)) {
        throw StructureError(where + ": provided value of shape " + v.leaf().shape().str() +
                             " does not end with batch+event shape " + expect.str());
    }
}

// Sink running the conditional forward pass: provided values are bound
// verbatim, everything else is sampled. Root nodes receive the requested
// sample shape, dependent nodes an empty one.
class ForwardSink final : public NodeSink {
public:
    ForwardSink(Shape sample_shape, const std::vector<std::optional<StructuredValue>>* values,
                uint64_t pass_key, std::vector<Shape>* trace)
        : sample_shape_(std::move(sample_shape)),
          values_(values),
          pass_key_(pass_key),
          trace_(trace) {}

    StructuredValue on_node(size_t index, const NodeRequest& request) override {
        const Shape effective = request.root ? sample_shape_ : Shape{};
        if (trace_) trace_->push_back(effective);

        StructuredValue provided;  // missing by default
        if (values_ && !values_->empty()) {
            if (const auto& slot = (*values_)[index]; slot.has_value()) provided = *slot;
        }
        if (provided.is_leaf()) {
            if (const auto* d = dynamic_cast<const Distribution*>(request.dist.get())) {
                check_leaf_value(provided, *d, index, request.name);
            }
        }
        RandomStream rng = node_stream(pass_key_, index);
        StructuredValue value = request.dist->realize(effective, provided, rng);
        dists.push_back(request.dist);
        values_out.push_back(value);
        return value;
    }

    std::vector<DistLikePtr> dists;
    std::vector<StructuredValue> values_out;

private:
    Shape sample_shape_;
    const std::vector<std::optional<StructuredValue>>* values_;
    uint64_t pass_key_;
    std::vector<Shape>* trace_;
};

// Wraps a sink with emission-sequence checks against the compiled model.
class CheckedSink final : public NodeSink {
public:
    CheckedSink(NodeSink& inner, const std::vector<std::string>& names,
                const std::vector<bool>& roots)
        : inner_(inner), names_(names), roots_(roots) {}

    StructuredValue on_node(size_t index, const NodeRequest& request) override {
        if (index >= names_.size()) {
            throw StructureError("model emitted more than the expected " +
                                 std::to_string(names_.size()) + " nodes");
        }
        if (request.name != names_[index] || request.root != roots_[index]) {
            throw StructureError("model emission " + std::to_string(index) + " changed: got '" +
                                 request.name + "' (root=" + (request.root ? "1" : "0") +
                                 "), expected '" + names_[index] +
                                 "' (root=" + (roots_[index] ? "1" : "0") + ")");
        }
        seen_ = index + 1;
        return inner_.on_node(index, request);
    }

    size_t seen() const { return seen_; }

private:
    NodeSink& inner_;
    const std::vector<std::string>& names_;
    const std::vector<bool>& roots_;
    size_t seen_ = 0;
};

// Probe sink used once at compile time to record the canonical sequence.
class ProbeSink final : public NodeSink {
public:
    explicit ProbeSink(uint64_t pass_key) : pass_key_(pass_key) {}

    StructuredValue on_node(size_t index, const NodeRequest& request) override {
        if (!request.dist) throw Error("model emitted a null distribution");
        names.push_back(request.name);
        roots.push_back(request.root);
        dists.push_back(request.dist);
        RandomStream rng = node_stream(pass_key_, index);
        StructuredValue v = request.dist->sample_structured(Shape{}, rng);
        return v;
    }

    std::vector<std::string> names;
    std::vector<bool> roots;
    std::vector<DistLikePtr> dists;

private:
    uint64_t pass_key_;
};

}  // namespace

JointDistribution::JointDistribution(std::shared_ptr<const ModelBackend> backend)
    : backend_(std::move(backend)) {}

JointPtr JointDistribution::compile(std::shared_ptr<const ModelBackend> backend) {
    if (!backend) throw Error("null model backend");
    auto jd = std::shared_ptr<JointDistribution>(new JointDistribution(std::move(backend)));

    ProbeSink probe(0x7Fu);
    jd->backend_->drive(probe);
    jd->names_ = std::move(probe.names);
    jd->roots_ = std::move(probe.roots);
    jd->probe_dists_ = std::move(probe.dists);

    for (size_t i = 0; i < jd->names_.size(); ++i) {
        for (size_t j = i + 1; j < jd->names_.size(); ++j) {
            if (jd->names_[i] == jd->names_[j]) {
                throw StructureError("duplicate node name '" + jd->names_[i] + "'");
            }
        }
    }

    std::vector<Structure<DType>> dtypes;
    std::vector<Structure<Shape>> events, batches;
    for (const auto& d : jd->probe_dists_) {
        dtypes.push_back(d->dtype_structure());
        events.push_back(d->event_structure());
        batches.push_back(d->batch_structure());
    }
    const bool dict = jd->backend_->dict_shaped();
    jd->dtype_structure_ = compose_structure(dict, jd->names_, std::move(dtypes));
    jd->event_structure_ = compose_structure(dict, jd->names_, std::move(events));
    jd->batch_structure_ = compose_structure(dict, jd->names_, std::move(batches));

    for (const auto& d : jd->probe_dists_) d->collect_variables_into(jd->variables_);
    for (size_t i = 0; i < jd->variables_.size(); ++i) {
        for (size_t j = i + 1; j < jd->variables_.size(); ++j) {
            if (jd->variables_[i]->name() == jd->variables_[j]->name()) {
                throw Error("distinct variables share the name '" + jd->variables_[i]->name() +
                            "'");
            }
        }
    }
    return jd;
}

void JointDistribution::drive_checked(NodeSink& sink) const {
    CheckedSink checked(sink, names_, roots_);
    backend_->drive(checked);
    if (checked.seen() != names_.size()) {
        throw StructureError("model emitted " + std::to_string(checked.seen()) + " nodes, expected " +
                             std::to_string(names_.size()));
    }
}

std::pair<std::vector<DistLikePtr>, std::vector<StructuredValue>>
JointDistribution::flat_sample_distributions(const Shape& sample_shape,
                                             const std::vector<std::optional<StructuredValue>>& values,
                                             RandomStream& rng,
                                             std::vector<Shape>* sample_shape_trace) const {
    if (!values.empty() && values.size() != node_count()) {
        throw StructureError("expected " + std::to_string(node_count()) +
                             " value slots, got " + std::to_string(values.size()));
    }
    const uint64_t pass_key = rng.next_u64();
    ForwardSink sink(sample_shape, &values, pass_key, sample_shape_trace);
    drive_checked(sink);
    return {std::move(sink.dists), std::move(sink.values_out)};
}

StructuredValue JointDistribution::sample(const Shape& sample_shape, RandomStream& rng) const {
    auto [ds, xs] = flat_sample_distributions(sample_shape, {}, rng);
    return unflatten(std::move(xs));
}

Expr JointDistribution::log_prob(const StructuredValue& x) const {
    auto values = flatten(x, /*allow_missing=*/false);
    RandomStream unused(0);
    auto [ds, xs] = flat_sample_distributions(Shape{}, values, unused);
    if (ds.empty()) return Expr(0.0);
    Expr total = ds[0]->log_prob_structured(xs[0]);
    for (size_t i = 1; i < ds.size(); ++i) {
        total = add(total, ds[i]->log_prob_structured(xs[i]));
    }
    return total;
}

std::pair<Structure<DistLikePtr>, StructuredValue> JointDistribution::sample_distributions(
    const Shape& sample_shape, const StructuredValue& value, RandomStream& rng) const {
    std::vector<std::optional<StructuredValue>> values;
    if (!value.is_missing()) values = flatten(value, /*allow_missing=*/true);
    auto [ds, xs] = flat_sample_distributions(sample_shape, values, rng);
    std::vector<Structure<DistLikePtr>> parts;
    parts.reserve(ds.size());
    for (const auto& d : ds) parts.emplace_back(d);
    return {compose_structure(backend_->dict_shaped(), names_, std::move(parts)),
            unflatten(std::move(xs))};
}

std::vector<std::optional<StructuredValue>> JointDistribution::flatten(
    const StructuredValue& value, bool allow_missing) const {
    std::vector<std::optional<StructuredValue>> out(node_count());
    if (backend_->dict_shaped()) {
        if (!value.is_dict()) {
            throw StructureError("expected a named map with keys for " + describe());
        }
        std::vector<bool> used(value.dict().size(), false);
        for (size_t i = 0; i < node_count(); ++i) {
            bool found = false;
            for (size_t k = 0; k < value.dict().size(); ++k) {
                if (value.dict()[k].first == names_[i]) {
                    out[i] = value.dict()[k].second;
                    used[k] = true;
                    found = true;
                    break;
                }
            }
            if (!found) {
                throw StructureError("named map is missing the entry '" + names_[i] + "'");
            }
        }
        for (size_t k = 0; k < used.size(); ++k) {
            if (!used[k]) {
                throw StructureError("named map has an unknown entry '" +
                                     value.dict()[k].first + "'");
            }
        }
    } else {
        if (!value.is_list()) {
            throw StructureError("expected an ordered list of " + std::to_string(node_count()) +
                                 " values for " + describe());
        }
        if (value.list().size() != node_count()) {
            throw StructureError("expected " + std::to_string(node_count()) + " values, got " +
                                 std::to_string(value.list().size()));
        }
        for (size_t i = 0; i < node_count(); ++i) out[i] = value.list()[i];
    }
    for (size_t i = 0; i < node_count(); ++i) {
        if (out[i]->is_missing()) {
            out[i].reset();
        } else if (out[i]->contains_missing() && !allow_missing) {
            throw StructureError("node " + std::to_string(i) + " ('" + names_[i] +
                                 "') has missing leaves where a full value is required");
        }
        if (!allow_missing && !out[i].has_value()) {
            throw StructureError("node " + std::to_string(i) + " ('" + names_[i] +
                                 "') is missing where a full value is required");
        }
    }
    return out;
}

StructuredValue JointDistribution::unflatten(std::vector<StructuredValue> parts) const {
    if (parts.size() != node_count()) {
        throw StructureError("expected " + std::to_string(node_count()) + " parts, got " +
                             std::to_string(parts.size()));
    }
    if (!backend_->dict_shaped()) return StructuredValue::list(std::move(parts));
    StructuredValue::Dict d;
    for (size_t i = 0; i < parts.size(); ++i) d.emplace_back(names_[i], std::move(parts[i]));
    return StructuredValue::dict(std::move(d));
}

void JointDistribution::require_independent(const char* what) const {
    for (size_t i = 0; i < roots_.size(); ++i) {
        if (!roots_[i]) {
            throw CapabilityError(std::string(what) + " is only defined when all components are "
                                  "independent; node " + std::to_string(i) + " ('" + names_[i] +
                                  "') is dependent");
        }
    }
}

StructuredValue JointDistribution::joint_mean() const {
    require_independent("mean");
    std::vector<StructuredValue> parts;
    for (const auto& d : probe_dists_) parts.push_back(d->mean_structured());
    return unflatten(std::move(parts));
}

StructuredValue JointDistribution::joint_stddev() const {
    require_independent("stddev");
    std::vector<StructuredValue> parts;
    for (const auto& d : probe_dists_) parts.push_back(d->stddev_structured());
    return unflatten(std::move(parts));
}

Expr JointDistribution::joint_entropy() const {
    require_independent("entropy");
    Expr total(0.0);
    for (const auto& d : probe_dists_) total = add(total, d->entropy());
    return total;
}

std::vector<VariablePtr> JointDistribution::trainable_variables() const {
    std::vector<VariablePtr> out;
    for (const auto& v : variables_) {
        if (v->trainable()) out.push_back(v);
    }
    return out;
}

StructuredValue JointDistribution::sample_structured(const Shape& sample_shape,
                                                     RandomStream& rng) const {
    return sample(sample_shape, rng);
}

Expr JointDistribution::log_prob_structured(const StructuredValue& x) const {
    return log_prob(x);
}

void JointDistribution::collect_variables_into(std::vector<VariablePtr>& out) const {
    for (const auto& v : variables_) {
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
}

bool JointDistribution::has_batched_params() const {
    return std::any_of(probe_dists_.begin(), probe_dists_.end(),
                       [](const DistLikePtr& d) { return d->has_batched_params(); });
}

StructuredValue JointDistribution::realize(const Shape& sample_shape, const StructuredValue& value,
                                           RandomStream& rng) const {
    if (value.is_missing()) return sample(sample_shape, rng);
    auto values = flatten(value, /*allow_missing=*/true);
    if (!value.contains_missing()) return value;
    auto [ds, xs] = flat_sample_distributions(sample_shape, values, rng);
    return unflatten(std::move(xs));
}

std::string JointDistribution::describe() const {
    return std::string("JointDistribution[") + backend_->flavor_name() + ", " +
           std::to_string(node_count()) + " nodes]";
}

}  // namespace jointdist
