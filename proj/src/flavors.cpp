#include "jointdist/flavors.hpp"

#include <algorithm>
#include <set>

#include "jointdist/errors.hpp"

namespace jointdist {

SequentialEntry::SequentialEntry(DistLikePtr dist, std::string label)
    : dist_(std::move(dist)), label_(std::move(label)) {
    if (!dist_) throw Error("null distribution in sequential entry");
}

DistLikePtr SequentialEntry::make(std::span<const StructuredValue> args) const {
    DistLikePtr d = fn_(args);
    if (!d) throw Error("dependent entry returned a null distribution");
    return d;
}

namespace {

std::string default_label(const std::string& label, size_t index) {
    return label.empty() ? "x" + std::to_string(index) : label;
}

class SequentialBackend final : public ModelBackend {
public:
    explicit SequentialBackend(std::vector<SequentialEntry> entries)
        : entries_(std::move(entries)) {
        for (size_t i = 0; i < entries_.size(); ++i) {
            if (!entries_[i].is_root() && entries_[i].arity() > i) {
                throw StructureError("entry " + std::to_string(i) + " takes " +
                                     std::to_string(entries_[i].arity()) + " arguments but only " +
                                     std::to_string(i) + " predecessors exist");
            }
        }
    }

    void drive(NodeSink& sink) const override {
        std::vector<StructuredValue> realized;
        realized.reserve(entries_.size());
        for (size_t i = 0; i < entries_.size(); ++i) {
            const auto& e = entries_[i];
            NodeRequest req;
            req.name = default_label(e.label(), i);
            if (e.is_root()) {
                req.dist = e.dist();
                req.root = true;
            } else {
                // Nearest predecessor first: args = x[i-1], x[i-2], ...
                std::vector<StructuredValue> args;
                args.reserve(e.arity());
                for (size_t k = 1; k <= e.arity(); ++k) args.push_back(realized[i - k]);
                req.dist = e.make(args);
                req.root = false;
            }
            realized.push_back(sink.on_node(i, req));
        }
    }

    bool dict_shaped() const override { return false; }
    const char* flavor_name() const override { return "sequential"; }

private:
    std::vector<SequentialEntry> entries_;
};

}  // namespace

JointPtr make_sequential_joint(std::vector<SequentialEntry> entries) {
    return JointDistribution::compile(std::make_shared<SequentialBackend>(std::move(entries)));
}

NamedEntry::NamedEntry(DistLikePtr dist) : dist_(std::move(dist)) {
    if (!dist_) throw Error("null distribution in named entry");
}

DistLikePtr NamedEntry::make(std::span<const StructuredValue> args) const {
    DistLikePtr d = fn_(args);
    if (!d) throw Error("dependent entry returned a null distribution");
    return d;
}

namespace {

class NamedBackend final : public ModelBackend {
public:
    explicit NamedBackend(std::map<std::string, NamedEntry> entries)
        : entries_(std::move(entries)) {
        for (const auto& [name, entry] : entries_) {
            for (const auto& p : entry.parameters()) {
                if (!entries_.count(p)) {
                    throw StructureError("entry '" + name + "' references unknown entry '" + p +
                                         "'");
                }
            }
        }
        order_ = topological_order();
    }

    void drive(NodeSink& sink) const override {
        std::map<std::string, StructuredValue> realized;
        for (size_t i = 0; i < order_.size(); ++i) {
            const std::string& name = order_[i];
            const NamedEntry& e = entries_.at(name);
            NodeRequest req;
            req.name = name;
            if (e.is_root()) {
                req.dist = e.dist();
                req.root = true;
            } else {
                std::vector<StructuredValue> args;
                args.reserve(e.parameters().size());
                for (const auto& p : e.parameters()) args.push_back(realized.at(p));
                req.dist = e.make(args);
                req.root = false;
            }
            realized[name] = sink.on_node(i, req);
        }
    }

    bool dict_shaped() const override { return true; }
    const char* flavor_name() const override { return "named"; }

private:
    // Kahn's algorithm with a lexicographic ready set, so the canonical
    // order is deterministic and independent of insertion order.
    std::vector<std::string> topological_order() const {
        std::map<std::string, size_t> pending;
        std::map<std::string, std::vector<std::string>> dependents;
        std::set<std::string> ready;
        for (const auto& [name, entry] : entries_) {
            pending[name] = entry.parameters().size();
            if (entry.parameters().empty()) ready.insert(name);
            for (const auto& p : entry.parameters()) dependents[p].push_back(name);
        }
        std::vector<std::string> order;
        while (!ready.empty()) {
            const std::string name = *ready.begin();
            ready.erase(ready.begin());
            order.push_back(name);
            for (const auto& d : dependents[name]) {
                if (--pending[d] == 0) ready.insert(d);
            }
        }
        if (order.size() != entries_.size()) {
            std::string cycle;
            for (const auto& [name, n] : pending) {
                if (n > 0) cycle += (cycle.empty() ? "" : ", ") + name;
            }
            throw StructureError("dependency cycle among entries {" + cycle + "}");
        }
        return order;
    }

    std::map<std::string, NamedEntry> entries_;
    std::vector<std::string> order_;
};

}  // namespace

JointPtr make_named_joint(std::map<std::string, NamedEntry> entries) {
    return JointDistribution::compile(std::make_shared<NamedBackend>(std::move(entries)));
}

StructuredValue ModelContext::request(DistLikePtr d, bool root, std::string label) {
    if (!d) throw Error("draw of a null distribution");
    NodeRequest req;
    req.dist = std::move(d);
    req.root = root;
    req.name = default_label(label, index_);
    return sink_.on_node(index_++, req);
}

Expr ModelContext::draw(const DistLikePtr& d, std::string label) {
    return request(d, false, std::move(label)).leaf();
}

Expr ModelContext::draw(const Root& root, std::string label) {
    return request(root.dist, true, std::move(label)).leaf();
}

StructuredValue ModelContext::draw_value(const DistLikePtr& d, std::string label) {
    return request(d, false, std::move(label));
}

StructuredValue ModelContext::draw_value(const Root& root, std::string label) {
    return request(root.dist, true, std::move(label));
}

class ProgramBackend final : public ModelBackend {
public:
    explicit ProgramBackend(ModelProgram program) : program_(std::move(program)) {
        if (!program_) throw Error("null model program");
    }

    void drive(NodeSink& sink) const override {
        ModelContext ctx(sink);
        program_(ctx);
    }

    bool dict_shaped() const override { return false; }
    const char* flavor_name() const override { return "program"; }

private:
    ModelProgram program_;
};

JointPtr make_program_joint(ModelProgram program) {
    return JointDistribution::compile(std::make_shared<ProgramBackend>(std::move(program)));
}

EquivalenceReport check_flavor_equivalence(std::span<const JointPtr> models,
                                           std::span<const StructuredValue> probe_values,
                                           uint64_t seed) {
    EquivalenceReport report;
    if (models.size() < 2) return report;
    const JointPtr& reference = models[0];

    for (size_t v = 0; v < probe_values.size(); ++v) {
        auto flat = reference->flatten(probe_values[v], false);
        std::vector<StructuredValue> parts;
        for (auto& slot : flat) parts.push_back(*slot);
        const double expected = reference->log_prob(probe_values[v]).eval().scalar_value();
        for (size_t m = 1; m < models.size(); ++m) {
            const StructuredValue x = models[m]->unflatten(parts);
            const double got = models[m]->log_prob(x).eval().scalar_value();
            if (got != expected) {
                report.log_probs_equal = false;
                report.detail += "log_prob mismatch on value " + std::to_string(v) + " model " +
                                 std::to_string(m) + ": " + std::to_string(expected) + " vs " +
                                 std::to_string(got) + "\n";
            }
        }
    }

    std::vector<std::vector<StructuredValue>> flat_samples;
    for (const auto& m : models) {
        RandomStream rng(seed);
        auto sample = m->sample(Shape{}, rng);
        auto flat = m->flatten(sample, false);
        std::vector<StructuredValue> parts;
        for (auto& slot : flat) parts.push_back(*slot);
        flat_samples.push_back(std::move(parts));
    }
    for (size_t m = 1; m < models.size(); ++m) {
        for (size_t i = 0; i < flat_samples[0].size(); ++i) {
            if (!values_equal(flat_samples[0][i], flat_samples[m][i])) {
                report.samples_equal = false;
                report.detail += "sample mismatch at node " + std::to_string(i) + " model " +
                                 std::to_string(m) + "\n";
            }
        }
    }
    return report;
}

}  // namespace jointdist
