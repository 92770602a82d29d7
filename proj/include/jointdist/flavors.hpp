#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jointdist/joint.hpp"

namespace jointdist {

namespace detail {

template <typename T>
struct ArgCast;

template <>
struct ArgCast<Expr> {
    static Expr cast(const StructuredValue& v) { return v.leaf(); }
};

template <>
struct ArgCast<StructuredValue> {
    static const StructuredValue& cast(const StructuredValue& v) { return v; }
};

template <typename Fn>
struct CallableTraits : CallableTraits<decltype(&Fn::operator())> {};

template <typename C, typename R, typename... Args>
struct CallableTraits<R (C::*)(Args...) const> {
    static constexpr size_t arity = sizeof...(Args);

    template <typename Fn, size_t... I>
    static DistLikePtr invoke(const Fn& fn, std::span<const StructuredValue> args,
                              std::index_sequence<I...>) {
        return fn(ArgCast<std::decay_t<Args>>::cast(args[I])...);
    }

    template <typename Fn>
    static DistLikePtr call(const Fn& fn, std::span<const StructuredValue> args) {
        return invoke(fn, args, std::make_index_sequence<arity>{});
    }
};

}  // namespace detail

/// One entry of a sequential model: a distribution (a root node) or a
/// function of k previously realized values (a dependent node). Function
/// parameters bind positionally, nearest predecessor first; labels are used
/// for display and error messages only and never affect binding.
class SequentialEntry {
public:
    SequentialEntry(DistLikePtr dist, std::string label = "");  // NOLINT

    template <typename Fn,
              typename = decltype(&Fn::operator())>
    SequentialEntry(Fn fn, std::string label = "")  // NOLINT
        : label_(std::move(label)), arity_(detail::CallableTraits<Fn>::arity) {
        fn_ = [fn = std::move(fn)](std::span<const StructuredValue> args) {
            return detail::CallableTraits<Fn>::call(fn, args);
        };
        static_assert(detail::CallableTraits<Fn>::arity >= 1,
                      "a dependent entry must take at least one argument");
    }

    bool is_root() const { return dist_ != nullptr; }
    size_t arity() const { return arity_; }
    const std::string& label() const { return label_; }
    const DistLikePtr& dist() const { return dist_; }
    DistLikePtr make(std::span<const StructuredValue> args_nearest_first) const;

private:
    DistLikePtr dist_;
    std::function<DistLikePtr(std::span<const StructuredValue>)> fn_;
    std::string label_;
    size_t arity_ = 0;
};

/// Compiles an ordered list of entries. Entry i may depend on at most i
/// predecessors; its first argument is entry i-1, the second i-2, and so on.
JointPtr make_sequential_joint(std::vector<SequentialEntry> entries);

/// One entry of a named model: a distribution, or a function whose parameter
/// names reference other keys of the map.
class NamedEntry {
public:
    NamedEntry(DistLikePtr dist);  // NOLINT

    template <typename Fn, typename = decltype(&Fn::operator())>
    static NamedEntry dependent(std::vector<std::string> parameters, Fn fn) {
        if (parameters.size() != detail::CallableTraits<Fn>::arity) {
            throw StructureError("dependent entry takes " +
                                 std::to_string(detail::CallableTraits<Fn>::arity) +
                                 " arguments but names " + std::to_string(parameters.size()) +
                                 " parameters");
        }
        NamedEntry e;
        e.parameters_ = std::move(parameters);
        e.fn_ = [fn = std::move(fn)](std::span<const StructuredValue> args) {
            return detail::CallableTraits<Fn>::call(fn, args);
        };
        return e;
    }

    bool is_root() const { return dist_ != nullptr; }
    const std::vector<std::string>& parameters() const { return parameters_; }
    const DistLikePtr& dist() const { return dist_; }
    DistLikePtr make(std::span<const StructuredValue> args) const;

private:
    NamedEntry() = default;
    DistLikePtr dist_;
    std::function<DistLikePtr(std::span<const StructuredValue>)> fn_;
    std::vector<std::string> parameters_;
};

/// Compiles a named map of entries. The canonical order is a topological
/// sort of the dependency graph with lexicographic tie-breaking, so it does
/// not depend on insertion order. Samples are named maps.
JointPtr make_named_joint(std::map<std::string, NamedEntry> entries);

/// Marks a model-program request as a parentless node that must receive the
/// caller's sample shape.
struct Root {
    explicit Root(DistLikePtr d) : dist(std::move(d)) {}
    DistLikePtr dist;
};

/// Handed to a model program while it runs. Each draw suspends the program
/// logically: the driver answers with a sampled or provided value and the
/// program continues. The request sequence must be identical across runs.
class ModelContext {
public:
    Expr draw(const DistLikePtr& d, std::string label = "");
    Expr draw(const Root& root, std::string label = "");
    StructuredValue draw_value(const DistLikePtr& d, std::string label = "");
    StructuredValue draw_value(const Root& root, std::string label = "");

private:
    friend class ProgramBackend;
    explicit ModelContext(NodeSink& sink) : sink_(sink) {}
    StructuredValue request(DistLikePtr d, bool root, std::string label);

    NodeSink& sink_;
    size_t index_ = 0;
};

using ModelProgram = std::function<void(ModelContext&)>;

/// Compiles a model program. The canonical order is emission order; samples
/// are ordered lists aligned with it.
JointPtr make_program_joint(ModelProgram program);

/// Cross-checks several expressions of the same model (with a node bijection
/// by canonical index) for agreement: equal log-densities on each probe
/// value, and identical samples under identical seeds. Probe values are given
/// in the structure of models[0].
struct EquivalenceReport {
    bool log_probs_equal = true;
    bool samples_equal = true;
    std::string detail;

    bool ok() const { return log_probs_equal && samples_equal; }
};

EquivalenceReport check_flavor_equivalence(std::span<const JointPtr> models,
                                           std::span<const StructuredValue> probe_values,
                                           uint64_t seed);

}  // namespace jointdist
