#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "jointdist/errors.hpp"
#include "jointdist/expr.hpp"

namespace jointdist {

/// Nested composition of ordered lists, named maps, and leaves of type T.
/// Named maps keep their entries sorted by key, so equal structures compare
/// and render identically regardless of insertion order.
template <typename T>
class Structure {
public:
    enum class Kind { Leaf, List, Dict };
    using List = std::vector<Structure>;
    using Dict = std::vector<std::pair<std::string, Structure>>;

    Structure() : kind_(Kind::Leaf) {}
    Structure(T leaf) : kind_(Kind::Leaf), leaf_(std::move(leaf)) {}  // NOLINT

    static Structure list(List items) {
        Structure s;
        s.kind_ = Kind::List;
        s.list_ = std::move(items);
        return s;
    }
    static Structure dict(Dict items) {
        Structure s;
        s.kind_ = Kind::Dict;
        s.dict_ = std::move(items);
        std::sort(s.dict_.begin(), s.dict_.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        return s;
    }

    Kind kind() const { return kind_; }
    bool is_leaf() const { return kind_ == Kind::Leaf; }
    bool is_list() const { return kind_ == Kind::List; }
    bool is_dict() const { return kind_ == Kind::Dict; }

    const T& leaf() const {
        if (!is_leaf()) throw StructureError("expected a leaf");
        return leaf_;
    }
    const List& list() const {
        if (!is_list()) throw StructureError("expected an ordered list");
        return list_;
    }
    const Dict& dict() const {
        if (!is_dict()) throw StructureError("expected a named map");
        return dict_;
    }

    bool operator==(const Structure&) const = default;

    /// Renders with a caller-provided leaf printer, e.g. "{a: [2], b: []}".
    std::string str(const std::function<std::string(const T&)>& leaf_str) const {
        switch (kind_) {
            case Kind::Leaf: return leaf_str(leaf_);
            case Kind::List: {
                std::string out = "(";
                for (size_t i = 0; i < list_.size(); ++i) {
                    if (i) out += ", ";
                    out += list_[i].str(leaf_str);
                }
                return out + ")";
            }
            case Kind::Dict: {
                std::string out = "{";
                for (size_t i = 0; i < dict_.size(); ++i) {
                    if (i) out += ", ";
                    out += dict_[i].first + ": " + dict_[i].second.str(leaf_str);
                }
                return out + "}";
            }
        }
        return "";
    }

private:
    Kind kind_;
    T leaf_{};
    List list_;
    Dict dict_;
};

/// Structured value: a tree of tensor-valued leaves (held as expressions),
/// ordered lists, and named maps. A leaf may also be "missing", a
/// distinguished marker used for partial conditioning; missing leaves never
/// appear in outputs.
class StructuredValue {
public:
    enum class Kind { Missing, Leaf, List, Dict };
    using List = std::vector<StructuredValue>;
    using Dict = std::vector<std::pair<std::string, StructuredValue>>;

    /// Default-constructed values are missing.
    StructuredValue() : kind_(Kind::Missing) {}
    StructuredValue(Expr leaf);       // NOLINT: implicit by design
    StructuredValue(const Tensor& leaf);  // NOLINT
    StructuredValue(double scalar);   // NOLINT

    static StructuredValue missing() { return StructuredValue(); }
    static StructuredValue list(List items);
    static StructuredValue dict(Dict items);

    Kind kind() const { return kind_; }
    bool is_missing() const { return kind_ == Kind::Missing; }
    bool is_leaf() const { return kind_ == Kind::Leaf; }
    bool is_list() const { return kind_ == Kind::List; }
    bool is_dict() const { return kind_ == Kind::Dict; }

    const Expr& leaf() const;
    /// Evaluates a leaf to a materialized tensor.
    Tensor tensor() const;
    const List& list() const;
    const Dict& dict() const;

    /// Lookup in a named map; throws StructureError when absent.
    const StructuredValue& at(const std::string& key) const;
    /// Element of an ordered list.
    const StructuredValue& at(size_t index) const;

    bool contains_missing() const;

    /// Applies fn to every leaf (missing nodes are kept as-is).
    StructuredValue map_leaves(const std::function<Expr(const Expr&)>& fn) const;

    /// Visits leaves (not missing markers) with their path, e.g. "a[1]".
    void for_each_leaf(const std::function<void(const std::string&, const Expr&)>& fn) const;

private:
    Kind kind_;
    Expr leaf_;
    List list_;
    Dict dict_;
};

/// Exact equality of evaluated leaves and identical skeletons.
bool values_equal(const StructuredValue& a, const StructuredValue& b);

}  // namespace jointdist
