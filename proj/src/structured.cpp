#include "jointdist/structured.hpp"

#include <algorithm>

namespace jointdist {

StructuredValue::StructuredValue(Expr leaf) : kind_(Kind::Leaf), leaf_(std::move(leaf)) {
    if (!leaf_.defined()) throw StructureError("leaf built from an undefined expression");
}

StructuredValue::StructuredValue(const Tensor& leaf) : StructuredValue(Expr::constant(leaf)) {}

StructuredValue::StructuredValue(double scalar) : StructuredValue(Expr(scalar)) {}

StructuredValue StructuredValue::list(List items) {
    StructuredValue v;
    v.kind_ = Kind::List;
    v.list_ = std::move(items);
    return v;
}

StructuredValue StructuredValue::dict(Dict items) {
    StructuredValue v;
    v.kind_ = Kind::Dict;
    v.dict_ = std::move(items);
    std::sort(v.dict_.begin(), v.dict_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (size_t i = 1; i < v.dict_.size(); ++i) {
        if (v.dict_[i - 1].first == v.dict_[i].first) {
            throw StructureError("duplicate key '" + v.dict_[i].first + "' in named map");
        }
    }
    return v;
}

const Expr& StructuredValue::leaf() const {
    if (kind_ != Kind::Leaf) throw StructureError("expected a tensor leaf");
    return leaf_;
}

Tensor StructuredValue::tensor() const { return leaf().eval(); }

const StructuredValue::List& StructuredValue::list() const {
    if (kind_ != Kind::List) throw StructureError("expected an ordered list");
    return list_;
}

const StructuredValue::Dict& StructuredValue::dict() const {
    if (kind_ != Kind::Dict) throw StructureError("expected a named map");
    return dict_;
}

const StructuredValue& StructuredValue::at(const std::string& key) const {
    for (const auto& [k, v] : dict()) {
        if (k == key) return v;
    }
    throw StructureError("no entry named '" + key + "' in named map");
}

const StructuredValue& StructuredValue::at(size_t index) const {
    const List& l = list();
    if (index >= l.size()) {
        throw StructureError("list index " + std::to_string(index) + " out of range");
    }
    return l[index];
}

bool StructuredValue::contains_missing() const {
    switch (kind_) {
        case Kind::Missing: return true;
        case Kind::Leaf: return false;
        case Kind::List:
            return std::any_of(list_.begin(), list_.end(),
                               [](const StructuredValue& v) { return v.contains_missing(); });
        case Kind::Dict:
            return std::any_of(dict_.begin(), dict_.end(),
                               [](const auto& kv) { return kv.second.contains_missing(); });
    }
    return false;
}

StructuredValue StructuredValue::map_leaves(const std::function<Expr(const Expr&)>& fn) const {
    switch (kind_) {
        case Kind::Missing: return missing();
        case Kind::Leaf: return StructuredValue(fn(leaf_));
        case Kind::List: {
            List out;
            out.reserve(list_.size());
            for (const auto& v : list_) out.push_back(v.map_leaves(fn));
            return list(std::move(out));
        }
        case Kind::Dict: {
            Dict out;
            out.reserve(dict_.size());
            for (const auto& [k, v] : dict_) out.emplace_back(k, v.map_leaves(fn));
            return dict(std::move(out));
        }
    }
    return missing();
}

namespace {

void walk(const StructuredValue& v, const std::string& path,
          const std::function<void(const std::string&, const Expr&)>& fn) {
    switch (v.kind()) {
        case StructuredValue::Kind::Missing: return;
        case StructuredValue::Kind::Leaf: fn(path, v.leaf()); return;
        case StructuredValue::Kind::List:
            for (size_t i = 0; i < v.list().size(); ++i) {
                walk(v.list()[i], path + "[" + std::to_string(i) + "]", fn);
            }
            return;
        case StructuredValue::Kind::Dict:
            for (const auto& [k, child] : v.dict()) {
                walk(child, path.empty() ? k : path + "." + k, fn);
            }
            return;
    }
}

}  // namespace

void StructuredValue::for_each_leaf(
    const std::function<void(const std::string&, const Expr&)>& fn) const {
    walk(*this, "", fn);
}

bool values_equal(const StructuredValue& a, const StructuredValue& b) {
    if (a.kind() != b.kind()) return false;
    switch (a.kind()) {
        case StructuredValue::Kind::Missing: return true;
        case StructuredValue::Kind::Leaf: {
            const Tensor ta = a.tensor();
            const Tensor tb = b.tensor();
            if (ta.dtype() != tb.dtype() || !(ta.shape() == tb.shape())) return false;
            for (int64_t i = 0; i < ta.size(); ++i) {
                if (ta.as_real(i) != tb.as_real(i)) return false;
            }
            return true;
        }
        case StructuredValue::Kind::List: {
            if (a.list().size() != b.list().size()) return false;
            for (size_t i = 0; i < a.list().size(); ++i) {
                if (!values_equal(a.list()[i], b.list()[i])) return false;
            }
            return true;
        }
        case StructuredValue::Kind::Dict: {
            if (a.dict().size() != b.dict().size()) return false;
            for (size_t i = 0; i < a.dict().size(); ++i) {
                if (a.dict()[i].first != b.dict()[i].first) return false;
                if (!values_equal(a.dict()[i].second, b.dict()[i].second)) return false;
            }
            return true;
        }
    }
    return false;
}

}  // namespace jointdist
