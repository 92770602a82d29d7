#include "jointdist/json_io.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "jointdist/errors.hpp"

namespace jointdist {

namespace {

std::string format_real(double v) {
    if (!std::isfinite(v)) {
        throw Error("cannot serialize non-finite value " + std::to_string(v) + " as JSON");
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_indent(std::ostream& os, bool pretty, int depth) {
    if (!pretty) return;
    os << '\n';
    for (int i = 0; i < depth; ++i) os << "  ";
}

void write_value(std::ostream& os, const StructuredValue& v, bool pretty, int depth) {
    switch (v.kind()) {
        case StructuredValue::Kind::Missing: os << "null"; return;
        case StructuredValue::Kind::Leaf: {
            const Tensor t = v.tensor();
            os << "{\"dtype\": \"" << dtype_name(t.dtype()) << "\", \"shape\": [";
            const auto& dims = t.shape().dims();
            for (size_t i = 0; i < dims.size(); ++i) {
                if (i) os << ", ";
                os << dims[i];
            }
            os << "], \"data\": [";
            for (int64_t i = 0; i < t.size(); ++i) {
                if (i) os << ", ";
                if (t.dtype() == DType::Int64) {
                    os << t.ints64()[static_cast<size_t>(i)];
                } else {
                    os << format_real(t.reals()[static_cast<size_t>(i)]);
                }
            }
            os << "]}";
            return;
        }
        case StructuredValue::Kind::List: {
            os << '[';
            for (size_t i = 0; i < v.list().size(); ++i) {
                if (i) os << ',';
                write_indent(os, pretty, depth + 1);
                write_value(os, v.list()[i], pretty, depth + 1);
            }
            if (!v.list().empty()) write_indent(os, pretty, depth);
            os << ']';
            return;
        }
        case StructuredValue::Kind::Dict: {
            os << '{';
            for (size_t i = 0; i < v.dict().size(); ++i) {
                if (i) os << ',';
                write_indent(os, pretty, depth + 1);
                os << '"' << v.dict()[i].first << "\": ";
                write_value(os, v.dict()[i].second, pretty, depth + 1);
            }
            if (!v.dict().empty()) write_indent(os, pretty, depth);
            os << '}';
            return;
        }
    }
}

bool is_leaf_object(const nlohmann::json& j) {
    return j.is_object() && j.size() == 3 && j.contains("dtype") && j.contains("shape") &&
           j.contains("data");
}

StructuredValue parse(const nlohmann::json& j) {
    if (j.is_null()) return StructuredValue::missing();
    if (is_leaf_object(j)) {
        const std::string dtype = j.at("dtype").get<std::string>();
        std::vector<int64_t> dims;
        for (const auto& d : j.at("shape")) dims.push_back(d.get<int64_t>());
        Shape shape(std::move(dims));
        const auto& data = j.at("data");
        if (dtype == "real64") {
            std::vector<double> values;
            values.reserve(data.size());
            for (const auto& d : data) values.push_back(d.get<double>());
            return StructuredValue(Tensor::real(std::move(values), std::move(shape)));
        }
        if (dtype == "int64") {
            std::vector<int64_t> values;
            values.reserve(data.size());
            for (const auto& d : data) values.push_back(d.get<int64_t>());
            return StructuredValue(Tensor::ints(std::move(values), std::move(shape)));
        }
        throw StructureError("unknown dtype '" + dtype + "' in JSON leaf");
    }
    if (j.is_array()) {
        StructuredValue::List items;
        items.reserve(j.size());
        for (const auto& e : j) items.push_back(parse(e));
        return StructuredValue::list(std::move(items));
    }
    if (j.is_object()) {
        StructuredValue::Dict items;
        for (const auto& [k, e] : j.items()) items.emplace_back(k, parse(e));
        return StructuredValue::dict(std::move(items));
    }
    throw StructureError("JSON value of unsupported type: " + j.dump());
}

std::string shape_str(const Shape& s) { return s.str(); }

template <typename T>
void write_structure(std::ostream& os, const Structure<T>& s,
                     std::string (*leaf_fn)(const T&)) {
    switch (s.kind()) {
        case Structure<T>::Kind::Leaf: os << leaf_fn(s.leaf()); return;
        case Structure<T>::Kind::List: {
            os << '[';
            for (size_t i = 0; i < s.list().size(); ++i) {
                if (i) os << ", ";
                write_structure(os, s.list()[i], leaf_fn);
            }
            os << ']';
            return;
        }
        case Structure<T>::Kind::Dict: {
            os << '{';
            for (size_t i = 0; i < s.dict().size(); ++i) {
                if (i) os << ", ";
                os << '"' << s.dict()[i].first << "\": ";
                write_structure(os, s.dict()[i].second, leaf_fn);
            }
            os << '}';
            return;
        }
    }
}

}  // namespace

std::string to_json(const StructuredValue& v, bool pretty) {
    std::ostringstream os;
    write_value(os, v, pretty, 0);
    return os.str();
}

StructuredValue structured_value_from_json(const std::string& text) {
    try {
        return parse(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw StructureError(std::string("malformed JSON: ") + e.what());
    }
}

std::string to_json(const Structure<Shape>& s) {
    std::ostringstream os;
    write_structure(os, s, +[](const Shape& sh) { return shape_str(sh); });
    return os.str();
}

std::string to_json(const Structure<DType>& s) {
    std::ostringstream os;
    write_structure(os, s,
                    +[](const DType& d) { return '"' + std::string(dtype_name(d)) + '"'; });
    return os.str();
}

}  // namespace jointdist
