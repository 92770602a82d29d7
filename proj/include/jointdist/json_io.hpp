#pragma once

#include <string>

#include "jointdist/structured.hpp"

namespace jointdist {

/// JSON encoding of structured values: named maps as objects, ordered lists
/// as arrays, missing leaves as null, tensor leaves as
/// {"dtype": "real64"|"int64", "shape": [...], "data": [flat row-major]}.
/// Reals are printed with 17 significant digits so parsing recovers the exact
/// value. Output is deterministic (map keys sorted).
std::string to_json(const StructuredValue& v, bool pretty = false);

StructuredValue structured_value_from_json(const std::string& text);

/// Renderings of structure trees for reports.
std::string to_json(const Structure<Shape>& s);
std::string to_json(const Structure<DType>& s);

}  // namespace jointdist
