#pragma once

#include <stdexcept>
#include <string>

namespace jointdist {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape algebra violations: incompatible broadcasts, bad axes, contraction
/// mismatches, out-of-bounds slices.
struct ShapeError : Error {
    using Error::Error;
};

/// Numeric domain violations: log of a non-positive value, parameters outside
/// their domain, values outside a distribution's support.
struct DomainError : Error {
    using Error::Error;
};

/// Structured-value skeleton mismatches: wrong names, arity, dtype, missing
/// leaves where a full value is required, or a model program whose emission
/// sequence changed between runs.
struct StructureError : Error {
    using Error::Error;
};

/// Requested operation is not available for this object (e.g. analytic
/// moments of a model with dependent nodes, entropy without a closed form).
struct CapabilityError : Error {
    using Error::Error;
};

}  // namespace jointdist
