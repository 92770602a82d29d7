#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace jointdist {

/// Dense row-major tensor shape. An empty dim list is a scalar.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<int64_t> dims);
    explicit Shape(std::vector<int64_t> dims);

    int64_t rank() const { return static_cast<int64_t>(dims_.size()); }
    bool is_scalar() const { return dims_.empty(); }

    /// Extent of one axis; negative axes count back from the end.
    int64_t dim(int64_t axis) const;

    /// Total element count (1 for scalars).
    int64_t num_elements() const;

    const std::vector<int64_t>& dims() const { return dims_; }

    Shape concat(const Shape& tail) const;
    Shape prefix(int64_t n) const;
    Shape suffix(int64_t n) const;
    bool ends_with(const Shape& tail) const;

    bool operator==(const Shape&) const = default;

    /// "[2,3]"; "[]" for scalars.
    std::string str() const;

private:
    std::vector<int64_t> dims_;
};

/// Right-aligned broadcast of two shapes. Throws ShapeError naming the
/// offending axis when aligned extents differ and neither is 1.
Shape broadcast_shapes(const Shape& a, const Shape& b);

/// Row-major strides (innermost axis has stride 1).
std::vector<int64_t> row_major_strides(const Shape& shape);

/// Maps a possibly-negative axis into [0, rank). Throws ShapeError when out
/// of range.
int64_t normalize_axis(int64_t axis, int64_t rank);

}  // namespace jointdist
