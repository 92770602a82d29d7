#include "jointdist/shape.hpp"

#include <algorithm>
#include <sstream>

#include "jointdist/errors.hpp"

namespace jointdist {

namespace {

void check_extents(const std::vector<int64_t>& dims) {
    for (int64_t d : dims) {
        if (d < 0) {
            throw ShapeError("negative extent " + std::to_string(d) + " in shape");
        }
    }
}

}  // namespace

Shape::Shape(std::initializer_list<int64_t> dims) : dims_(dims) { check_extents(dims_); }

Shape::Shape(std::vector<int64_t> dims) : dims_(std::move(dims)) { check_extents(dims_); }

int64_t Shape::dim(int64_t axis) const {
    return dims_[static_cast<size_t>(normalize_axis(axis, rank()))];
}

int64_t Shape::num_elements() const {
    int64_t n = 1;
    for (int64_t d : dims_) n *= d;
    return n;
}

Shape Shape::concat(const Shape& tail) const {
    std::vector<int64_t> out = dims_;
    out.insert(out.end(), tail.dims_.begin(), tail.dims_.end());
    return Shape(std::move(out));
}

Shape Shape::prefix(int64_t n) const {
    if (n < 0 || n > rank()) throw ShapeError("prefix length out of range");
    return Shape(std::vector<int64_t>(dims_.begin(), dims_.begin() + n));
}

Shape Shape::suffix(int64_t n) const {
    if (n < 0 || n > rank()) throw ShapeError("suffix length out of range");
    return Shape(std::vector<int64_t>(dims_.end() - n, dims_.end()));
}

bool Shape::ends_with(const Shape& tail) const {
    if (tail.rank() > rank()) return false;
    return std::equal(tail.dims_.begin(), tail.dims_.end(), dims_.end() - tail.rank());
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < dims_.size(); ++i) {
        if (i) os << ',';
        os << dims_[i];
    }
    os << ']';
    return os.str();
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const int64_t rank = std::max(a.rank(), b.rank());
    std::vector<int64_t> out(static_cast<size_t>(rank), 1);
    for (int64_t i = 0; i < rank; ++i) {
        // Right-aligned: position i counts from the end.
        const int64_t da = i < a.rank() ? a.dims()[a.rank() - 1 - i] : 1;
        const int64_t db = i < b.rank() ? b.dims()[b.rank() - 1 - i] : 1;
        int64_t d;
        if (da == db || db == 1) {
            d = da;
        } else if (da == 1) {
            d = db;
        } else {
            throw ShapeError("cannot broadcast " + a.str() + " with " + b.str() +
                             ": extents " + std::to_string(da) + " vs " + std::to_string(db) +
                             " at axis " + std::to_string(rank - 1 - i) + " of the result");
        }
        out[static_cast<size_t>(rank - 1 - i)] = d;
    }
    return Shape(std::move(out));
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
    std::vector<int64_t> strides(shape.dims().size(), 1);
    for (int64_t i = shape.rank() - 2; i >= 0; --i) {
        strides[static_cast<size_t>(i)] =
            strides[static_cast<size_t>(i + 1)] * shape.dims()[static_cast<size_t>(i + 1)];
    }
    return strides;
}

int64_t normalize_axis(int64_t axis, int64_t rank) {
    const int64_t a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    }
    return a;
}

}  // namespace jointdist
