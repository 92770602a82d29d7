#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jointdist/shape.hpp"

namespace jointdist {

enum class DType { Real64, Int64 };

const char* dtype_name(DType dtype);

/// Immutable dense tensor. Buffers are shared, so copies are cheap.
class Tensor {
public:
    /// Real64 scalar zero.
    Tensor();

    static Tensor scalar(double v);
    static Tensor scalar_int(int64_t v);
    static Tensor real(std::vector<double> values, Shape shape);
    static Tensor ints(std::vector<int64_t> values, Shape shape);
    static Tensor zeros(const Shape& shape);
    static Tensor ones(const Shape& shape);
    static Tensor full(const Shape& shape, double v);

    DType dtype() const { return dtype_; }
    const Shape& shape() const { return shape_; }
    int64_t size() const { return shape_.num_elements(); }

    std::span<const double> reals() const;
    std::span<const int64_t> ints64() const;

    /// Widening read of one flat element.
    double as_real(int64_t flat_index) const;

    /// Value of a size-1 real64 tensor (int64 is widened).
    double scalar_value() const;

    /// Copy with dtype real64 (identity for real tensors).
    Tensor widened() const;

    std::string str() const;

private:
    DType dtype_ = DType::Real64;
    Shape shape_;
    std::shared_ptr<const std::vector<double>> real_;
    std::shared_ptr<const std::vector<int64_t>> int_;
};

/// Per-axis slice: a half-open range, or a single index (which removes the
/// axis). Negative axes address from the end of the rank, so event-dim slices
/// stay valid when leading batch axes appear.
struct SlicePiece {
    enum class Kind { Range, Index };

    int64_t axis = 0;
    Kind kind = Kind::Range;
    int64_t start = 0;
    std::optional<int64_t> stop;  // nullopt = to end of axis
    int64_t index = 0;

    static SlicePiece range(int64_t axis, int64_t start, std::optional<int64_t> stop) {
        SlicePiece p;
        p.axis = axis;
        p.kind = Kind::Range;
        p.start = start;
        p.stop = stop;
        return p;
    }
    static SlicePiece at(int64_t axis, int64_t index) {
        SlicePiece p;
        p.axis = axis;
        p.kind = Kind::Index;
        p.index = index;
        return p;
    }
};

// Numeric kernels. These operate on materialized tensors; the expression
// graph in expr.hpp builds on them for both evaluation and adjoints.

Tensor broadcast_to(const Tensor& x, const Shape& target);

/// Sums an adjoint back down to `target` (inverse of broadcasting): extra
/// leading axes are summed away, axes of extent 1 in `target` are summed over.
Tensor reduce_to_shape(const Tensor& x, const Shape& target);

/// `axes` empty means all axes. Negative axes address from the end.
Tensor reduce_sum(const Tensor& x, const std::vector<int64_t>& axes, bool keep_dims);

Tensor matmul(const Tensor& a, const Tensor& b, bool adjoint_a, bool adjoint_b);
Shape matmul_result_shape(const Shape& a, const Shape& b, bool adjoint_a, bool adjoint_b);

Tensor slice(const Tensor& x, const std::vector<SlicePiece>& pieces);
Shape slice_result_shape(const Shape& shape, const std::vector<SlicePiece>& pieces);

/// Adds `grad` (shaped like the slice result) into zeros of `input_shape` at
/// the sliced positions. Adjoint of `slice`.
Tensor slice_scatter(const Tensor& grad, const Shape& input_shape,
                     const std::vector<SlicePiece>& pieces);

Tensor transpose(const Tensor& x, const std::vector<int64_t>& perm);
Tensor reshape(const Tensor& x, const Shape& target);

}  // namespace jointdist
