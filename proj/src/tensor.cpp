#include "jointdist/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "jointdist/errors.hpp"

namespace jointdist {

const char* dtype_name(DType dtype) {
    return dtype == DType::Real64 ? "real64" : "int64";
}

Tensor::Tensor()
    : dtype_(DType::Real64),
      real_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor Tensor::scalar(double v) { return real({v}, Shape{}); }

Tensor Tensor::scalar_int(int64_t v) { return ints({v}, Shape{}); }

Tensor Tensor::real(std::vector<double> values, Shape shape) {
    if (static_cast<int64_t>(values.size()) != shape.num_elements()) {
        throw ShapeError("buffer of " + std::to_string(values.size()) +
                         " values does not fill shape " + shape.str());
    }
    Tensor t;
    t.dtype_ = DType::Real64;
    t.shape_ = std::move(shape);
    t.real_ = std::make_shared<const std::vector<double>>(std::move(values));
    t.int_.reset();
    return t;
}

Tensor Tensor::ints(std::vector<int64_t> values, Shape shape) {
    if (static_cast<int64_t>(values.size()) != shape.num_elements()) {
        throw ShapeError("buffer of " + std::to_string(values.size()) +
                         " values does not fill shape " + shape.str());
    }
    Tensor t;
    t.dtype_ = DType::Int64;
    t.shape_ = std::move(shape);
    t.int_ = std::make_shared<const std::vector<int64_t>>(std::move(values));
    t.real_.reset();
    return t;
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0); }

Tensor Tensor::full(const Shape& shape, double v) {
    return real(std::vector<double>(static_cast<size_t>(shape.num_elements()), v), shape);
}

std::span<const double> Tensor::reals() const {
    if (dtype_ != DType::Real64) throw DomainError("expected a real64 tensor, got int64");
    return *real_;
}

std::span<const int64_t> Tensor::ints64() const {
    if (dtype_ != DType::Int64) throw DomainError("expected an int64 tensor, got real64");
    return *int_;
}

double Tensor::as_real(int64_t flat_index) const {
    const size_t i = static_cast<size_t>(flat_index);
    return dtype_ == DType::Real64 ? (*real_)[i] : static_cast<double>((*int_)[i]);
}

double Tensor::scalar_value() const {
    if (size() != 1) {
        throw ShapeError("scalar_value() on tensor of shape " + shape_.str());
    }
    return as_real(0);
}

Tensor Tensor::widened() const {
    if (dtype_ == DType::Real64) return *this;
    std::vector<double> out(int_->size());
    for (size_t i = 0; i < int_->size(); ++i) out[i] = static_cast<double>((*int_)[i]);
    return real(std::move(out), shape_);
}

std::string Tensor::str() const {
    std::ostringstream os;
    os << dtype_name(dtype_) << shape_.str() << '{';
    const int64_t n = std::min<int64_t>(size(), 8);
    for (int64_t i = 0; i < n; ++i) {
        if (i) os << ',';
        os << as_real(i);
    }
    if (size() > n) os << ",...";
    os << '}';
    return os.str();
}

namespace {

// Strides with 0 on broadcast axes, right-aligned against `out`.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    const auto in_strides = row_major_strides(in);
    std::vector<int64_t> strides(static_cast<size_t>(out.rank()), 0);
    const int64_t offset = out.rank() - in.rank();
    for (int64_t i = 0; i < in.rank(); ++i) {
        const int64_t out_axis = i + offset;
        if (in.dims()[static_cast<size_t>(i)] == out.dim(out_axis)) {
            strides[static_cast<size_t>(out_axis)] = in_strides[static_cast<size_t>(i)];
        } else if (in.dims()[static_cast<size_t>(i)] != 1) {
            throw ShapeError("cannot broadcast " + in.str() + " to " + out.str());
        }
    }
    return strides;
}

// Iterates a multi-index over `shape`, calling fn(flat offsets computed from
// the given stride sets).
template <typename Fn>
void for_each_index(const Shape& shape, const std::vector<std::vector<int64_t>>& strides, Fn fn) {
    const int64_t n = shape.num_elements();
    const size_t rank = static_cast<size_t>(shape.rank());
    std::vector<int64_t> idx(rank, 0);
    std::vector<int64_t> offs(strides.size(), 0);
    for (int64_t flat = 0; flat < n; ++flat) {
        fn(offs);
        // Advance the multi-index, updating offsets incrementally.
        for (int64_t a = static_cast<int64_t>(rank) - 1; a >= 0; --a) {
            const size_t ai = static_cast<size_t>(a);
            idx[ai] += 1;
            for (size_t s = 0; s < strides.size(); ++s) offs[s] += strides[s][ai];
            if (idx[ai] < shape.dims()[ai]) break;
            for (size_t s = 0; s < strides.size(); ++s) offs[s] -= idx[ai] * strides[s][ai];
            idx[ai] = 0;
        }
    }
}

}  // namespace

Tensor broadcast_to(const Tensor& x, const Shape& target) {
    if (x.shape() == target) return x;
    const auto strides = broadcast_strides(x.shape(), target);
    const auto src = x.reals();
    std::vector<double> out(static_cast<size_t>(target.num_elements()));
    size_t pos = 0;
    for_each_index(target, {strides}, [&](const std::vector<int64_t>& offs) {
        out[pos++] = src[static_cast<size_t>(offs[0])];
    });
    return Tensor::real(std::move(out), target);
}

Tensor reduce_to_shape(const Tensor& x, const Shape& target) {
    if (x.shape() == target) return x;
    // Sum x into an accumulator of the target shape, routing each input
    // element to the target position it broadcast from.
    const auto t_strides = broadcast_strides(target, x.shape());
    const auto src = x.reals();
    std::vector<double> acc(static_cast<size_t>(target.num_elements()), 0.0);
    size_t pos = 0;
    for_each_index(x.shape(), {t_strides}, [&](const std::vector<int64_t>& offs) {
        acc[static_cast<size_t>(offs[0])] += src[pos++];
    });
    return Tensor::real(std::move(acc), target);
}

Tensor reduce_sum(const Tensor& x, const std::vector<int64_t>& axes, bool keep_dims) {
    std::vector<bool> reduced(static_cast<size_t>(x.shape().rank()), false);
    if (axes.empty()) {
        reduced.assign(reduced.size(), true);
    } else {
        for (int64_t a : axes) {
            const int64_t n = normalize_axis(a, x.shape().rank());
            if (reduced[static_cast<size_t>(n)]) {
                throw ShapeError("duplicate reduction axis " + std::to_string(a));
            }
            reduced[static_cast<size_t>(n)] = true;
        }
    }
    std::vector<int64_t> out_dims;
    std::vector<int64_t> kept_dims;  // target with reduced axes kept as 1
    for (int64_t i = 0; i < x.shape().rank(); ++i) {
        if (reduced[static_cast<size_t>(i)]) {
            if (keep_dims) out_dims.push_back(1);
            kept_dims.push_back(1);
        } else {
            out_dims.push_back(x.shape().dims()[static_cast<size_t>(i)]);
            kept_dims.push_back(x.shape().dims()[static_cast<size_t>(i)]);
        }
    }
    const Tensor summed = reduce_to_shape(x, Shape(std::move(kept_dims)));
    return reshape(summed, Shape(std::move(out_dims)));
}

Shape matmul_result_shape(const Shape& a, const Shape& b, bool adjoint_a, bool adjoint_b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul requires rank >= 2, got " + a.str() + " and " + b.str());
    }
    const int64_t a_rows = adjoint_a ? a.dim(-1) : a.dim(-2);
    const int64_t a_cols = adjoint_a ? a.dim(-2) : a.dim(-1);
    const int64_t b_rows = adjoint_b ? b.dim(-1) : b.dim(-2);
    const int64_t b_cols = adjoint_b ? b.dim(-2) : b.dim(-1);
    if (a_cols != b_rows) {
        throw ShapeError("matmul contraction mismatch: " + a.str() + (adjoint_a ? "^T" : "") +
                         " x " + b.str() + (adjoint_b ? "^T" : "") + " (" + std::to_string(a_cols) +
                         " vs " + std::to_string(b_rows) + ")");
    }
    const Shape lead = broadcast_shapes(a.prefix(a.rank() - 2), b.prefix(b.rank() - 2));
    return lead.concat(Shape{a_rows, b_cols});
}

Tensor matmul(const Tensor& a, const Tensor& b, bool adjoint_a, bool adjoint_b) {
    const Shape out_shape = matmul_result_shape(a.shape(), b.shape(), adjoint_a, adjoint_b);
    const int64_t m = out_shape.dim(-2);
    const int64_t n = out_shape.dim(-1);
    const int64_t k = adjoint_a ? a.shape().dim(-2) : a.shape().dim(-1);

    const Shape lead = out_shape.prefix(out_shape.rank() - 2);
    const Shape a_lead = a.shape().prefix(a.shape().rank() - 2);
    const Shape b_lead = b.shape().prefix(b.shape().rank() - 2);
    const auto a_strides = broadcast_strides(a_lead, lead);
    const auto b_strides = broadcast_strides(b_lead, lead);

    const int64_t a_mat = a.shape().dim(-2) * a.shape().dim(-1);
    const int64_t b_mat = b.shape().dim(-2) * b.shape().dim(-1);
    // Row-major strides inside one matrix, after the optional transposition.
    const int64_t a_rs = adjoint_a ? 1 : a.shape().dim(-1);
    const int64_t a_cs = adjoint_a ? a.shape().dim(-1) : 1;
    const int64_t b_rs = adjoint_b ? 1 : b.shape().dim(-1);
    const int64_t b_cs = adjoint_b ? b.shape().dim(-1) : 1;

    const auto av = a.reals();
    const auto bv = b.reals();
    std::vector<double> out(static_cast<size_t>(out_shape.num_elements()), 0.0);
    int64_t out_pos = 0;
    for_each_index(lead, {a_strides, b_strides}, [&](const std::vector<int64_t>& offs) {
        const double* ap = av.data() + offs[0] * a_mat;
        const double* bp = bv.data() + offs[1] * b_mat;
        double* op = out.data() + out_pos;
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int64_t p = 0; p < k; ++p) {
                    acc += ap[i * a_rs + p * a_cs] * bp[p * b_rs + j * b_cs];
                }
                op[i * n + j] = acc;
            }
        }
        out_pos += m * n;
    });
    return Tensor::real(std::move(out), out_shape);
}

namespace {

struct ResolvedSlice {
    std::vector<int64_t> start;   // per input axis
    std::vector<int64_t> extent;  // per input axis
    std::vector<bool> drop;       // axis removed by an Index piece
};

ResolvedSlice resolve_slices(const Shape& shape, const std::vector<SlicePiece>& pieces) {
    const size_t rank = static_cast<size_t>(shape.rank());
    ResolvedSlice r;
    r.start.assign(rank, 0);
    r.extent.assign(rank, 0);
    r.drop.assign(rank, false);
    for (size_t i = 0; i < rank; ++i) r.extent[i] = shape.dims()[i];
    std::vector<bool> seen(rank, false);
    for (const SlicePiece& p : pieces) {
        const size_t axis = static_cast<size_t>(normalize_axis(p.axis, shape.rank()));
        if (seen[axis]) throw ShapeError("duplicate slice axis " + std::to_string(p.axis));
        seen[axis] = true;
        const int64_t dim = shape.dims()[axis];
        if (p.kind == SlicePiece::Kind::Index) {
            if (p.index < 0 || p.index >= dim) {
                throw ShapeError("index " + std::to_string(p.index) + " out of bounds for axis " +
                                 std::to_string(p.axis) + " of " + shape.str());
            }
            r.start[axis] = p.index;
            r.extent[axis] = 1;
            r.drop[axis] = true;
        } else {
            const int64_t stop = p.stop.value_or(dim);
            if (p.start < 0 || stop > dim || p.start > stop) {
                throw ShapeError("slice [" + std::to_string(p.start) + "," + std::to_string(stop) +
                                 ") out of bounds for axis " + std::to_string(p.axis) + " of " +
                                 shape.str());
            }
            r.start[axis] = p.start;
            r.extent[axis] = stop - p.start;
        }
    }
    return r;
}

Shape sliced_kept_shape(const ResolvedSlice& r) {
    return Shape(std::vector<int64_t>(r.extent.begin(), r.extent.end()));
}

}  // namespace

Shape slice_result_shape(const Shape& shape, const std::vector<SlicePiece>& pieces) {
    const ResolvedSlice r = resolve_slices(shape, pieces);
    std::vector<int64_t> dims;
    for (size_t i = 0; i < r.extent.size(); ++i) {
        if (!r.drop[i]) dims.push_back(r.extent[i]);
    }
    return Shape(std::move(dims));
}

Tensor slice(const Tensor& x, const std::vector<SlicePiece>& pieces) {
    const ResolvedSlice r = resolve_slices(x.shape(), pieces);
    const Shape kept = sliced_kept_shape(r);
    const auto in_strides = row_major_strides(x.shape());
    int64_t base = 0;
    for (size_t i = 0; i < r.start.size(); ++i) base += r.start[i] * in_strides[i];
    const auto src = x.reals();
    std::vector<double> out(static_cast<size_t>(kept.num_elements()));
    size_t pos = 0;
    std::vector<std::vector<int64_t>> strides = {in_strides};
    for_each_index(kept, strides, [&](const std::vector<int64_t>& offs) {
        out[pos++] = src[static_cast<size_t>(base + offs[0])];
    });
    return reshape(Tensor::real(std::move(out), kept), slice_result_shape(x.shape(), pieces));
}

Tensor slice_scatter(const Tensor& grad, const Shape& input_shape,
                     const std::vector<SlicePiece>& pieces) {
    const ResolvedSlice r = resolve_slices(input_shape, pieces);
    const Shape kept = sliced_kept_shape(r);
    const Tensor g = reshape(grad, kept);
    const auto in_strides = row_major_strides(input_shape);
    int64_t base = 0;
    for (size_t i = 0; i < r.start.size(); ++i) base += r.start[i] * in_strides[i];
    const auto src = g.reals();
    std::vector<double> out(static_cast<size_t>(input_shape.num_elements()), 0.0);
    size_t pos = 0;
    for_each_index(kept, {in_strides}, [&](const std::vector<int64_t>& offs) {
        out[static_cast<size_t>(base + offs[0])] += src[pos++];
    });
    return Tensor::real(std::move(out), input_shape);
}

Tensor transpose(const Tensor& x, const std::vector<int64_t>& perm) {
    const int64_t rank = x.shape().rank();
    if (static_cast<int64_t>(perm.size()) != rank) {
        throw ShapeError("permutation size " + std::to_string(perm.size()) +
                         " does not match rank " + std::to_string(rank));
    }
    std::vector<bool> seen(static_cast<size_t>(rank), false);
    std::vector<int64_t> out_dims(static_cast<size_t>(rank));
    for (int64_t i = 0; i < rank; ++i) {
        const int64_t p = normalize_axis(perm[static_cast<size_t>(i)], rank);
        if (seen[static_cast<size_t>(p)]) throw ShapeError("permutation repeats axis");
        seen[static_cast<size_t>(p)] = true;
        out_dims[static_cast<size_t>(i)] = x.shape().dims()[static_cast<size_t>(p)];
    }
    const Shape out_shape{std::vector<int64_t>(out_dims)};
    const auto in_strides = row_major_strides(x.shape());
    std::vector<int64_t> gather(static_cast<size_t>(rank));
    for (int64_t i = 0; i < rank; ++i) {
        gather[static_cast<size_t>(i)] =
            in_strides[static_cast<size_t>(normalize_axis(perm[static_cast<size_t>(i)], rank))];
    }
    const auto src = x.reals();
    std::vector<double> out(static_cast<size_t>(out_shape.num_elements()));
    size_t pos = 0;
    for_each_index(out_shape, {gather}, [&](const std::vector<int64_t>& offs) {
        out[pos++] = src[static_cast<size_t>(offs[0])];
    });
    return Tensor::real(std::move(out), out_shape);
}

Tensor reshape(const Tensor& x, const Shape& target) {
    if (x.size() != target.num_elements()) {
        throw ShapeError("cannot reshape " + x.shape().str() + " to " + target.str());
    }
    if (x.dtype() == DType::Int64) {
        return Tensor::ints(std::vector<int64_t>(x.ints64().begin(), x.ints64().end()), target);
    }
    return Tensor::real(std::vector<double>(x.reals().begin(), x.reals().end()), target);
}

}  // namespace jointdist
