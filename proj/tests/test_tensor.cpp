#include <doctest.h>

#include <cmath>

#include "jointdist/errors.hpp"
#include "jointdist/random.hpp"
#include "jointdist/special_math.hpp"
#include "jointdist/tensor.hpp"

using namespace jointdist;

TEST_CASE("broadcast_shapes basics") {
    CHECK(broadcast_shapes(Shape{}, Shape{3}) == Shape{3});
    CHECK(broadcast_shapes(Shape{2, 1}, Shape{3}) == Shape{2, 3});
    CHECK_THROWS_AS(broadcast_shapes(Shape{2, 3}, Shape{4}), ShapeError);
    CHECK(broadcast_shapes(Shape{}, Shape{}) == Shape{});
    CHECK(broadcast_shapes(Shape{5, 1, 7}, Shape{1, 6, 1}) == Shape{5, 6, 7});
}

TEST_CASE("broadcast_shapes is commutative and associative where defined") {
    RandomStream rng(41);
    auto random_shape = [](RandomStream& r) {
        std::vector<int64_t> dims;
        const int64_t rank = static_cast<int64_t>(r.next_u64() % 4);
        for (int64_t i = 0; i < rank; ++i) {
            const uint64_t pick = r.next_u64() % 3;
            dims.push_back(pick == 0 ? 1 : static_cast<int64_t>(1 + r.next_u64() % 4));
        }
        return Shape(std::move(dims));
    };
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const Shape a = random_shape(rng), b = random_shape(rng), c = random_shape(rng);
        try {
            const Shape ab_c = broadcast_shapes(broadcast_shapes(a, b), c);
            const Shape a_bc = broadcast_shapes(a, broadcast_shapes(b, c));
            const Shape ba = broadcast_shapes(b, a);
            CHECK(ab_c == a_bc);
            CHECK(broadcast_shapes(a, b) == ba);
            ++checked;
        } catch (const ShapeError&) {
            // incompatible triples are outside the property's domain
        }
    }
    CHECK(checked > 50);
}

TEST_CASE("shape helpers") {
    const Shape s{2, 3, 4};
    CHECK(s.num_elements() == 24);
    CHECK(s.dim(-1) == 4);
    CHECK(s.dim(0) == 2);
    CHECK(s.prefix(2) == Shape{2, 3});
    CHECK(s.suffix(1) == Shape{4});
    CHECK(s.ends_with(Shape{3, 4}));
    CHECK(!s.ends_with(Shape{2, 3}));
    CHECK(Shape{}.num_elements() == 1);
    CHECK(s.str() == "[2,3,4]");
    CHECK_THROWS_AS(normalize_axis(3, 3), ShapeError);
    CHECK(normalize_axis(-1, 3) == 2);
}

TEST_CASE("broadcast_to and reduce_to_shape are adjoint companions") {
    const Tensor x = Tensor::real({1, 2, 3}, Shape{3});
    const Tensor b = broadcast_to(x, Shape{2, 3});
    CHECK(b.reals()[0] == 1);
    CHECK(b.reals()[3] == 1);
    CHECK(b.reals()[5] == 3);

    const Tensor back = reduce_to_shape(b, Shape{3});
    CHECK(back.reals()[0] == 2);
    CHECK(back.reals()[2] == 6);

    const Tensor to_scalar = reduce_to_shape(b, Shape{});
    CHECK(to_scalar.scalar_value() == 12);
}

TEST_CASE("reduce_sum examples") {
    const Tensor m = Tensor::real({1, 2, 3, 4}, Shape{2, 2});
    CHECK(reduce_sum(m, {}, false).scalar_value() == 10);
    const Tensor rows = reduce_sum(m, {1}, false);
    CHECK(rows.shape() == Shape{2});
    CHECK(rows.reals()[0] == 3);
    CHECK(rows.reals()[1] == 7);
    CHECK(reduce_sum(Tensor::scalar(5), {}, false).scalar_value() == 5);
    const Tensor keep = reduce_sum(m, {-1}, true);
    CHECK(keep.shape() == Shape{2, 1});
    CHECK_THROWS_AS(reduce_sum(m, {2}, false), ShapeError);
    CHECK_THROWS_AS(reduce_sum(m, {0, 0}, false), ShapeError);
}

TEST_CASE("matmul shapes and values") {
    CHECK(matmul_result_shape(Shape{3, 5}, Shape{3, 4}, true, false) == Shape{5, 4});
    CHECK_THROWS_AS(matmul_result_shape(Shape{2, 3}, Shape{2, 3}, false, false), ShapeError);

    const Tensor eye = Tensor::real({1, 0, 0, 1}, Shape{2, 2});
    const Tensor prod = matmul(eye, eye, false, false);
    CHECK(prod.reals()[0] == 1);
    CHECK(prod.reals()[1] == 0);
    CHECK(prod.reals()[3] == 1);

    const Tensor a = Tensor::real({1, 2, 3, 4, 5, 6}, Shape{2, 3});
    const Tensor b = Tensor::real({7, 8, 9, 10, 11, 12}, Shape{3, 2});
    const Tensor c = matmul(a, b, false, false);
    CHECK(c.shape() == Shape{2, 2});
    CHECK(c.reals()[0] == 58);
    CHECK(c.reals()[3] == 154);

    // a^T via the adjoint flag equals transposing first.
    const Tensor at = transpose(a, {1, 0});
    const Tensor via_adjoint = matmul(a, c, true, false);
    const Tensor via_transpose = matmul(at, c, false, false);
    for (int64_t i = 0; i < via_adjoint.size(); ++i) {
        CHECK(via_adjoint.reals()[(size_t)i] == via_transpose.reals()[(size_t)i]);
    }

    // Leading batch dims broadcast.
    const Tensor batched = Tensor::real({1, 0, 0, 1, 2, 0, 0, 2}, Shape{2, 2, 2});
    const Tensor mixed = matmul(batched, eye, false, false);
    CHECK(mixed.shape() == Shape{2, 2, 2});
    CHECK(mixed.reals()[4] == 2);
}

TEST_CASE("slice supports ranges, indices, and from-the-end axes") {
    const Tensor x = Tensor::real({0, 1, 2, 3, 4, 5}, Shape{2, 3});

    const Tensor head = slice(x, {SlicePiece::range(1, 0, 2)});
    CHECK(head.shape() == Shape{2, 2});
    CHECK(head.reals()[2] == 3);

    const Tensor tail_axis = slice(x, {SlicePiece::range(-1, 0, 2)});
    CHECK(tail_axis.shape() == Shape{2, 2});

    const Tensor row = slice(x, {SlicePiece::at(0, 1)});
    CHECK(row.shape() == Shape{3});
    CHECK(row.reals()[0] == 3);

    const Tensor full = slice(x, {SlicePiece::range(0, 0, std::nullopt)});
    CHECK(full.shape() == x.shape());
    for (int64_t i = 0; i < x.size(); ++i) CHECK(full.reals()[(size_t)i] == x.reals()[(size_t)i]);

    CHECK_THROWS_AS(slice(x, {SlicePiece::range(0, 0, 3)}), ShapeError);
    CHECK_THROWS_AS(slice(x, {SlicePiece::at(1, 3)}), ShapeError);

    const Tensor g = Tensor::real({10, 20, 30, 40}, Shape{2, 2});
    const Tensor scattered = slice_scatter(g, Shape{2, 3}, {SlicePiece::range(1, 0, 2)});
    CHECK(scattered.shape() == Shape{2, 3});
    CHECK(scattered.reals()[0] == 10);
    CHECK(scattered.reals()[2] == 0);
    CHECK(scattered.reals()[4] == 40);
}

TEST_CASE("tensor dtypes") {
    const Tensor i = Tensor::ints({1, 0, 1}, Shape{3});
    CHECK(i.dtype() == DType::Int64);
    CHECK_THROWS_AS(i.reals(), DomainError);
    CHECK(i.widened().reals()[0] == 1.0);
    CHECK(i.as_real(1) == 0.0);
    CHECK_THROWS_AS(Tensor::real({1, 2}, Shape{3}), ShapeError);
}

TEST_CASE("special functions match reference values") {
    const double euler_gamma = 0.5772156649015329;
    CHECK(digamma(1.0) == doctest::Approx(-euler_gamma).epsilon(1e-12));
    CHECK(digamma(0.5) ==
          doctest::Approx(-euler_gamma - 2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(trigamma(1.0) == doctest::Approx(1.6449340668482264).epsilon(1e-12));
    CHECK(trigamma(0.5) == doctest::Approx(4.934802200544679).epsilon(1e-12));
    // defining recurrences
    for (double x : {0.01, 0.3, 1.7, 12.0}) {
        CHECK(digamma(x + 1.0) == doctest::Approx(digamma(x) + 1.0 / x).epsilon(1e-12));
        CHECK(trigamma(x + 1.0) ==
              doctest::Approx(trigamma(x) - 1.0 / (x * x)).epsilon(1e-11));
    }
    CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(softplus_inverse(softplus(1.3)) == doctest::Approx(1.3).epsilon(1e-12));
    CHECK(softplus(softplus_inverse(2.0)) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("random streams are deterministic and substreams detached") {
    RandomStream a(99), b(99);
    for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());

    RandomStream base(7);
    RandomStream s0 = base.substream(0);
    RandomStream s1 = base.substream(1);
    CHECK(s0.next_u64() != s1.next_u64());

    // substream derivation does not advance the parent
    RandomStream c(7), d(7);
    (void)c.substream(5);
    CHECK(c.next_u64() == d.next_u64());

    RandomStream u(3);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.next_uniform();
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }

    RandomStream g(11);
    double sum = 0, sum2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = g.next_gaussian();
        sum += v;
        sum2 += v * v;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}
