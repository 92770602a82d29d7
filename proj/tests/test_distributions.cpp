#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "jointdist/distributions.hpp"
#include "jointdist/errors.hpp"

using namespace jointdist;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double lp(const DistPtr& d, const Tensor& x) { return d->log_prob(Expr(x)).eval().scalar_value(); }

double lp(const DistPtr& d, double x) { return lp(d, Tensor::scalar(x)); }

// Simpson quadrature of exp(log_prob) over [lo, hi].
double integrate_density(const DistPtr& d, double lo, double hi, int intervals) {
    const double h = (hi - lo) / intervals;
    double acc = 0.0;
    for (int i = 0; i <= intervals; ++i) {
        const double x = lo + i * h;
        const double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += w * std::exp(lp(d, x));
    }
    return acc * h / 3.0;
}

// Gradient of d.log_prob(x) w.r.t. one scalar distribution parameter, checked
// against central finite differences through a rebuild of the distribution.
void check_param_gradient(const std::function<DistPtr(Expr)>& make, double param_value,
                          const Tensor& x, double rel = 1e-6) {
    auto v = make_variable("p", Tensor::scalar(param_value));
    const auto grads = gradient(reduce_sum(make(Expr::variable(v))->log_prob(Expr(x))),
                                std::vector<VariablePtr>{v});
    const double h = 1e-6;
    const double up =
        reduce_sum(make(Expr(param_value + h))->log_prob(Expr(x))).eval().scalar_value();
    const double down =
        reduce_sum(make(Expr(param_value - h))->log_prob(Expr(x))).eval().scalar_value();
    const double fd = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(fd), std::abs(grads[0].scalar_value()), 1e-8});
    CHECK(std::abs(grads[0].scalar_value() - fd) / scale <= rel);
}

}  // namespace

TEST_CASE("shape law: sample(S).shape == S ++ batch ++ event") {
    RandomStream rng(5);
    struct Case {
        DistPtr d;
        Shape batch, event;
    };
    const std::vector<Case> cases = {
        {normal(0.0, Tensor::real({1, 2, 3}, Shape{3})), Shape{3}, Shape{}},
        {normal(Tensor::zeros(Shape{2, 1}), Tensor::ones(Shape{3})), Shape{2, 3}, Shape{}},
        {gamma(2.0, 1.0), Shape{}, Shape{}},
        {inverse_gamma(3.0, 2.0), Shape{}, Shape{}},
        {poisson(Tensor::real({1, 2}, Shape{2})), Shape{2}, Shape{}},
        {bernoulli(0.25), Shape{}, Shape{}},
        {dirichlet(Tensor::ones(Shape{4})), Shape{}, Shape{4}},
        {dirichlet(Tensor::ones(Shape{2, 4})), Shape{2}, Shape{4}},
        {multinomial_probs(5.0, Tensor::real({0.2, 0.3, 0.5}, Shape{3})), Shape{}, Shape{3}},
        {multinomial_logits(Tensor::real({3, 4}, Shape{2}), Tensor::zeros(Shape{2, 3})),
         Shape{2}, Shape{3}},
        {iid_sample(normal(0.0, 1.0), Shape{3, 5}), Shape{}, Shape{3, 5}},
        {independent(normal(Tensor::zeros(Shape{2, 3}), 1.0), 2), Shape{}, Shape{2, 3}},
        {independent(normal(Tensor::zeros(Shape{2, 3}), 1.0), 1), Shape{2}, Shape{3}},
    };
    const std::vector<Shape> sample_shapes = {Shape{}, Shape{5}, Shape{2, 3}};
    for (const auto& c : cases) {
        CHECK(c.d->batch_shape() == c.batch);
        CHECK(c.d->event_shape() == c.event);
        for (const auto& s : sample_shapes) {
            const Expr draw = c.d->sample(s, rng);
            CHECK(draw.shape() == s.concat(c.batch).concat(c.event));
            // log_prob of the draw has shape S ++ batch
            const Expr density = c.d->log_prob(draw);
            CHECK(density.shape() == s.concat(c.batch));
        }
    }
}

TEST_CASE("frozen density values") {
    CHECK(lp(normal(0.0, 1.0), 0.0) == doctest::Approx(-0.9189385332046727).epsilon(1e-14));
    CHECK(lp(inverse_gamma(3.0, 2.0), 1.0) ==
          doctest::Approx(-0.6137056388801094).epsilon(1e-14));
    CHECK(lp(normal(0.0, 100.0), 0.0) ==
          doctest::Approx(-5.524108719192763).epsilon(1e-14));
    CHECK(lp(normal(-7.0, 100.0), 0.0) ==
          doctest::Approx(-5.526558719192763).epsilon(1e-14));
    CHECK(lp(inverse_gamma(3.0, 0.25), 1.0) ==
          doctest::Approx(-5.102030263919617).epsilon(1e-14));
    // cross-checks anchored to published sums
    CHECK(lp(inverse_gamma(3.0, 2.0), 1.0) + lp(normal(0.0, 100.0), 0.0) ==
          doctest::Approx(-6.1378145).epsilon(1e-4));
    CHECK(lp(inverse_gamma(3.0, 0.25), 1.0) + lp(normal(-7.0, 100.0), 0.0) ==
          doctest::Approx(-10.62859).epsilon(1e-4));

    CHECK(lp(gamma(2.0, 1.0), 1.5) ==
          doctest::Approx(-std::lgamma(2.0) + std::log(1.5) - 1.5).epsilon(1e-14));
    CHECK(lp(poisson(4.0), 3.0) ==
          doctest::Approx(3.0 * std::log(4.0) - 4.0 - std::lgamma(4.0)).epsilon(1e-14));
    CHECK(lp(bernoulli(0.25), Tensor::scalar_int(1)) ==
          doctest::Approx(std::log(0.25)).epsilon(1e-14));
    CHECK(lp(bernoulli(0.25), 0.0) == doctest::Approx(std::log(0.75)).epsilon(1e-14));

    // Dirichlet(1,1,1) is uniform on the simplex: density Gamma(3) = 2
    CHECK(lp(dirichlet(Tensor::ones(Shape{3})), Tensor::real({0.2, 0.3, 0.5}, Shape{3})) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));

    // Multinomial(2, [.5,.5]) at (1,1): 2!/(1!1!) * .25 = .5
    CHECK(lp(multinomial_probs(2.0, Tensor::real({0.5, 0.5}, Shape{2})),
             Tensor::real({1, 1}, Shape{2})) == doctest::Approx(std::log(0.5)).epsilon(1e-14));
}

TEST_CASE("independent and iid-sample meta laws") {
    // Independent over [2,3] standard normals at zero: 6 terms
    const DistPtr base = normal(Tensor::zeros(Shape{2, 3}), 1.0);
    const DistPtr ind = independent(base, 2);
    CHECK(lp(ind, Tensor::zeros(Shape{2, 3})) ==
          doctest::Approx(6 * -0.9189385332046727).epsilon(1e-14));

    // Independent log_prob == reduce_sum of inner log_prob, exactly
    RandomStream rng(21);
    const Expr draw = ind->sample(Shape{4}, rng);
    const Tensor via_meta = ind->log_prob(draw).eval();
    const Tensor via_reduce = reduce_sum(base->log_prob(draw), {-1, -2}).eval();
    REQUIRE(via_meta.shape() == via_reduce.shape());
    for (int64_t i = 0; i < via_meta.size(); ++i) {
        CHECK(via_meta.reals()[(size_t)i] == via_reduce.reals()[(size_t)i]);
    }

    // Independent(d, 0) is d on all inputs
    const DistPtr ind0 = independent(base, 0);
    const Tensor same = ind0->log_prob(draw).eval();
    const Tensor orig = base->log_prob(draw).eval();
    for (int64_t i = 0; i < same.size(); ++i) {
        CHECK(same.reals()[(size_t)i] == orig.reals()[(size_t)i]);
    }
    CHECK(ind0->batch_shape() == base->batch_shape());
    CHECK(ind0->event_shape() == base->event_shape());

    // Sample block: event shape law and per-slice sum law
    const DistPtr blk = iid_sample(normal(0.0, 1.0), Shape{4});
    CHECK(blk->event_shape() == Shape{4});
    const Expr bdraw = blk->sample(Shape{3}, rng);
    CHECK(bdraw.shape() == Shape{3, 4});
    const Tensor blk_lp = blk->log_prob(bdraw).eval();
    const Tensor per_slice = reduce_sum(normal(0.0, 1.0)->log_prob(bdraw), {-1}).eval();
    for (int64_t i = 0; i < blk_lp.size(); ++i) {
        CHECK(blk_lp.reals()[(size_t)i] == per_slice.reals()[(size_t)i]);
    }

    CHECK_THROWS_AS(independent(normal(0.0, 1.0), 1), ShapeError);
}

TEST_CASE("iid-sample block over a batched base transposes into the event law") {
    // base batch [2]; block [3]: sample shape law wants S ++ [2] ++ [3]
    const DistPtr base = normal(Tensor::real({0.0, 10.0}, Shape{2}),
                                Tensor::real({1.0, 1.0}, Shape{2}));
    const DistPtr blk = iid_sample(base, Shape{3});
    CHECK(blk->batch_shape() == Shape{2});
    CHECK(blk->event_shape() == Shape{3});
    RandomStream rng(3);
    const Expr draw = blk->sample(Shape{5}, rng);
    CHECK(draw.shape() == Shape{5, 2, 3});
    // the batch axis distinguishes means 0 and 10, the block dims are iid
    const Tensor t = draw.eval();
    for (int64_t s = 0; s < 5; ++s) {
        for (int64_t j = 0; j < 3; ++j) {
            CHECK(std::abs(t.reals()[(size_t)(s * 6 + j)] - 0.0) < 8.0);
            CHECK(std::abs(t.reals()[(size_t)(s * 6 + 3 + j)] - 10.0) < 8.0);
        }
    }
    // log_prob reduces the block axis only
    CHECK(blk->log_prob(draw).shape() == Shape{5, 2});
}

TEST_CASE("continuous univariate densities integrate to one") {
    CHECK(integrate_density(normal(0.3, 1.7), 0.3 - 12 * 1.7, 0.3 + 12 * 1.7, 4000) ==
          doctest::Approx(1.0).epsilon(1e-3));
    CHECK(integrate_density(gamma(2.5, 1.5), 1e-9, 40.0, 8000) ==
          doctest::Approx(1.0).epsilon(1e-3));
    CHECK(integrate_density(inverse_gamma(3.0, 2.0), 1e-4, 200.0, 20000) ==
          doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("discrete pmfs sum to one") {
    // Poisson truncated where the remaining mass is negligible
    const DistPtr p = poisson(6.5);
    double total = 0.0;
    for (int k = 0; k < 80; ++k) total += std::exp(lp(p, static_cast<double>(k)));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    const DistPtr b = bernoulli(0.37);
    CHECK(std::exp(lp(b, 0.0)) + std::exp(lp(b, 1.0)) == doctest::Approx(1.0).epsilon(1e-12));

    // Multinomial(3, 3 cells): enumerate all compositions of 3
    const DistPtr m = multinomial_probs(3.0, Tensor::real({0.2, 0.3, 0.5}, Shape{3}));
    double mass = 0.0;
    for (int a = 0; a <= 3; ++a) {
        for (int c = 0; a + c <= 3; ++c) {
            const double bcount = 3.0 - a - c;
            mass += std::exp(lp(m, Tensor::real({double(a), bcount, double(c)}, Shape{3})));
        }
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("sampler moments across the family") {
    RandomStream rng(2024);
    const int n = 100000;

    auto mean_of = [&](const DistPtr& d) {
        const Tensor t = d->sample(Shape{n}, rng).eval().widened();
        double acc = 0.0;
        for (double v : t.reals()) acc += v;
        return acc / n;
    };

    // 4 standard errors of the mean
    CHECK(std::abs(mean_of(normal(2.0, 3.0)) - 2.0) < 4.0 * 3.0 / std::sqrt(double(n)));
    CHECK(std::abs(mean_of(poisson(4.0)) - 4.0) < 4.0 * 2.0 / std::sqrt(double(n)));
    CHECK(std::abs(mean_of(poisson(45.0)) - 45.0) <
          4.0 * std::sqrt(45.0) / std::sqrt(double(n)));  // exercises the large-rate sampler
    CHECK(std::abs(mean_of(gamma(2.0, 0.5)) - 4.0) <
          4.0 * std::sqrt(2.0 / 0.25) / std::sqrt(double(n)));
    CHECK(std::abs(mean_of(gamma(0.5, 1.0)) - 0.5) <
          4.0 * std::sqrt(0.5) / std::sqrt(double(n)));  // alpha < 1 boost path
    CHECK(std::abs(mean_of(bernoulli(0.25)) - 0.25) < 4.0 * 0.434 / std::sqrt(double(n)));
    // InverseGamma(3,2): mean 1, sd 1
    CHECK(std::abs(mean_of(inverse_gamma(3.0, 2.0)) - 1.0) < 4.0 / std::sqrt(double(n)));

    // Dirichlet mean alpha / alpha0
    const Tensor dd =
        dirichlet(Tensor::real({2.0, 1.0, 1.0}, Shape{3}))->sample(Shape{20000}, rng).eval();
    double first = 0.0;
    for (int i = 0; i < 20000; ++i) first += dd.reals()[(size_t)(3 * i)];
    CHECK(std::abs(first / 20000 - 0.5) < 0.01);

    // Multinomial cell means n * p, and rows always sum to the total
    const DistPtr m = multinomial_probs(10.0, Tensor::real({0.2, 0.3, 0.5}, Shape{3}));
    const Tensor md = m->sample(Shape{20000}, rng).eval();
    double cell0 = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double row = md.reals()[(size_t)(3 * i)] + md.reals()[(size_t)(3 * i + 1)] +
                           md.reals()[(size_t)(3 * i + 2)];
        CHECK(row == 10.0);
        cell0 += md.reals()[(size_t)(3 * i)];
    }
    CHECK(std::abs(cell0 / 20000 - 2.0) < 0.05);
}

TEST_CASE("normal sampling is reparameterized") {
    auto loc = make_variable("loc", Tensor::scalar(1.0));
    auto scale = make_variable("scale", Tensor::scalar(2.0));
    RandomStream rng(8);
    const Expr draw =
        normal(Expr::variable(loc), Expr::variable(scale))->sample(Shape{100}, rng);
    const auto grads =
        gradient(reduce_sum(draw), std::vector<VariablePtr>{loc, scale});
    // d/dloc sum(loc + scale * eps_i) = 100; d/dscale = sum(eps_i)
    CHECK(grads[0].scalar_value() == doctest::Approx(100.0));
    const Tensor values = draw.eval();
    double eps_sum = 0.0;
    for (double v : values.reals()) eps_sum += (v - 1.0) / 2.0;
    CHECK(grads[1].scalar_value() == doctest::Approx(eps_sum).epsilon(1e-12));
    CHECK(normal(0.0, 1.0)->reparameterizable());
    CHECK(!gamma(1.0, 1.0)->reparameterizable());
}

TEST_CASE("density gradients w.r.t. parameters match finite differences") {
    check_param_gradient([](Expr p) { return normal(p, 1.7); }, 0.4, Tensor::scalar(1.1));
    check_param_gradient([](Expr p) { return normal(0.4, p); }, 1.7, Tensor::scalar(1.1));
    check_param_gradient([](Expr p) { return inverse_gamma(p, 2.0); }, 3.0, Tensor::scalar(0.8));
    check_param_gradient([](Expr p) { return inverse_gamma(3.0, p); }, 2.0, Tensor::scalar(0.8));
    check_param_gradient([](Expr p) { return gamma(p, 1.0); }, 2.5, Tensor::scalar(1.4));
    check_param_gradient([](Expr p) { return gamma(2.5, p); }, 1.0, Tensor::scalar(1.4));
    check_param_gradient([](Expr p) { return poisson(p); }, 4.0, Tensor::scalar(3.0));
    check_param_gradient([](Expr p) { return bernoulli(p); }, 0.3, Tensor::scalar(1.0));
    check_param_gradient(
        [](Expr p) {
            return dirichlet(mul(p, Expr(Tensor::real({1.0, 2.0, 0.5}, Shape{3}))));
        },
        1.3, Tensor::real({0.2, 0.3, 0.5}, Shape{3}));
    check_param_gradient(
        [](Expr p) {
            return multinomial_logits(6.0, mul(p, Expr(Tensor::real({0.1, -0.4, 0.3}, Shape{3}))));
        },
        0.9, Tensor::real({2, 1, 3}, Shape{3}));
}

TEST_CASE("support and domain policies") {
    // representable but out-of-support counts give -inf
    CHECK(lp(poisson(4.0), -1.0) == -kInf);
    CHECK(lp(bernoulli(0.25), 2.0) == -kInf);
    const DistPtr m = multinomial_probs(3.0, Tensor::real({0.2, 0.3, 0.5}, Shape{3}));
    CHECK(lp(m, Tensor::real({1, 1, 2}, Shape{3})) == -kInf);   // sums to 4
    CHECK(lp(m, Tensor::real({-1, 2, 2}, Shape{3})) == -kInf);  // negative cell
    CHECK(lp(m, Tensor::real({0.5, 0.5, 2}, Shape{3})) == -kInf);  // non-integer
    CHECK(std::isfinite(lp(m, Tensor::real({1, 0, 2}, Shape{3}))));

    // continuous support violations are density errors, not -inf
    CHECK_THROWS_AS(lp(inverse_gamma(3.0, 2.0), -1.0), DomainError);
    CHECK_THROWS_AS(lp(gamma(2.0, 1.0), 0.0), DomainError);
    CHECK_THROWS_AS(lp(dirichlet(Tensor::ones(Shape{3})),
                       Tensor::real({-0.1, 0.6, 0.5}, Shape{3})),
                    DomainError);

    // parameter domain violations surface when sampling
    RandomStream rng(1);
    CHECK_THROWS_AS(normal(0.0, -1.0)->sample(Shape{}, rng), DomainError);
    CHECK_THROWS_AS(poisson(-2.0)->sample(Shape{}, rng), DomainError);
    CHECK_THROWS_AS(bernoulli(1.5)->sample(Shape{}, rng), DomainError);
    CHECK_THROWS_AS(multinomial_probs(2.5, Tensor::real({0.5, 0.5}, Shape{2}))
                        ->sample(Shape{}, rng),
                    DomainError);
    CHECK_THROWS_AS(
        multinomial_probs(2.0, Tensor::real({0.5, 0.2}, Shape{2}))->sample(Shape{}, rng),
        DomainError);

    // dtype checks: Bernoulli accepts either dtype, Normal does not take ints
    CHECK_NOTHROW(lp(bernoulli(0.5), Tensor::scalar_int(1)));
    CHECK_THROWS_AS(normal(0.0, 1.0)->log_prob(Expr(Tensor::scalar_int(1))), StructureError);

    // event-suffix mismatch is an eager error
    CHECK_THROWS_AS(dirichlet(Tensor::ones(Shape{3}))->log_prob(Expr(Tensor::zeros(Shape{4}))),
                    ShapeError);
}

TEST_CASE("analytic moments") {
    CHECK(normal(3.0, 2.0)->mean().eval().scalar_value() == 3.0);
    CHECK(normal(3.0, 2.0)->stddev().eval().scalar_value() == 2.0);
    CHECK(poisson(4.0)->mean().eval().scalar_value() == 4.0);
    CHECK(inverse_gamma(3.0, 2.0)->mean().eval().scalar_value() == doctest::Approx(1.0));
    CHECK(inverse_gamma(3.0, 2.0)->stddev().eval().scalar_value() == doctest::Approx(1.0));
    CHECK(gamma(2.0, 4.0)->mean().eval().scalar_value() == doctest::Approx(0.5));
    CHECK(bernoulli(0.25)->mean().eval().scalar_value() == 0.25);
    const Tensor dm = dirichlet(Tensor::real({2, 1, 1}, Shape{3}))->mean().eval();
    CHECK(dm.reals()[0] == doctest::Approx(0.5));

    // moments needing higher concentrations are capability errors
    CHECK_THROWS_AS(inverse_gamma(0.5, 2.0)->mean(), CapabilityError);
    CHECK_THROWS_AS(inverse_gamma(1.5, 2.0)->stddev(), CapabilityError);
    CHECK_THROWS_AS(poisson(4.0)->entropy(), CapabilityError);

    // entropies with closed forms
    CHECK(normal(0.0, 1.0)->entropy().eval().scalar_value() ==
          doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi_v<double> *
                                         std::numbers::e_v<double>))
              .epsilon(1e-12));
    const double p = 0.25;
    CHECK(bernoulli(p)->entropy().eval().scalar_value() ==
          doctest::Approx(-p * std::log(p) - (1 - p) * std::log(1 - p)).epsilon(1e-12));
    // entropy sums over batch elements
    CHECK(normal(Tensor::zeros(Shape{3}), 1.0)->entropy().eval().scalar_value() ==
          doctest::Approx(3 * 0.5 * std::log(2.0 * std::numbers::pi_v<double> *
                                             std::numbers::e_v<double>))
              .epsilon(1e-12));
}

TEST_CASE("sampling determinism given seed, shape, and parameters") {
    for (const DistPtr& d :
         {normal(0.0, 1.0), gamma(2.0, 1.0), poisson(7.0),
          multinomial_probs(5.0, Tensor::real({0.5, 0.5}, Shape{2}))}) {
        RandomStream a(123), b(123);
        const Tensor ta = d->sample(Shape{7}, a).eval().widened();
        const Tensor tb = d->sample(Shape{7}, b).eval().widened();
        for (int64_t i = 0; i < ta.size(); ++i) {
            CHECK(ta.reals()[(size_t)i] == tb.reals()[(size_t)i]);
        }
    }
}

TEST_CASE("shape law holds under randomized batch and sample shapes") {
    RandomStream rng(909);
    auto random_dims = [&](int max_rank, int max_extent) {
        std::vector<int64_t> dims;
        const uint64_t rank = rng.next_u64() % (max_rank + 1);
        for (uint64_t i = 0; i < rank; ++i) {
            dims.push_back(int64_t(1 + rng.next_u64() % max_extent));
        }
        return Shape(std::move(dims));
    };
    for (int trial = 0; trial < 30; ++trial) {
        const Shape batch = random_dims(2, 3);
        const Shape sample_shape = random_dims(2, 3);
        const DistPtr d = normal(Tensor::zeros(batch), 1.0);
        CHECK(d->batch_shape() == batch);
        const Expr draw = d->sample(sample_shape, rng);
        CHECK(draw.shape() == sample_shape.concat(batch));
        CHECK(d->log_prob(draw).shape() == sample_shape.concat(batch));

        const DistPtr g = gamma(Tensor::full(batch, 2.0), Tensor::full(batch, 1.0));
        const Expr gd = g->sample(sample_shape, rng);
        CHECK(gd.shape() == sample_shape.concat(batch));
        CHECK(g->log_prob(gd).shape() == sample_shape.concat(batch));
    }
}

TEST_CASE("normal score at the closed-form example") {
    // d/dloc log N(1; loc, 1) at loc = 0 equals (x - loc) = 1
    auto v = make_variable("v", Tensor::scalar(0.0));
    const auto g = gradient(normal(Expr::variable(v), 1.0)->log_prob(Expr(1.0)),
                            std::vector<VariablePtr>{v});
    CHECK(g[0].scalar_value() == doctest::Approx(1.0).epsilon(1e-12));
}
