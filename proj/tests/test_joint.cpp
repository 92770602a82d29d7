#include <doctest.h>

#include <cmath>

#include "jointdist/errors.hpp"
#include "jointdist/flavors.hpp"

using namespace jointdist;

namespace {

// s ~ InverseGamma(3,2), m ~ Normal(0,1), x ~ Normal(m, s)
JointPtr conjugate_normal_model() {
    std::vector<SequentialEntry> entries;
    entries.emplace_back(inverse_gamma(3.0, 2.0), "s");
    entries.emplace_back(normal(0.0, 1.0), "m");
    entries.emplace_back([](Expr m, Expr s) { return normal(m, s); }, "x");
    return make_sequential_joint(std::move(entries));
}

StructuredValue list3(double s, double m, double x) {
    return StructuredValue::list({StructuredValue(s), StructuredValue(m), StructuredValue(x)});
}

}  // namespace

TEST_CASE("sampling runs the chain and log_prob sums it") {
    const JointPtr jd = conjugate_normal_model();
    CHECK(jd->node_count() == 3);
    CHECK(jd->root_flags() == std::vector<bool>{true, true, false});

    RandomStream rng(17);
    const StructuredValue draw = jd->sample(Shape{}, rng);
    REQUIRE(draw.is_list());
    CHECK(draw.list().size() == 3);

    const double s = draw.at(size_t{0}).tensor().scalar_value();
    const double m = draw.at(size_t{1}).tensor().scalar_value();
    const double x = draw.at(size_t{2}).tensor().scalar_value();
    CHECK(s > 0);

    const double expect = inverse_gamma(3.0, 2.0)->log_prob(Expr(s)).eval().scalar_value() +
                          normal(0.0, 1.0)->log_prob(Expr(m)).eval().scalar_value() +
                          normal(m, s)->log_prob(Expr(x)).eval().scalar_value();
    CHECK(jd->log_prob(draw).eval().scalar_value() == doctest::Approx(expect).epsilon(1e-14));

    // frozen closed-form value at (s=1, m=0, x=0.5)
    CHECK(jd->log_prob(list3(1.0, 0.0, 0.5)).eval().scalar_value() ==
          doctest::Approx(-2.576582705289455).epsilon(1e-14));
}

TEST_CASE("chain-rule identity is exact over seeded samples") {
    const JointPtr jd = conjugate_normal_model();
    for (uint64_t seed = 0; seed < 50; ++seed) {
        RandomStream rng(seed);
        const StructuredValue x = jd->sample(Shape{}, rng);
        RandomStream unused(0);
        const auto [ds, xs] = jd->sample_distributions(Shape{}, x, unused);
        Expr total = ds.list()[0].leaf()->log_prob_structured(xs.at(size_t{0}));
        for (size_t i = 1; i < 3; ++i) {
            total = add(total, ds.list()[i].leaf()->log_prob_structured(xs.at(i)));
        }
        CHECK(jd->log_prob(x).eval().scalar_value() == total.eval().scalar_value());
    }
}

TEST_CASE("partial conditioning uses provided values verbatim") {
    const JointPtr jd = conjugate_normal_model();

    // all parents given: x sampled from Normal(0, 1)
    RandomStream rng(4);
    const StructuredValue value = StructuredValue::list(
        {StructuredValue(1.0), StructuredValue(0.0), StructuredValue::missing()});
    const auto [ds, xs] = jd->sample_distributions(Shape{}, value, rng);
    CHECK(xs.at(size_t{0}).tensor().scalar_value() == 1.0);
    CHECK(xs.at(size_t{1}).tensor().scalar_value() == 0.0);
    const double drawn_x = xs.at(size_t{2}).tensor().scalar_value();
    CHECK(std::isfinite(drawn_x));

    // the conditional distribution for x is Normal(m=1?, no: loc=0, scale=1)
    const auto x_dist = ds.list()[2].leaf();
    CHECK(x_dist->log_prob_structured(StructuredValue(0.0)).eval().scalar_value() ==
          doctest::Approx(normal(0.0, 1.0)->log_prob(Expr(0.0)).eval().scalar_value())
              .epsilon(1e-15));

    // conditional with different parents: Normal(1, 2)
    RandomStream rng2(4);
    const StructuredValue cond = StructuredValue::list(
        {StructuredValue(2.0), StructuredValue(1.0), StructuredValue::missing()});
    const auto [ds2, xs2] = jd->sample_distributions(Shape{}, cond, rng2);
    CHECK(ds2.list()[2].leaf()->log_prob_structured(StructuredValue(1.0)).eval().scalar_value() ==
          doctest::Approx(normal(1.0, 2.0)->log_prob(Expr(1.0)).eval().scalar_value())
              .epsilon(1e-15));

    // all-missing value behaves like plain sampling with the same stream
    RandomStream r1(99), r2(99);
    const StructuredValue all_missing = StructuredValue::list(
        {StructuredValue::missing(), StructuredValue::missing(), StructuredValue::missing()});
    CHECK(values_equal(jd->sample_distributions(Shape{}, all_missing, r1).second,
                       jd->sample(Shape{}, r2)));

    // per-node densities of the returned pair sum to log_prob of the value
    RandomStream r3(123);
    const auto [ds3, xs3] = jd->sample_distributions(Shape{}, value, r3);
    Expr total = ds3.list()[0].leaf()->log_prob_structured(xs3.at(size_t{0}));
    total = add(total, ds3.list()[1].leaf()->log_prob_structured(xs3.at(size_t{1})));
    total = add(total, ds3.list()[2].leaf()->log_prob_structured(xs3.at(size_t{2})));
    CHECK(jd->log_prob(xs3).eval().scalar_value() == total.eval().scalar_value());
}

TEST_CASE("sample_shape reaches only root nodes and prefixes every leaf") {
    const JointPtr jd = conjugate_normal_model();
    RandomStream rng(5);
    std::vector<Shape> trace;
    const auto [ds, xs] = jd->flat_sample_distributions(Shape{7}, {}, rng, &trace);
    REQUIRE(trace.size() == 3);
    CHECK(trace[0] == Shape{7});
    CHECK(trace[1] == Shape{7});
    CHECK(trace[2] == Shape{});  // dependent node samples with an empty shape

    CHECK(xs[0].leaf().shape() == Shape{7});
    CHECK(xs[1].leaf().shape() == Shape{7});
    CHECK(xs[2].leaf().shape() == Shape{7});  // via batch propagation

    // vectorized log density: one value per world
    CHECK(jd->log_prob(jd->unflatten(xs)).eval().shape() == Shape{7});

    // prefix law: sample(S) leaf shape = S ++ sample([]) leaf shape
    RandomStream r2(6);
    const StructuredValue single = jd->sample(Shape{}, r2);
    RandomStream r3(6);
    const StructuredValue multi = jd->sample(Shape{2, 3}, r3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(multi.at(i).leaf().shape() ==
              Shape{2, 3}.concat(single.at(i).leaf().shape()));
    }
}

TEST_CASE("determinism and structural fixity") {
    const JointPtr jd = conjugate_normal_model();
    RandomStream a(31), b(31);
    CHECK(values_equal(jd->sample(Shape{4}, a), jd->sample(Shape{4}, b)));

    const auto dtype_before = jd->dtype_structure();
    const auto event_before = jd->event_structure();
    const auto batch_before = jd->batch_structure();
    RandomStream c(1);
    (void)jd->sample(Shape{5}, c);
    CHECK(jd->dtype_structure() == dtype_before);
    CHECK(jd->event_structure() == event_before);
    CHECK(jd->batch_structure() == batch_before);
}

TEST_CASE("flatten and unflatten are mutually inverse") {
    const JointPtr jd = conjugate_normal_model();
    RandomStream rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const StructuredValue v = jd->sample(Shape{}, rng);
        auto flat = jd->flatten(v, false);
        std::vector<StructuredValue> parts;
        for (auto& p : flat) parts.push_back(*p);
        CHECK(values_equal(jd->unflatten(parts), v));
    }
}

TEST_CASE("log_prob validates structure eagerly with node context") {
    const JointPtr jd = conjugate_normal_model();
    CHECK_THROWS_AS(jd->log_prob(StructuredValue::list({StructuredValue(1.0)})), StructureError);
    CHECK_THROWS_AS(jd->log_prob(StructuredValue(1.0)), StructureError);
    const StructuredValue with_missing = StructuredValue::list(
        {StructuredValue(1.0), StructuredValue::missing(), StructuredValue(0.0)});
    CHECK_THROWS_AS(jd->log_prob(with_missing), StructureError);

    // a provided value whose trailing dims disagree with batch+event errors
    // eagerly with the node's index and name
    std::vector<SequentialEntry> entries;
    entries.emplace_back(normal(0.0, Tensor::real({1, 2, 3}, Shape{3})), "z");
    entries.emplace_back([](Expr z) { return normal(reduce_sum(z, {-1}), 1.0); }, "y");
    const JointPtr batched = make_sequential_joint(std::move(entries));
    const StructuredValue bad = StructuredValue::list(
        {StructuredValue(Tensor::zeros(Shape{4})), StructuredValue::missing()});
    try {
        RandomStream rng(0);
        (void)batched->sample_distributions(Shape{}, bad, rng);
        CHECK(false);
    } catch (const StructureError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("'z'") != std::string::npos);
        CHECK(msg.find("node 0") != std::string::npos);
    }

    // dtype violations are structure errors too
    const StructuredValue bad_dtype = StructuredValue::list(
        {StructuredValue(Tensor::scalar_int(1)), StructuredValue(0.0), StructuredValue(0.0)});
    CHECK_THROWS_AS(jd->log_prob(bad_dtype), StructureError);
}

TEST_CASE("independence-only moments") {
    std::vector<SequentialEntry> roots;
    roots.emplace_back(normal(3.0, 1.0), "a");
    roots.emplace_back(poisson(4.0), "b");
    const JointPtr jd = make_sequential_joint(std::move(roots));

    const StructuredValue mean = jd->joint_mean();
    CHECK(mean.at(size_t{0}).tensor().scalar_value() == 3.0);
    CHECK(mean.at(size_t{1}).tensor().scalar_value() == 4.0);
    const StructuredValue sd = jd->joint_stddev();
    CHECK(sd.at(size_t{0}).tensor().scalar_value() == 1.0);
    CHECK(sd.at(size_t{1}).tensor().scalar_value() == 2.0);

    // entropy is additive; Poisson has no closed form so this pair errors
    CHECK_THROWS_AS(jd->joint_entropy().eval(), CapabilityError);

    std::vector<SequentialEntry> gaussians;
    gaussians.emplace_back(normal(0.0, 1.0), "a");
    gaussians.emplace_back(normal(5.0, 2.0), "b");
    const JointPtr jd2 = make_sequential_joint(std::move(gaussians));
    const double h = jd2->joint_entropy().eval().scalar_value();
    const double expect = 0.5 * std::log(2.0 * std::numbers::pi_v<double> *
                                         std::numbers::e_v<double>) *
                              2.0 +
                          std::log(2.0);
    CHECK(h == doctest::Approx(expect).epsilon(1e-12));

    // a dependent node forbids analytic moments
    CHECK_THROWS_AS(conjugate_normal_model()->joint_mean(), CapabilityError);

    // root InverseGamma(3,2) mean is 1 analytically; Monte Carlo agrees
    std::vector<SequentialEntry> ig;
    ig.emplace_back(inverse_gamma(3.0, 2.0), "s");
    const JointPtr jd3 = make_sequential_joint(std::move(ig));
    CHECK(jd3->joint_mean().at(size_t{0}).tensor().scalar_value() == doctest::Approx(1.0));
    RandomStream rng(55);
    const Tensor draws = jd3->sample(Shape{200000}, rng).at(size_t{0}).tensor();
    double acc = 0;
    for (double v : draws.reals()) acc += v;
    CHECK(std::abs(acc / 200000 - 1.0) < 4.0 / std::sqrt(200000.0));
}

TEST_CASE("joints nest as components") {
    auto inner_a = make_program_joint([](ModelContext& ctx) {
        ctx.draw(Root(bernoulli(0.25)), "x0");
        ctx.draw(Root(normal(0.0, 1.0)), "x1");
    });
    auto inner_b = make_sequential_joint(
        {SequentialEntry(poisson(2.0)), SequentialEntry(gamma(2.0, 1.0))});
    std::map<std::string, NamedEntry> entries;
    entries.emplace("a", NamedEntry(inner_a));
    entries.emplace("b", NamedEntry(inner_b));
    const JointPtr jd = make_named_joint(std::move(entries));

    RandomStream rng(3);
    const StructuredValue v = jd->sample(Shape{}, rng);
    REQUIRE(v.is_dict());
    CHECK(v.at("a").is_list());
    CHECK(v.at("a").at(size_t{0}).leaf().dtype() == DType::Int64);
    CHECK(v.at("b").at(size_t{1}).leaf().dtype() == DType::Real64);

    // log_prob composes through the nesting: outer sum includes inner sums
    const double x0 = v.at("a").at(size_t{0}).tensor().as_real(0);
    const double x1 = v.at("a").at(size_t{1}).tensor().scalar_value();
    const double nb = v.at("b").at(size_t{0}).tensor().scalar_value();
    const double g = v.at("b").at(size_t{1}).tensor().scalar_value();
    const double expect =
        bernoulli(0.25)->log_prob(Expr(Tensor::scalar_int((int64_t)x0))).eval().scalar_value() +
        normal(0.0, 1.0)->log_prob(Expr(x1)).eval().scalar_value() +
        poisson(2.0)->log_prob(Expr(nb)).eval().scalar_value() +
        gamma(2.0, 1.0)->log_prob(Expr(g)).eval().scalar_value();
    CHECK(jd->log_prob(v).eval().scalar_value() == doctest::Approx(expect).epsilon(1e-14));

    // moments recurse: every node (incl. nested joints) is a root here
    const StructuredValue mean = jd->joint_mean();
    CHECK(mean.at("a").at(size_t{0}).tensor().scalar_value() == 0.25);
    CHECK(mean.at("b").at(size_t{0}).tensor().scalar_value() == 2.0);

    // partial conditioning into the nested component
    RandomStream r2(8);
    const StructuredValue partial = StructuredValue::dict(
        {{"a", StructuredValue::list({StructuredValue(Tensor::scalar_int(1)),
                                      StructuredValue::missing()})},
         {"b", StructuredValue::missing()}});
    const auto [ds, xs] = jd->sample_distributions(Shape{}, partial, r2);
    CHECK(xs.at("a").at(size_t{0}).tensor().as_real(0) == 1.0);
    CHECK(std::isfinite(xs.at("b").at(size_t{1}).tensor().scalar_value()));
}

TEST_CASE("nesting depth three round-trips flatten and unflatten") {
    RandomStream build_rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        auto leaf_joint = make_sequential_joint(
            {SequentialEntry(normal(0.0, 1.0)), SequentialEntry(gamma(2.0, 1.0))});
        JointPtr middle;
        if (build_rng.next_u64() % 2) {
            std::map<std::string, NamedEntry> entries;
            entries.emplace("inner", NamedEntry(leaf_joint));
            entries.emplace("extra", NamedEntry(normal(1.0, 1.0)));
            middle = make_named_joint(std::move(entries));
        } else {
            std::vector<SequentialEntry> entries;
            entries.emplace_back(leaf_joint, "inner");
            entries.emplace_back(poisson(3.0), "extra");
            middle = make_sequential_joint(std::move(entries));
        }
        auto outer = make_sequential_joint(
            {SequentialEntry(middle, "mid"), SequentialEntry(bernoulli(0.5), "flag")});

        RandomStream rng(trial);
        const StructuredValue v = outer->sample(Shape{}, rng);
        auto flat = outer->flatten(v, false);
        std::vector<StructuredValue> parts;
        for (auto& p : flat) parts.push_back(*p);
        CHECK(values_equal(outer->unflatten(parts), v));
        CHECK(std::isfinite(outer->log_prob(v).eval().scalar_value()));
    }
}

TEST_CASE("duplicate node and variable names are rejected") {
    std::vector<SequentialEntry> entries;
    entries.emplace_back(normal(0.0, 1.0), "a");
    entries.emplace_back(normal(0.0, 1.0), "a");
    CHECK_THROWS_AS(make_sequential_joint(std::move(entries)), StructureError);

    auto v1 = make_variable("shared", Tensor::scalar(1.0));
    auto v2 = make_variable("shared", Tensor::scalar(2.0));
    std::vector<SequentialEntry> entries2;
    entries2.emplace_back(normal(Expr::variable(v1), 1.0), "a");
    entries2.emplace_back(normal(Expr::variable(v2), 1.0), "b");
    CHECK_THROWS_AS(make_sequential_joint(std::move(entries2)), Error);
}
