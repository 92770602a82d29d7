#include "jointdist/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "jointdist/errors.hpp"
#include "jointdist/special_math.hpp"

namespace jointdist {

namespace {

constexpr double kHalfLogTwoPi = 0.9189385332046727;  // 0.5 * ln(2*pi)

// ---------------------------------------------------------------------------
// Parameter shape algebra
// ---------------------------------------------------------------------------

struct ParamSpace {
    Shape batch;          // payload-level batch shape
    bool hidden = false;  // leading axis of `batch` is a hidden batch axis
};

// Broadcast of parameter shapes, each stripped of its trailing event axes.
// Visible shapes broadcast; a hidden batch axis contributed by any
// vectorized parameter is kept leading.
ParamSpace param_space(std::initializer_list<std::pair<const Expr*, int64_t>> params) {
    Shape vis;
    bool hidden = false;
    int64_t n = -1;
    for (const auto& [e, event_ndims] : params) {
        Shape v = visible_shape(*e);
        if (v.rank() < event_ndims) {
            throw ShapeError("parameter of shape " + v.str() + " needs at least " +
                             std::to_string(event_ndims) + " trailing event dims");
        }
        vis = broadcast_shapes(vis, v.prefix(v.rank() - event_ndims));
        if (e->batched()) {
            const int64_t en = batch_extent(*e);
            if (hidden && n != en) {
                throw ShapeError("mixed hidden batch sizes among parameters");
            }
            hidden = true;
            n = en;
        }
    }
    ParamSpace ps;
    ps.hidden = hidden;
    ps.batch = hidden ? Shape{n}.concat(vis) : vis;
    return ps;
}

// Materializes a parameter and broadcasts it to a payload-level target whose
// leading axis may be hidden. Batched parameters get unit axes inserted after
// the hidden axis; plain parameters broadcast right-aligned as usual.
Tensor materialize_to(const Expr& e, const Shape& target) {
    Tensor t = e.eval();
    if (e.batched() && t.shape().rank() < target.rank()) {
        std::vector<int64_t> dims;
        dims.push_back(t.shape().dim(0));
        for (int64_t i = 0; i < target.rank() - t.shape().rank(); ++i) dims.push_back(1);
        for (int64_t i = 1; i < t.shape().rank(); ++i) {
            dims.push_back(t.shape().dims()[static_cast<size_t>(i)]);
        }
        t = reshape(t, Shape(std::move(dims)));
    }
    return broadcast_to(t, target);
}

Expr constant_in(const Tensor& t, bool hidden) {
    Expr e = Expr::constant(t);
    return hidden ? e.as_batched() : e;
}

void check_positive(const Tensor& t, const std::string& dist, const char* param) {
    for (int64_t i = 0; i < t.size(); ++i) {
        if (!(t.as_real(i) > 0.0)) {
            throw DomainError(dist + ": " + param + " must be positive, got " +
                              std::to_string(t.as_real(i)));
        }
    }
}

void check_unit_interval(const Tensor& t, const std::string& dist, const char* param) {
    for (int64_t i = 0; i < t.size(); ++i) {
        const double v = t.as_real(i);
        if (!(v > 0.0 && v < 1.0)) {
            throw DomainError(dist + ": " + param + " must lie in (0, 1), got " +
                              std::to_string(v));
        }
    }
}

// ---------------------------------------------------------------------------
// Scalar samplers
// ---------------------------------------------------------------------------

double draw_gamma(double alpha, double rate, RandomStream& rng) {
    // Marsaglia-Tsang squeeze; the alpha < 1 case boosts from alpha + 1.
    if (alpha < 1.0) {
        const double u = rng.next_uniform();
        return draw_gamma(alpha + 1.0, rate, rng) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.next_gaussian();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.next_uniform();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v / rate;
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
}

double draw_poisson(double lambda, RandomStream& rng) {
    if (lambda < 30.0) {
        // Knuth's product-of-uniforms method.
        const double limit = std::exp(-lambda);
        double p = 1.0;
        int64_t k = 0;
        do {
            ++k;
            p *= rng.next_uniform();
        } while (p > limit);
        return static_cast<double>(k - 1);
    }
    // Hormann's transformed rejection with squeeze (PTRS).
    const double b = 0.931 + 2.53 * std::sqrt(lambda);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    const double log_lambda = std::log(lambda);
    for (;;) {
        const double u = rng.next_uniform() - 0.5;
        const double v = rng.next_uniform();
        const double us = 0.5 - std::abs(u);
        const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
        if (us >= 0.07 && v <= v_r) return k;
        if (k < 0.0 || (us < 0.013 && v > us)) continue;
        if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
            k * log_lambda - lambda - std::lgamma(k + 1.0)) {
            return k;
        }
    }
}

int64_t draw_binomial(int64_t n, double p, RandomStream& rng) {
    int64_t c = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (rng.next_uniform() < p) ++c;
    }
    return c;
}

// Sequential binomial splitting over the cells.
void draw_multinomial(int64_t total, std::span<const double> probs, std::span<double> out,
                      RandomStream& rng) {
    double remaining_p = 1.0;
    int64_t remaining_n = total;
    for (size_t v = 0; v + 1 < probs.size(); ++v) {
        double p = remaining_p > 0.0 ? probs[v] / remaining_p : 0.0;
        p = std::min(1.0, std::max(0.0, p));
        const int64_t c = draw_binomial(remaining_n, p, rng);
        out[v] = static_cast<double>(c);
        remaining_n -= c;
        remaining_p -= probs[v];
    }
    out[probs.size() - 1] = static_cast<double>(remaining_n);
}

// Draws full = sample_shape ++ batch elementwise, world-major, one call to
// `fn` per element with the flat batch index.
template <typename Fn>
Tensor draw_scalar_family(const Shape& sample_shape, const Shape& batch, RandomStream& rng,
                          Fn fn) {
    const Shape full = sample_shape.concat(batch);
    const int64_t s_elems = sample_shape.num_elements();
    const int64_t b_elems = batch.num_elements();
    std::vector<double> out(static_cast<size_t>(s_elems * b_elems));
    size_t pos = 0;
    for (int64_t s = 0; s < s_elems; ++s) {
        for (int64_t b = 0; b < b_elems; ++b) {
            out[pos++] = fn(static_cast<size_t>(b), rng);
        }
    }
    return Tensor::real(std::move(out), full);
}

// ---------------------------------------------------------------------------
// Discrete support masks
//
// Values of discrete distributions are materialized draws or observations, so
// they are constant graphs; support checks evaluate them once and bake the
// resulting 0 / -inf mask (and a sanitized copy safe for lgamma) back in as
// constants carrying the original hidden-batch mark.
// ---------------------------------------------------------------------------

Tensor require_constant_value(const Expr& x, const std::string& dist) {
    if (!x.is_constant_graph()) {
        throw CapabilityError(dist + ": log_prob needs a materialized value, not one that "
                                     "depends on variables");
    }
    return x.eval();
}

struct ElementwiseSupport {
    Expr sanitized;
    Expr mask;
};

template <typename ValidFn, typename CleanFn>
ElementwiseSupport elementwise_support(const Expr& x, const std::string& dist, ValidFn valid,
                                       CleanFn clean) {
    const Tensor xt = require_constant_value(x, dist).widened();
    const auto src = xt.reals();
    std::vector<double> cleaned(src.size());
    std::vector<double> mask(src.size());
    for (size_t i = 0; i < src.size(); ++i) {
        const bool ok = valid(src[i]);
        cleaned[i] = ok ? src[i] : clean(src[i]);
        mask[i] = ok ? 0.0 : -std::numeric_limits<double>::infinity();
    }
    ElementwiseSupport s;
    s.sanitized = constant_in(Tensor::real(std::move(cleaned), xt.shape()), x.batched());
    s.mask = constant_in(Tensor::real(std::move(mask), xt.shape()), x.batched());
    return s;
}

bool is_integer_valued(double v) { return std::abs(v - std::nearbyint(v)) <= 1e-6; }

}  // namespace

// ---------------------------------------------------------------------------
// DistributionLike / Distribution base
// ---------------------------------------------------------------------------

StructuredValue DistributionLike::realize(const Shape& sample_shape, const StructuredValue& value,
                                          RandomStream& rng) const {
    if (value.is_missing()) return sample_structured(sample_shape, rng);
    if (value.contains_missing()) {
        throw StructureError("partially specified value given for non-composite node " +
                             describe());
    }
    return value;
}

Distribution::Distribution(std::string name, DType dtype, Shape batch_shape, Shape event_shape,
                           bool reparameterizable, std::vector<Expr> params)
    : name_(std::move(name)),
      dtype_(dtype),
      batch_shape_(std::move(batch_shape)),
      event_shape_(std::move(event_shape)),
      reparameterizable_(reparameterizable),
      params_(std::move(params)) {
    for (const Expr& p : params_) {
        if (p.batched()) hidden_batched_ = true;
    }
}

Expr Distribution::sample(const Shape& sample_shape, RandomStream& rng) const {
    if (hidden_batched_ && sample_shape.rank() > 0) {
        throw Error("internal: sample_shape passed to a hidden-batched distribution");
    }
    Expr v = sample_impl(sample_shape, rng);
    const Shape expect = sample_shape.concat(batch_shape_).concat(event_shape_);
    if (!(v.shape() == expect)) {
        throw Error("internal: " + name_ + " sampler produced " + v.shape().str() +
                    ", expected " + expect.str());
    }
    return v;
}

Expr Distribution::log_prob(const Expr& x) const {
    if (!accepts_value_dtype(x.dtype())) {
        throw StructureError(name_ + ": log_prob value has dtype " +
                             dtype_name(x.dtype()) + ", expected " + dtype_name(dtype_));
    }
    if (!x.shape().ends_with(event_shape_)) {
        throw ShapeError(name_ + ": log_prob value of shape " + x.shape().str() +
                         " does not end with event shape " + event_shape_.str());
    }
    // Early broadcast check of the non-event part against batch, at the
    // user-visible level so hidden batch axes line up.
    const Shape xv = visible_shape(x);
    const Shape x_pre = xv.prefix(xv.rank() - event_shape_.rank());
    const Shape b_vis =
        hidden_batched_ ? batch_shape_.suffix(batch_shape_.rank() - 1) : batch_shape_;
    broadcast_shapes(x_pre, b_vis);
    return log_prob_impl(x);
}

Expr Distribution::mean() const { no_moment("mean"); }
Expr Distribution::stddev() const { no_moment("stddev"); }
Expr Distribution::entropy_elements() const { no_moment("entropy"); }

StructuredValue Distribution::sample_structured(const Shape& sample_shape,
                                                RandomStream& rng) const {
    return StructuredValue(sample(sample_shape, rng));
}

Expr Distribution::log_prob_structured(const StructuredValue& x) const {
    if (!x.is_leaf()) {
        throw StructureError(name_ + ": expected a tensor value, got a structured one");
    }
    return log_prob(x.leaf());
}

Expr Distribution::entropy() const { return reduce_sum(entropy_elements()); }

void Distribution::collect_variables_into(std::vector<VariablePtr>& out) const {
    for (const Expr& p : params_) collect_variables(p, out);
}

bool Distribution::has_batched_params() const { return hidden_batched_; }

void Distribution::no_moment(const char* which) const {
    throw CapabilityError(name_ + " has no analytic " + which);
}

namespace {

// Broadcasts an expression up to the full batch shape (used by moments so the
// result shape follows the shape law even when a parameter is smaller).
Expr broadcast_into(const Expr& e, const Shape& target, bool hidden) {
    if (e.shape() == target && e.batched() == hidden) return e;
    return add(e, constant_in(Tensor::zeros(target), hidden));
}

// ---------------------------------------------------------------------------
// Normal
// ---------------------------------------------------------------------------

class Normal final : public Distribution {
public:
    Normal(Expr loc, Expr scale, ParamSpace ps)
        : Distribution("Normal", DType::Real64, ps.batch, Shape{}, /*reparameterizable=*/true,
                       {loc, scale}),
          loc_(std::move(loc)),
          scale_(std::move(scale)) {}

    Expr sample_impl(const Shape& sample_shape, RandomStream& rng) const override {
        check_positive(scale_.eval(), name_, "scale");
        const Shape full = sample_shape.concat(batch_shape());
        std::vector<double> eps(static_cast<size_t>(full.num_elements()));
        for (double& e : eps) e = rng.next_gaussian();
        // loc + scale * eps keeps the sample differentiable in (loc, scale).
        const Expr noise = constant_in(Tensor::real(std::move(eps), full), hidden_batched());
        return add(loc_, mul(scale_, noise));
    }

    Expr log_prob_impl(const Expr& x) const override {
        const Expr z = sub(x, loc_);
        return sub(sub(neg(log(scale_)), Expr(kHalfLogTwoPi)),
                   div(square(z), mul(Expr(2.0), square(scale_))));
    }

    Expr mean() const override { return broadcast_into(loc_, batch_shape(), hidden_batched()); }
    Expr stddev() const override {
        return broadcast_into(scale_, batch_shape(), hidden_batched());
    }
    Expr entropy_elements() const override {
        return broadcast_into(add(log(scale_), Expr(kHalfLogTwoPi + 0.5)), batch_shape(),
                              hidden_batched());
    }

private:
    Expr loc_, scale_;
};

// ---------------------------------------------------------------------------
// InverseGamma: p(x) = scale^c / Gamma(c) * x^(-c-1) * exp(-scale / x)
// ---------------------------------------------------------------------------

class InverseGamma final : public Distribution {
public:
    InverseGamma(Expr concentration, Expr scale, ParamSpace ps)
        : Distribution("InverseGamma", DType::Real64, ps.batch, Shape{}, false,
                       {concentration, scale}),
          conc_(std::move(concentration)),
          scale_(std::move(scale)) {}

    Expr sample_impl(const Shape& sample_shape, RandomStream& rng) const override {
        const Tensor a = materialize_to(conc_, batch_shape());
        const Tensor s = materialize_to(scale_, batch_shape());
        check_positive(a, name_, "concentration");
        check_positive(s, name_, "scale");
        const auto av = a.reals();
        const auto sv = s.reals();
        // Reciprocal of a Gamma with rate equal to this scale.
        const Tensor t = draw_scalar_family(sample_shape, batch_shape(), rng,
                                            [&](size_t b, RandomStream& r) {
                                                return 1.0 / draw_gamma(av[b], sv[b], r);
                                            });
        return constant_in(t, hidden_batched());
    }

    Expr log_prob_impl(const Expr& x) const override {
        Expr lp = sub(mul(conc_, log(scale_)), lgamma(conc_));
        lp = sub(lp, mul(add(conc_, Expr(1.0)), log(x)));
        return sub(lp, div(scale_, x));
    }

    Expr mean() const override {
        const Tensor a = conc_.eval();
        for (int64_t i = 0; i < a.size(); ++i) {
            if (!(a.as_real(i) > 1.0)) no_moment("mean (needs concentration > 1)");
        }
        return broadcast_into(div(scale_, sub(conc_, Expr(1.0))), batch_shape(),
                              hidden_batched());
    }
    Expr stddev() const override {
        const Tensor a = conc_.eval();
        for (int64_t i = 0; i < a.size(); ++i) {
            if (!(a.as_real(i) > 2.0)) no_moment("stddev (needs concentration > 2)");
        }
        const Expr denom = mul(sub(conc_, Expr(1.0)), sqrt(sub(conc_, Expr(2.0))));
        return broadcast_into(div(scale_, denom), batch_shape(), hidden_batched());
    }
    Expr entropy_elements() const override {
        Expr h = add(conc_, add(log(scale_), lgamma(conc_)));
        h = sub(h, mul(add(Expr(1.0), conc_), digamma(conc_)));
        return broadcast_into(h, batch_shape(), hidden_batched());
    }

private:
    Expr conc_, scale_;
};

// ---------------------------------------------------------------------------
// Gamma: p(x) = rate^c / Gamma(c) * x^(c-1) * exp(-rate * x)
// ---------------------------------------------------------------------------

class GammaDist final : public Distribution {
public:
    GammaDist(Expr concentration, Expr rate, ParamSpace ps)
        : Distribution("Gamma", DType::Real64, ps.batch, Shape{}, false, {concentration, rate}),
          conc_(std::move(concentration)),
          rate_(std::move(rate)) {}

    Expr sample_impl(const Shape& sample_shape, RandomStream& rng) const override {
        const Tensor a = materialize_to(conc_, batch_shape());
        const Tensor r = materialize_to(rate_, batch_shape());
        check_positive(a, name_, "concentration");
        check_positive(r, name_, "rate");
        const auto av = a.reals();
        const auto rv = r.reals();
        const Tensor t = draw_scalar_family(
            sample_shape, batch_shape(), rng,
            [&](size_t b, RandomStream& s) { return draw_gamma(av[b], rv[b], s); });
        return constant_in(t, hidden_batched());
    }

    Expr log_prob_impl(const Expr& x) const override {
        Expr lp = sub(mul(conc_, log(rate_)), lgamma(conc_));
        lp = add(lp, mul(sub(conc_, Expr(1.0)), log(x)));
        return sub(lp, mul(rate_, x));
    }

    Expr mean() const override {
        return broadcast_into(div(conc_, rate_), batch_shape(), hidden_batched());
    }
    Expr stddev() const override {
        return broadcast_into(div(sqrt(conc_), rate_), batch_shape(), hidden_batched());
    }
    Expr entropy_elements() const override {
        Expr h = sub(conc_, log(rate_));
        h = add(h, lgamma(conc_));
        h = add(h, mul(sub(Expr(1.0), conc_), digamma(conc_)));
        return broadcast_into(h, batch_shape(), hidden_batched());
    }

private:
    Expr conc_, rate_;
};

// ---------------------------------------------------------------------------
// Poisson. Samples are integer-valued but carried as real64 so counts can
// feed downstream arithmetic directly.
// ---------------------------------------------------------------------------

class PoissonDist final : public Distribution {
public:
    PoissonDist(Expr rate, ParamSpace ps)
        : Distribution("Poisson", DType::Real64, ps.batch, Shape{}, false, {rate}),
          rate_(std::move(rate)) {}

    Expr sample_impl(const Shape& sample_shape, RandomStream& rng) const override {
        const Tensor r = materialize_to(rate_, batch_shape());
        check_positive(r, name_, "rate");
        const auto rv = r.reals();
        const Tensor t = draw_scalar_family(
            sample_shape, batch_shape(), rng,
            [&](size_t b, RandomStream& s) { return draw_poisson(rv[b], s); });
        return constant_in(t, hidden_batched());
    }

    Expr log_prob_impl(const Expr& x) const override {
        // Negative counts are representable but out of support -> -inf.
        const auto s = elementwise_support(
            x, name_, [](double v) { return v >= 0.0; }, [](double) { return 0.0; });
        Expr lp = sub(mul(s.sanitized, log(rate_)), rate_);
        lp = sub(lp, lgamma(add(s.sanitized, Expr(1.0))));
        return add(lp, s.mask);
    }

    Expr mean() const override { return broadcast_into(rate_, batch_shape(), hidden_batched()); }
    Expr stddev() const override {
        return broadcast_into(sqrt(rate_), batch_shape(), hidden_batched());
    }

private:
    Expr rate_;
};

// ---------------------------------------------------------------------------
// Bernoulli. Samples are int64; log_prob accepts 0/1 values of either dtype.
// ---------------------------------------------------------------------------

class BernoulliDist final : public Distribution {
public:
    BernoulliDist(Expr probs, ParamSpace ps)
        : Distribution("Bernoulli", DType::Int64, ps.batch, Shape{}, false, {probs}),
          probs_(std::move(probs)) {}

    bool accepts_value_dtype(DType) const override { return true; }

    Expr sample_impl(const Shape& sample_shape, RandomStream& rng) const override {
        const Tensor p = materialize_to(probs_, batch_shape());
        check_unit_interval(p, name_, "probs");
        const auto pv = p.reals();
        const Shape full = sample_shape.concat(batch_shape());
        const int64_t s_elems = sample_shape.num_elements();
        const int64_t b_elems = batch_shape().num_elements();
        std::vector<int64_t> out(static_cast<size_t>(s_elems * b_elems));
        size_t pos = 0;
        for (int64_t s = 0; s < s_elems; ++s) {
            for (int64_t b = 0; b < b_elems; ++b) {
                out[pos++] = rng.next_uniform() < pv[static_cast<size_t>(b)] ? 1 : 0;
            }
        }
        return constant_in(Tensor::ints(std::move(out), full), hidden_batched());
    }

    Expr log_prob_impl(const Expr& x) const override {
        const auto s = elementwise_support(
            x, name_, [](double v) { return v == 0.0 || v == 1.0; }, [](double) { return 0.0; });
        const Expr on = mul(s.sanitized, log(probs_));
        const Expr off = mul(sub(Expr(1.0), s.sanitized), log(sub(Expr(1.0), probs_)));
        return add(add(on, off), s.mask);
    }

    Expr mean() const override { return broadcast_into(probs_, batch_shape(), hidden_batched()); }
    Expr stddev() const override {
        return broadcast_into(sqrt(mul(probs_, sub(Expr(1.0), probs_))), batch_shape(),
                              hidden_batched());
    }
    Expr entropy_elements() const override {
        const Expr q = sub(Expr(1.0), probs_);
        return broadcast_into(neg(add(mul(probs_, log(probs_)), mul(q, log(q)))), batch_shape(),
                              hidden_batched());
    }

private:
    Expr probs_;
};

// ---------------------------------------------------------------------------
// Dirichlet. The concentration's last axis is the event axis.
// ---------------------------------------------------------------------------

class DirichletDist final : public Distribution {
public:
    DirichletDist(Expr concentration, ParamSpace ps)
        : Distribution("Dirichlet", DType::Real64, ps.batch,
                       Shape{visible_shape(concentration).dim(-1)}, false, {concentration}),
          conc_(std::move(concentration)) {}

    Expr sample_impl(const Shape& sample_shape, RandomStream& rng) const override {
        const int64_t k = event_shape().dim(0);
        const Tensor a = materialize_to(conc_, batch_shape().concat(event_shape()));
        check_positive(a, name_, "concentration");
        const auto av = a.reals();
        const Shape full = sample_shape.concat(batch_shape()).concat(event_shape());
        const int64_t s_elems = sample_shape.num_elements();
        const int64_t b_elems = batch_shape().num_elements();
        std::vector<double> out(static_cast<size_t>(full.num_elements()));
        size_t pos = 0;
        std::vector<double> g(static_cast<size_t>(k));
        for (int64_t s = 0; s < s_elems; ++s) {
            for (int64_t b = 0; b < b_elems; ++b) {
                double total = 0.0;
                for (int64_t i = 0; i < k; ++i) {
                    g[static_cast<size_t>(i)] = draw_gamma(av[static_cast<size_t>(b * k + i)],
                                                           1.0, rng);
                    total += g[static_cast<size_t>(i)];
                }
                for (int64_t i = 0; i < k; ++i) out[pos++] = g[static_cast<size_t>(i)] / total;
            }
        }
        return constant_in(Tensor::real(std::move(out), full), hidden_batched());
    }

    Expr log_prob_impl(const Expr& x) const override {
        const Expr a0 = reduce_sum(conc_, {-1});
        Expr lp = sub(lgamma(a0), reduce_sum(lgamma(conc_), {-1}));
        return add(lp, reduce_sum(mul(sub(conc_, Expr(1.0)), log(x)), {-1}));
    }

    Expr mean() const override {
        const Expr a0 = reduce_sum(conc_, {-1}, /*keep_dims=*/true);
        return broadcast_into(div(conc_, a0), batch_shape().concat(event_shape()),
                              hidden_batched());
    }
    Expr stddev() const override {
        const Expr a0 = reduce_sum(conc_, {-1}, true);
        const Expr var = div(mul(conc_, sub(a0, conc_)),
                             mul(square(a0), add(a0, Expr(1.0))));
        return broadcast_into(sqrt(var), batch_shape().concat(event_shape()), hidden_batched());
    }
    Expr entropy_elements() const override {
        const int64_t k = event_shape().dim(0);
        const Expr a0 = reduce_sum(conc_, {-1});
        Expr h = sub(reduce_sum(lgamma(conc_), {-1}), lgamma(a0));
        h = add(h, mul(sub(a0, Expr(static_cast<double>(k))), digamma(a0)));
        h = sub(h, reduce_sum(mul(sub(conc_, Expr(1.0)), digamma(conc_)), {-1}));
        return broadcast_into(h, batch_shape(), hidden_batched());
    }

private:
    Expr conc_;
};

// ---------------------------------------------------------------------------
// Multinomial. Parameterized by probs or logits (exactly one); the parameter's
// last axis is the event axis. total_count must be integer-valued.
// ---------------------------------------------------------------------------

class MultinomialDist final : public Distribution {
public:
    MultinomialDist(Expr total_count, Expr weights, bool as_logits, ParamSpace ps)
        : Distribution("Multinomial", DType::Real64, ps.batch,
                       Shape{visible_shape(weights).dim(-1)}, false, {total_count, weights}),
          count_(std::move(total_count)),
          weights_(std::move(weights)),
          as_logits_(as_logits) {}

    Expr sample_impl(const Shape& sample_shape, RandomStream& rng) const override {
        const int64_t k = event_shape().dim(0);
        const Tensor n = materialize_to(count_, batch_shape());
        const Tensor w = materialize_to(weights_, batch_shape().concat(event_shape()));
        validate_counts(n);
        const auto nv = n.reals();
        std::vector<double> probs = row_probs(w, k);
        const Shape full = sample_shape.concat(batch_shape()).concat(event_shape());
        const int64_t s_elems = sample_shape.num_elements();
        const int64_t b_elems = batch_shape().num_elements();
        std::vector<double> out(static_cast<size_t>(full.num_elements()));
        for (int64_t s = 0; s < s_elems; ++s) {
            for (int64_t b = 0; b < b_elems; ++b) {
                const auto row = std::span<const double>(probs).subspan(
                    static_cast<size_t>(b * k), static_cast<size_t>(k));
                const auto cell = std::span<double>(out).subspan(
                    static_cast<size_t>((s * b_elems + b) * k), static_cast<size_t>(k));
                draw_multinomial(static_cast<int64_t>(std::llround(nv[static_cast<size_t>(b)])),
                                 row, cell, rng);
            }
        }
        return constant_in(Tensor::real(std::move(out), full), hidden_batched());
    }

    Expr log_prob_impl(const Expr& x) const override {
        require_constant_value(count_, name_);
        const auto s = elementwise_support(
            x, name_, [](double v) { return v >= 0.0 && is_integer_valued(v); },
            [](double) { return 0.0; });
        // Row validity: cell counts must sum to total_count. The comparison
        // runs through the expression builders so hidden batch axes align.
        const Expr deficit = square(sub(reduce_sum(s.sanitized, {-1}), count_));
        const Expr row_bad = add(deficit, neg(reduce_sum(s.mask, {-1})));  // -mask is 0 or +inf
        const Tensor bad = row_bad.eval();
        std::vector<double> rm(static_cast<size_t>(bad.size()));
        for (int64_t i = 0; i < bad.size(); ++i) {
            rm[static_cast<size_t>(i)] =
                bad.as_real(i) > 1e-6 ? -std::numeric_limits<double>::infinity() : 0.0;
        }
        const Expr row_mask =
            constant_in(Tensor::real(std::move(rm), bad.shape()), row_bad.batched());

        Expr norm = sub(lgamma(add(count_, Expr(1.0))),
                        reduce_sum(lgamma(add(s.sanitized, Expr(1.0))), {-1}));
        const Expr lp = add(norm, reduce_sum(mul(s.sanitized, log_probs()), {-1}));
        return add(lp, row_mask);
    }

    Expr mean() const override {
        return broadcast_into(mul(count_, probs()), batch_shape().concat(event_shape()),
                              hidden_batched());
    }
    Expr stddev() const override {
        const Expr p = probs();
        return broadcast_into(sqrt(mul(count_, mul(p, sub(Expr(1.0), p)))),
                              batch_shape().concat(event_shape()), hidden_batched());
    }

private:
    Expr probs() const {
        if (!as_logits_) return weights_;
        const Expr norm = reduce_sum(exp(weights_), {-1}, true);
        return div(exp(weights_), norm);
    }
    Expr log_probs() const {
        if (as_logits_) {
            return sub(weights_, log(reduce_sum(exp(weights_), {-1}, true)));
        }
        return log(weights_);
    }

    void validate_counts(const Tensor& n) const {
        for (int64_t i = 0; i < n.size(); ++i) {
            const double v = n.as_real(i);
            if (v < 0.0 || !is_integer_valued(v)) {
                throw DomainError(name_ + ": total_count must be a non-negative integer, got " +
                                  std::to_string(v));
            }
        }
    }

    std::vector<double> row_probs(const Tensor& w, int64_t k) const {
        const auto wv = w.reals();
        std::vector<double> probs(wv.size());
        const int64_t rows = w.size() / k;
        for (int64_t r = 0; r < rows; ++r) {
            const size_t off = static_cast<size_t>(r * k);
            if (as_logits_) {
                double mx = wv[off];
                for (int64_t i = 1; i < k; ++i) mx = std::max(mx, wv[off + (size_t)i]);
                double z = 0.0;
                for (int64_t i = 0; i < k; ++i) z += std::exp(wv[off + (size_t)i] - mx);
                for (int64_t i = 0; i < k; ++i) {
                    probs[off + (size_t)i] = std::exp(wv[off + (size_t)i] - mx) / z;
                }
            } else {
                double z = 0.0;
                for (int64_t i = 0; i < k; ++i) {
                    const double p = wv[off + (size_t)i];
                    if (!(p > 0.0)) {
                        throw DomainError(name_ + ": probs must be positive");
                    }
                    z += p;
                }
                if (std::abs(z - 1.0) > 1e-6) {
                    throw DomainError(name_ + ": probs rows must sum to 1, got " +
                                      std::to_string(z));
                }
                for (int64_t i = 0; i < k; ++i) probs[off + (size_t)i] = wv[off + (size_t)i] / z;
            }
        }
        return probs;
    }

    Expr count_, weights_;
    bool as_logits_;
};

// ---------------------------------------------------------------------------
// Meta distributions
// ---------------------------------------------------------------------------

class IidSampleDist final : public Distribution {
public:
    IidSampleDist(DistPtr inner, Shape block)
        : Distribution("Sample(" + inner->describe() + ")", inner->dtype(), inner->batch_shape(),
                       block.concat(inner->event_shape()), inner->reparameterizable(),
                       inner->params()),
          inner_(std::move(inner)),
          block_(std::move(block)) {}

    bool accepts_value_dtype(DType dt) const override {
        return inner_->accepts_value_dtype(dt);
    }

    Expr sample_impl(const Shape& sample_shape, RandomStream& rng) const override {
        const Expr s = inner_->sample(sample_shape.concat(block_), rng);
        const int64_t vb = visible_batch_rank();
        if (vb == 0 || block_.rank() == 0) return s;
        // Drawn layout: sample ++ block ++ batch ++ event; the event law wants
        // sample ++ batch ++ block ++ event.
        const int64_t vr = s.shape().rank() - (s.batched() ? 1 : 0);
        const int64_t ev = inner_->event_shape().rank();
        const int64_t lead = vr - block_.rank() - vb - ev;
        std::vector<int64_t> perm;
        for (int64_t i = 0; i < lead; ++i) perm.push_back(i);
        for (int64_t i = 0; i < vb; ++i) perm.push_back(lead + block_.rank() + i);
        for (int64_t i = 0; i < block_.rank(); ++i) perm.push_back(lead + i);
        for (int64_t i = 0; i < ev; ++i) perm.push_back(vr - ev + i);
        return transpose(s, perm);
    }

    Expr log_prob_impl(const Expr& x) const override {
        const int64_t vb = visible_batch_rank();
        const int64_t eb = block_.rank();
        if (eb == 0) return inner_->log_prob(x);
        if (vb == 0) {
            const Expr ilp = inner_->log_prob(x);
            std::vector<int64_t> axes;
            for (int64_t i = 1; i <= eb; ++i) axes.push_back(-i);
            return reduce_sum(ilp, axes);
        }
        // Move the block in front of the batch dims so the base distribution
        // scores it as extra sample dims, then sum the block out.
        const int64_t vr = x.shape().rank() - (x.batched() ? 1 : 0);
        const int64_t ev = inner_->event_shape().rank();
        const int64_t lead = vr - vb - eb - ev;
        std::vector<int64_t> perm;
        for (int64_t i = 0; i < lead; ++i) perm.push_back(i);
        for (int64_t i = 0; i < eb; ++i) perm.push_back(lead + vb + i);
        for (int64_t i = 0; i < vb; ++i) perm.push_back(lead + i);
        for (int64_t i = 0; i < ev; ++i) perm.push_back(vr - ev + i);
        const Expr ilp = inner_->log_prob(transpose(x, perm));
        std::vector<int64_t> axes;
        for (int64_t i = 0; i < eb; ++i) axes.push_back(-(vb + 1 + i));
        return reduce_sum(ilp, axes);
    }

    Expr mean() const override { return block_moment(inner_->mean()); }
    Expr stddev() const override { return block_moment(inner_->stddev()); }
    Expr entropy_elements() const override {
        return mul(inner_->entropy_elements(),
                   Expr(static_cast<double>(block_.num_elements())));
    }

private:
    int64_t visible_batch_rank() const {
        return batch_shape().rank() - (hidden_batched() ? 1 : 0);
    }

    Expr block_moment(const Expr& inner_moment) const {
        if (hidden_batched() || visible_batch_rank() > 0) {
            no_moment("moment over a batched base distribution");
        }
        return broadcast_into(inner_moment, batch_shape().concat(event_shape()), false);
    }

    DistPtr inner_;
    Shape block_;
};

class IndependentDist final : public Distribution {
public:
    IndependentDist(DistPtr inner, int64_t ndims)
        : Distribution("Independent(" + inner->describe() + ")", inner->dtype(),
                       inner->batch_shape().prefix(inner->batch_shape().rank() - ndims),
                       inner->batch_shape()
                           .suffix(ndims)
                           .concat(inner->event_shape()),
                       inner->reparameterizable(), inner->params()),
          inner_(std::move(inner)),
          ndims_(ndims) {}

    bool accepts_value_dtype(DType dt) const override {
        return inner_->accepts_value_dtype(dt);
    }

    Expr sample_impl(const Shape& sample_shape, RandomStream& rng) const override {
        return inner_->sample(sample_shape, rng);
    }

    Expr log_prob_impl(const Expr& x) const override {
        const Expr ilp = inner_->log_prob(x);
        if (ndims_ == 0) return ilp;
        std::vector<int64_t> axes;
        for (int64_t i = 1; i <= ndims_; ++i) axes.push_back(-i);
        return reduce_sum(ilp, axes);
    }

    Expr mean() const override { return inner_->mean(); }
    Expr stddev() const override { return inner_->stddev(); }
    Expr entropy_elements() const override {
        if (ndims_ == 0) return inner_->entropy_elements();
        std::vector<int64_t> axes;
        for (int64_t i = 1; i <= ndims_; ++i) axes.push_back(-i);
        return reduce_sum(inner_->entropy_elements(), axes);
    }

private:
    DistPtr inner_;
    int64_t ndims_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Factories
// ---------------------------------------------------------------------------

DistPtr normal(Expr loc, Expr scale) {
    auto ps = param_space({{&loc, 0}, {&scale, 0}});
    return std::make_shared<Normal>(std::move(loc), std::move(scale), std::move(ps));
}

DistPtr inverse_gamma(Expr concentration, Expr scale) {
    auto ps = param_space({{&concentration, 0}, {&scale, 0}});
    return std::make_shared<InverseGamma>(std::move(concentration), std::move(scale),
                                          std::move(ps));
}

DistPtr gamma(Expr concentration, Expr rate) {
    auto ps = param_space({{&concentration, 0}, {&rate, 0}});
    return std::make_shared<GammaDist>(std::move(concentration), std::move(rate), std::move(ps));
}

DistPtr poisson(Expr rate) {
    auto ps = param_space({{&rate, 0}});
    return std::make_shared<PoissonDist>(std::move(rate), std::move(ps));
}

DistPtr bernoulli(Expr probs) {
    auto ps = param_space({{&probs, 0}});
    return std::make_shared<BernoulliDist>(std::move(probs), std::move(ps));
}

DistPtr dirichlet(Expr concentration) {
    if (visible_shape(concentration).rank() < 1) {
        throw ShapeError("Dirichlet concentration must have an event axis");
    }
    auto ps = param_space({{&concentration, 1}});
    return std::make_shared<DirichletDist>(std::move(concentration), std::move(ps));
}

DistPtr multinomial_probs(Expr total_count, Expr probs) {
    if (visible_shape(probs).rank() < 1) {
        throw ShapeError("Multinomial probs must have an event axis");
    }
    auto ps = param_space({{&total_count, 0}, {&probs, 1}});
    return std::make_shared<MultinomialDist>(std::move(total_count), std::move(probs), false,
                                             std::move(ps));
}

DistPtr multinomial_logits(Expr total_count, Expr logits) {
    if (visible_shape(logits).rank() < 1) {
        throw ShapeError("Multinomial logits must have an event axis");
    }
    auto ps = param_space({{&total_count, 0}, {&logits, 1}});
    return std::make_shared<MultinomialDist>(std::move(total_count), std::move(logits), true,
                                             std::move(ps));
}

DistPtr iid_sample(DistPtr inner, Shape block_shape) {
    if (!inner) throw Error("iid_sample of a null distribution");
    return std::make_shared<IidSampleDist>(std::move(inner), std::move(block_shape));
}

DistPtr independent(DistPtr inner, int64_t ndims) {
    if (!inner) throw Error("independent of a null distribution");
    if (ndims < 0) throw ShapeError("reinterpreted batch dims must be non-negative");
    const int64_t vb =
        inner->batch_shape().rank() - (inner->has_batched_params() ? 1 : 0);
    if (ndims > vb) {
        throw ShapeError("cannot reinterpret " + std::to_string(ndims) +
                         " batch dims of a distribution with batch shape " +
                         inner->batch_shape().str());
    }
    return std::make_shared<IndependentDist>(std::move(inner), ndims);
}

}  // namespace jointdist
