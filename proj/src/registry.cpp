#include "jointdist/registry.hpp"

#include <cmath>
#include <memory>
#include <numbers>

#include "jointdist/errors.hpp"
#include "jointdist/special_math.hpp"

namespace jointdist {

namespace {

constexpr double kHalfLogTwoPi = 0.9189385332046727;

// ---------------------------------------------------------------------------
// Hyperparameter plumbing
// ---------------------------------------------------------------------------

std::map<std::string, double> resolve_hyper(const std::string& id,
                                            std::map<std::string, double> defaults,
                                            const std::map<std::string, double>& overrides) {
    for (const auto& [k, v] : overrides) {
        auto it = defaults.find(k);
        if (it == defaults.end()) {
            throw Error("model '" + id + "' has no hyperparameter '" + k + "'");
        }
        it->second = v;
    }
    return defaults;
}

int64_t as_count(const std::map<std::string, double>& h, const std::string& key) {
    const double v = h.at(key);
    if (v < 1.0 || v != std::floor(v)) {
        throw Error("hyperparameter '" + key + "' must be a positive integer, got " +
                    std::to_string(v));
    }
    return static_cast<int64_t>(v);
}

double as_positive(const std::map<std::string, double>& h, const std::string& key) {
    const double v = h.at(key);
    if (!(v > 0.0)) {
        throw Error("hyperparameter '" + key + "' must be positive, got " + std::to_string(v));
    }
    return v;
}

// ---------------------------------------------------------------------------
// Closed-form scalar log-densities for the reference oracles
// ---------------------------------------------------------------------------

double ref_normal(double x, double mu, double sigma) {
    const double z = (x - mu) / sigma;
    return -std::log(sigma) - kHalfLogTwoPi - 0.5 * z * z;
}

double ref_inverse_gamma(double x, double conc, double scale) {
    return conc * std::log(scale) - std::lgamma(conc) - (conc + 1.0) * std::log(x) - scale / x;
}

double ref_gamma(double x, double conc, double rate) {
    return conc * std::log(rate) - std::lgamma(conc) + (conc - 1.0) * std::log(x) - rate * x;
}

double ref_poisson(double x, double rate) {
    return x * std::log(rate) - rate - std::lgamma(x + 1.0);
}

double ref_bernoulli(double x, double p) {
    return x * std::log(p) + (1.0 - x) * std::log(1.0 - p);
}

double ref_dirichlet(std::span<const double> x, std::span<const double> alpha) {
    double a0 = 0.0, lp = 0.0;
    for (size_t i = 0; i < alpha.size(); ++i) {
        a0 += alpha[i];
        lp -= std::lgamma(alpha[i]);
        lp += (alpha[i] - 1.0) * std::log(x[i]);
    }
    return lp + std::lgamma(a0);
}

double ref_multinomial(std::span<const double> x, double total, std::span<const double> log_p) {
    double lp = std::lgamma(total + 1.0);
    for (size_t i = 0; i < x.size(); ++i) {
        lp -= std::lgamma(x[i] + 1.0);
        lp += x[i] * log_p[i];
    }
    return lp;
}

std::vector<double> row_log_softmax(std::span<const double> logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

ModelHandle build_simple(const std::map<std::string, double>& overrides) {
    ModelHandle h;
    h.id = "simple";
    h.hyper = resolve_hyper(h.id, {}, overrides);
    h.doc = "Conjugate priors on the parameters of a Normal: s ~ InverseGamma(3, 2), "
            "m ~ Normal(0, 1), x ~ Normal(m, s).";

    std::vector<SequentialEntry> entries;
    entries.emplace_back(inverse_gamma(3.0, 2.0), "s");
    entries.emplace_back(normal(0.0, 1.0), "m");
    entries.emplace_back([](Expr m, Expr s) { return normal(m, s); }, "x");
    h.joint = make_sequential_joint(std::move(entries));

    h.reference_log_density = [](const StructuredValue& v) {
        const double s = v.at(size_t{0}).tensor().scalar_value();
        const double m = v.at(size_t{1}).tensor().scalar_value();
        const double x = v.at(size_t{2}).tensor().scalar_value();
        return ref_inverse_gamma(s, 3.0, 2.0) + ref_normal(m, 0.0, 1.0) + ref_normal(x, m, s);
    };
    return h;
}

ModelHandle build_pmf(const std::map<std::string, double>& overrides) {
    ModelHandle h;
    h.id = "pmf";
    h.hyper = resolve_hyper(h.id,
                            {{"n_factors", 3},
                             {"n_users", 5},
                             {"n_items", 4},
                             {"user_trait_scale", 1.0},
                             {"item_trait_scale", 1.0},
                             {"observation_noise_scale", 0.5}},
                            overrides);
    const int64_t f = as_count(h.hyper, "n_factors");
    const int64_t nu = as_count(h.hyper, "n_users");
    const int64_t ni = as_count(h.hyper, "n_items");
    const double su = as_positive(h.hyper, "user_trait_scale");
    const double si = as_positive(h.hyper, "item_trait_scale");
    const double so = as_positive(h.hyper, "observation_noise_scale");
    h.doc = "Probabilistic matrix factorization: latent user and item trait matrices with a "
            "Normal observation model over their product.";

    std::vector<SequentialEntry> entries;
    entries.emplace_back(iid_sample(normal(0.0, su), Shape{f, nu}), "u");
    entries.emplace_back(iid_sample(normal(0.0, si), Shape{f, ni}), "v");
    entries.emplace_back(
        [so](Expr v, Expr u) {
            return independent(normal(matmul(u, v, /*adjoint_a=*/true, false), so), 2);
        },
        "r");
    h.joint = make_sequential_joint(std::move(entries));

    h.reference_log_density = [f, nu, ni, su, si, so](const StructuredValue& val) {
        const Tensor u = val.at(size_t{0}).tensor();
        const Tensor v = val.at(size_t{1}).tensor();
        const Tensor r = val.at(size_t{2}).tensor();
        const auto uv = u.reals();
        const auto vv = v.reals();
        const auto rv = r.reals();
        double lp = 0.0;
        for (double e : uv) lp += ref_normal(e, 0.0, su);
        for (double e : vv) lp += ref_normal(e, 0.0, si);
        for (int64_t j = 0; j < nu; ++j) {
            for (int64_t k = 0; k < ni; ++k) {
                double dot = 0.0;
                for (int64_t i = 0; i < f; ++i) {
                    dot += uv[static_cast<size_t>(i * nu + j)] * vv[static_cast<size_t>(i * ni + k)];
                }
                lp += ref_normal(rv[static_cast<size_t>(j * ni + k)], dot, so);
            }
        }
        return lp;
    };
    return h;
}

ModelHandle build_lda(const std::map<std::string, double>& overrides) {
    ModelHandle h;
    h.id = "lda";
    h.hyper = resolve_hyper(
        h.id, {{"topics", 3}, {"vocab_words", 10}, {"avg_doc_length", 20.0}}, overrides);
    const int64_t k = as_count(h.hyper, "topics");
    const int64_t v = as_count(h.hyper, "vocab_words");
    const double avg_len = as_positive(h.hyper, "avg_doc_length");
    h.doc = "Bag-of-words latent Dirichlet allocation for one document: a Poisson word count, "
            "topic mixture, per-topic occurrence counts and per-topic word counts. The topic "
            "concentration and word logits are learnable.";

    auto alpha = std::make_shared<TransformedVariable>("alpha", Tensor::ones(Shape{k}),
                                                       Bijector::softplus());
    auto beta = make_variable("beta", Tensor::zeros(Shape{k, v}));

    h.joint = make_program_joint([alpha, beta, avg_len](ModelContext& ctx) {
        const Expr n = ctx.draw(Root(poisson(avg_len)), "n");
        const Expr theta = ctx.draw(Root(dirichlet(alpha->read())), "theta");
        // The Poisson draw is real-valued; the word count must be integral,
        // so it is rounded to the nearest integer here.
        const Expr z = ctx.draw(multinomial_probs(round(n), theta), "z");
        ctx.draw(independent(multinomial_logits(z, Expr::variable(beta)), 1), "w");
    });

    h.settables["alpha"] = {[alpha] { return alpha->constrained_value(); },
                            [alpha](const Tensor& t) { alpha->assign(t); }};
    h.settables["beta"] = {[beta] { return beta->value(); },
                           [beta](const Tensor& t) { beta->assign(t); }};

    h.reference_log_density = [alpha, beta, avg_len, k, v](const StructuredValue& val) {
        const Tensor n_t = val.at(size_t{0}).tensor();
        const Tensor theta = val.at(size_t{1}).tensor();
        const Tensor z = val.at(size_t{2}).tensor();
        const Tensor w = val.at(size_t{3}).tensor();
        const double n = n_t.scalar_value();
        const Tensor a = alpha->constrained_value();
        const Tensor b = beta->value();

        double lp = ref_poisson(n, avg_len);
        lp += ref_dirichlet(theta.reals(), a.reals());
        std::vector<double> log_theta(static_cast<size_t>(k));
        for (int64_t i = 0; i < k; ++i) log_theta[(size_t)i] = std::log(theta.reals()[(size_t)i]);
        lp += ref_multinomial(z.reals(), std::nearbyint(n), log_theta);
        for (int64_t t = 0; t < k; ++t) {
            const auto row_logits = b.reals().subspan((size_t)(t * v), (size_t)v);
            const auto log_p = row_log_softmax(row_logits);
            lp += ref_multinomial(w.reals().subspan((size_t)(t * v), (size_t)v),
                                  z.reals()[(size_t)t], log_p);
        }
        return lp;
    };
    return h;
}

ModelHandle build_nested(const std::map<std::string, double>& overrides) {
    ModelHandle h;
    h.id = "nested";
    h.hyper = resolve_hyper(h.id, {}, overrides);
    h.doc = "Composition of joint distributions: a named map whose entries are themselves "
            "joint distributions (one program-specified, one sequential).";

    auto inner_a = make_program_joint([](ModelContext& ctx) {
        ctx.draw(Root(bernoulli(0.25)), "x0");
        ctx.draw(Root(normal(0.0, 1.0)), "x1");
    });
    auto inner_b = make_sequential_joint(
        {SequentialEntry(poisson(2.0)), SequentialEntry(gamma(2.0, 1.0))});
    std::map<std::string, NamedEntry> entries;
    entries.emplace("a", NamedEntry(inner_a));
    entries.emplace("b", NamedEntry(inner_b));
    h.joint = make_named_joint(std::move(entries));

    h.reference_log_density = [](const StructuredValue& v) {
        const double x0 = v.at("a").at(size_t{0}).tensor().scalar_value();
        const double x1 = v.at("a").at(size_t{1}).tensor().scalar_value();
        const double nb = v.at("b").at(size_t{0}).tensor().scalar_value();
        const double g = v.at("b").at(size_t{1}).tensor().scalar_value();
        return ref_bernoulli(x0, 0.25) + ref_normal(x1, 0.0, 1.0) + ref_poisson(nb, 2.0) +
               ref_gamma(g, 2.0, 1.0);
    };
    return h;
}

ModelHandle build_vecdemo(const std::map<std::string, double>& overrides) {
    ModelHandle h;
    h.id = "vecdemo";
    h.hyper = resolve_hyper(h.id, {}, overrides);
    h.doc = "Three-node demo whose body slices a leading axis, valid as a single-world "
            "program but not under naive vectorized execution.";

    h.joint = make_program_joint([](ModelContext& ctx) {
        const Expr z =
            ctx.draw(Root(normal(0.0, Tensor::real({1.0, 2.0, 3.0}, Shape{3}))), "z");
        const Expr x = ctx.draw(Root(normal(0.0, 1.0)), "x");
        // Front-addressed slice: correct for one world, wrong under a hidden
        // leading batch axis unless execution is vectorized-aware.
        const Expr first_two = slice(z, {SlicePiece::range(0, 0, 2)});
        ctx.draw(normal(add(first_two, x), 1.0), "y");
    });

    h.reference_log_density = [](const StructuredValue& v) {
        const Tensor z = v.at(size_t{0}).tensor();
        const double x = v.at(size_t{1}).tensor().scalar_value();
        const Tensor y = v.at(size_t{2}).tensor();
        double lp = 0.0;
        for (int64_t i = 0; i < 3; ++i) {
            lp += ref_normal(z.reals()[(size_t)i], 0.0, static_cast<double>(i + 1));
        }
        lp += ref_normal(x, 0.0, 1.0);
        for (int64_t i = 0; i < 2; ++i) {
            lp += ref_normal(y.reals()[(size_t)i], z.reals()[(size_t)i] + x, 1.0);
        }
        return lp;
    };
    return h;
}

ModelHandle build_learnable(const std::map<std::string, double>& overrides) {
    ModelHandle h;
    h.id = "learnable";
    h.hyper = resolve_hyper(h.id, {}, overrides);
    h.doc = "Two-node model with learnable parameters: InverseGamma(3, scale) with scale a "
            "positively-constrained variable (initially 2), and Normal(loc, 100) with loc a "
            "free variable (initially 0).";

    auto scale = std::make_shared<TransformedVariable>("scale", Tensor::scalar(2.0),
                                                       Bijector::exp());
    auto loc = make_variable("loc", Tensor::scalar(0.0));

    std::vector<SequentialEntry> entries;
    entries.emplace_back(inverse_gamma(3.0, scale->read()), "x0");
    entries.emplace_back(normal(Expr::variable(loc), 100.0), "x1");
    h.joint = make_sequential_joint(std::move(entries));

    h.settables["scale"] = {[scale] { return scale->constrained_value(); },
                            [scale](const Tensor& t) { scale->assign(t); }};
    h.settables["loc"] = {[loc] { return loc->value(); },
                          [loc](const Tensor& t) { loc->assign(t); }};

    h.reference_log_density = [scale, loc](const StructuredValue& v) {
        const Tensor p = v.at(size_t{0}).tensor();
        const Tensor m = v.at(size_t{1}).tensor();
        const double s = scale->constrained_value().scalar_value();
        const double l = loc->value().scalar_value();
        double lp = 0.0;
        for (int64_t i = 0; i < p.size(); ++i) lp += ref_inverse_gamma(p.as_real(i), 3.0, s);
        for (int64_t i = 0; i < m.size(); ++i) lp += ref_normal(m.as_real(i), l, 100.0);
        return lp;
    };
    return h;
}

}  // namespace

const std::vector<std::string>& model_ids() {
    static const std::vector<std::string> ids = {"simple",  "pmf",     "lda",
                                                 "nested",  "vecdemo", "learnable"};
    return ids;
}

ModelHandle build_model(const std::string& id, const std::map<std::string, double>& overrides) {
    if (id == "simple") return build_simple(overrides);
    if (id == "pmf") return build_pmf(overrides);
    if (id == "lda") return build_lda(overrides);
    if (id == "nested") return build_nested(overrides);
    if (id == "vecdemo") return build_vecdemo(overrides);
    if (id == "learnable") return build_learnable(overrides);
    throw Error("unknown model '" + id + "'; available: simple, pmf, lda, nested, vecdemo, "
                "learnable");
}

}  // namespace jointdist
