// Command-line surface over the model registry: describe, sample, evaluate
// and fit models, with JSON files for structured values.
//
// Exit codes: 0 success, 2 usage/configuration, 3 value/structure,
// 4 model capability.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "jointdist/autobatch.hpp"
#include "jointdist/json_io.hpp"
#include "jointdist/registry.hpp"

namespace jd = jointdist;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitValue = 3;
constexpr int kExitCapability = 4;

struct KeyValues {
    std::vector<std::string> raw;

    std::map<std::string, double> parsed(const char* what) const {
        std::map<std::string, double> out;
        for (const auto& kv : raw) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos || eq == 0) {
                throw jd::Error(std::string(what) + " expects name=value, got '" + kv + "'");
            }
            try {
                out[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
            } catch (const std::exception&) {
                throw jd::Error(std::string(what) + ": cannot parse number in '" + kv + "'");
            }
        }
        return out;
    }
};

jd::Shape parse_sample_shape(const std::string& text) {
    if (text.empty()) return jd::Shape{};
    std::vector<int64_t> dims;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            dims.push_back(std::stoll(part));
        } catch (const std::exception&) {
            throw jd::Error("cannot parse sample shape '" + text + "'");
        }
    }
    return jd::Shape(std::move(dims));
}

// Applies --set name=value assignments of constrained values. Scalars are
// broadcast to the parameter's shape.
void apply_sets(jd::ModelHandle& handle, const KeyValues& sets) {
    for (const auto& [name, value] : sets.parsed("--set")) {
        auto it = handle.settables.find(name);
        if (it == handle.settables.end()) {
            throw jd::Error("model '" + handle.id + "' has no settable parameter '" + name +
                            "'; available: " + [&] {
                                std::string s;
                                for (const auto& [k, v] : handle.settables) {
                                    s += (s.empty() ? "" : ", ") + k;
                                }
                                return s.empty() ? std::string("none") : s;
                            }());
        }
        const jd::Shape shape = it->second.read().shape();
        it->second.assign(jd::Tensor::full(shape, value));
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw jd::Error("cannot open file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_output(const std::string& text, const std::string& path) {
    if (path.empty()) {
        std::cout << text << "\n";
        return;
    }
    std::ofstream out(path);
    if (!out) throw jd::Error("cannot open output file '" + path + "'");
    out << text << "\n";
}

std::string format9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

int run_describe(const std::string& model, const KeyValues& hyper, bool pretty) {
    jd::ModelHandle handle = jd::build_model(model, hyper.parsed("--hp"));
    const auto& joint = *handle.joint;
    if (pretty) {
        std::cout << "model:    " << handle.id << "\n";
        std::cout << "flavor:   " << joint.flavor_name() << "\n";
        std::cout << "doc:      " << handle.doc << "\n";
        std::cout << "nodes:";
        for (size_t i = 0; i < joint.node_count(); ++i) {
            std::cout << (i ? ", " : "    ") << joint.node_names()[i]
                      << (joint.root_flags()[i] ? " (root)" : " (dependent)");
        }
        std::cout << "\n";
        std::cout << "dtype:    " << jd::to_json(joint.dtype_structure()) << "\n";
        std::cout << "event:    " << jd::to_json(joint.event_structure()) << "\n";
        std::cout << "batch:    " << jd::to_json(joint.batch_structure()) << "\n";
        if (!handle.settables.empty()) {
            std::cout << "settable:";
            bool first = true;
            for (const auto& [name, access] : handle.settables) {
                std::cout << (first ? " " : ", ") << name;
                first = false;
            }
            std::cout << "\n";
        }
        return 0;
    }
    std::ostringstream os;
    os << "{\"model\": \"" << handle.id << "\", \"flavor\": \"" << joint.flavor_name()
       << "\", \"order\": [";
    for (size_t i = 0; i < joint.node_count(); ++i) {
        os << (i ? ", " : "") << '"' << joint.node_names()[i] << '"';
    }
    os << "], \"roots\": [";
    for (size_t i = 0; i < joint.node_count(); ++i) {
        os << (i ? ", " : "") << (joint.root_flags()[i] ? "true" : "false");
    }
    os << "], \"dtype\": " << jd::to_json(joint.dtype_structure())
       << ", \"event_shape\": " << jd::to_json(joint.event_structure())
       << ", \"batch_shape\": " << jd::to_json(joint.batch_structure()) << "}";
    std::cout << os.str() << "\n";
    return 0;
}

int run_sample(const std::string& model, const KeyValues& hyper, const KeyValues& sets,
               uint64_t seed, const std::string& sample_shape_text, int64_t autobatch_n,
               const std::string& out_path, bool pretty) {
    jd::ModelHandle handle = jd::build_model(model, hyper.parsed("--hp"));
    apply_sets(handle, sets);
    jd::RandomStream rng(seed);
    jd::StructuredValue value;
    if (autobatch_n > 0) {
        value = jd::vectorized_sample(handle.joint, autobatch_n, rng);
    } else {
        value = handle.joint->sample(parse_sample_shape(sample_shape_text), rng);
    }
    write_output(jd::to_json(value, pretty), out_path);
    return 0;
}

int run_logprob(const std::string& model, const KeyValues& hyper, const KeyValues& sets,
                const std::string& value_path, bool autobatch) {
    jd::ModelHandle handle = jd::build_model(model, hyper.parsed("--hp"));
    apply_sets(handle, sets);
    const jd::StructuredValue value = jd::structured_value_from_json(read_file(value_path));
    if (autobatch) {
        // The number of worlds comes from the shared leading axis.
        int64_t n = -1;
        value.for_each_leaf([&](const std::string&, const jd::Expr& leaf) {
            if (n < 0 && leaf.shape().rank() > 0) n = leaf.shape().dim(0);
        });
        if (n < 1) throw jd::ShapeError("vectorized value has no leading axis");
        const jd::Tensor lp = jd::AutoBatchedJoint(handle.joint, n).log_prob(value).eval();
        std::string out = "[";
        for (int64_t i = 0; i < lp.size(); ++i) {
            out += (i ? ", " : "") + format9(lp.as_real(i));
        }
        std::cout << out << "]\n";
        return 0;
    }
    const jd::Tensor lp = handle.joint->log_prob(value).eval();
    if (lp.size() == 1) {
        std::cout << format9(lp.scalar_value()) << "\n";
    } else {
        std::string out = "[";
        for (int64_t i = 0; i < lp.size(); ++i) out += (i ? ", " : "") + format9(lp.as_real(i));
        std::cout << out << "]\n";
    }
    return 0;
}

int run_fit(const std::string& model, const KeyValues& hyper, const KeyValues& sets,
            const std::string& data_path, int64_t steps, uint64_t seed, double lr, double beta1,
            double beta2, double epsilon, const std::string& out_path) {
    jd::ModelHandle handle = jd::build_model(model, hyper.parsed("--hp"));
    apply_sets(handle, sets);
    const auto vars = handle.joint->trainable_variables();
    if (vars.empty()) {
        throw jd::CapabilityError("model '" + handle.id + "' has no trainable variables");
    }
    jd::StructuredValue data = jd::structured_value_from_json(read_file(data_path));
    if (data.contains_missing()) {
        // Unobserved leaves are filled by one seeded conditional forward run
        // and held fixed during optimization.
        jd::RandomStream rng(seed);
        data = handle.joint->realize(jd::Shape{}, data, rng);
    }

    jd::Adam optimizer(jd::AdamOptions{lr, beta1, beta2, epsilon});
    const auto loss_fn = [&] { return jd::neg(jd::reduce_sum(handle.joint->log_prob(data))); };
    const std::vector<double> losses = jd::minimize(loss_fn, steps, optimizer, vars);

    std::ostringstream os;
    os << "{\"losses\": [";
    for (size_t i = 0; i < losses.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", losses[i]);
        os << (i ? ", " : "") << buf;
    }
    os << "], \"variables\": {";
    bool first = true;
    for (const auto& [name, access] : handle.settables) {
        os << (first ? "" : ", ") << '"' << name
           << "\": " << jd::to_json(jd::StructuredValue(access.read()));
        first = false;
    }
    os << "}}";
    write_output(os.str(), out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint distributions over structured values: describe, sample, evaluate and "
                 "fit the bundled models"};
    app.require_subcommand(1);

    std::string model, sample_shape_text, out_path, value_path, data_path;
    KeyValues hyper, sets;
    uint64_t seed = 0;
    int64_t autobatch_n = 0;
    int64_t steps = 1000;
    bool pretty = false;
    bool autobatch = false;
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-7;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("model", model, "registry model id")->required();
        cmd->add_option("--hp", hyper.raw, "hyperparameter override name=value");
        cmd->add_option("--set", sets.raw,
                        "assign a constrained parameter value before running, name=value");
    };

    auto* describe = app.add_subcommand("describe", "print structure properties of a model");
    add_common(describe);
    describe->add_flag("--pretty", pretty, "human-readable report instead of JSON");

    auto* sample = app.add_subcommand("sample", "draw from a model and print JSON");
    add_common(sample);
    sample->add_option("--seed", seed, "random seed")->required();
    sample->add_option("--sample-shape", sample_shape_text,
                       "comma-separated draw dims, e.g. 4 or 2,3");
    sample->add_option("--autobatch", autobatch_n,
                       "vectorized interpretation with this many worlds");
    sample->add_option("-o,--out", out_path, "write JSON here instead of stdout");
    sample->add_flag("--pretty", pretty, "indent the JSON output");

    auto* logprob = app.add_subcommand("logprob", "joint log-density of a value file");
    add_common(logprob);
    logprob->add_option("--value", value_path, "StructuredValue JSON file")->required();
    logprob->add_flag("--autobatch", autobatch,
                      "treat leading axes as worlds and print one density per world");

    auto* fit = app.add_subcommand("fit", "maximize the joint density of data by gradient "
                                          "descent on the model's variables");
    add_common(fit);
    fit->add_option("--data", data_path, "StructuredValue JSON file (missing leaves are "
                                         "completed by a seeded conditional draw)")
        ->required();
    fit->add_option("--steps", steps, "number of optimization steps");
    fit->add_option("--seed", seed, "random seed")->required();
    fit->add_option("--lr", lr, "Adam learning rate");
    fit->add_option("--beta1", beta1, "Adam first-moment decay");
    fit->add_option("--beta2", beta2, "Adam second-moment decay");
    fit->add_option("--eps", epsilon, "Adam epsilon");
    fit->add_option("-o,--out", out_path, "write the result JSON here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : kExitConfig;
    }

    // Model construction and configuration errors exit 2; value errors 3;
    // capability errors 4.
    try {
        if (describe->parsed()) return run_describe(model, hyper, pretty);
        if (sample->parsed()) {
            return run_sample(model, hyper, sets, seed, sample_shape_text, autobatch_n, out_path,
                              pretty);
        }
        if (logprob->parsed()) return run_logprob(model, hyper, sets, value_path, autobatch);
        if (fit->parsed()) {
            return run_fit(model, hyper, sets, data_path, steps, seed, lr, beta1, beta2, epsilon,
                           out_path);
        }
    } catch (const jd::CapabilityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCapability;
    } catch (const jd::StructureError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValue;
    } catch (const jd::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValue;
    } catch (const jd::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValue;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
