#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "jointdist/flavors.hpp"
#include "jointdist/trainable.hpp"

namespace jointdist {

/// Constrained read/assign access to a named learnable parameter of a model.
struct VariableAccess {
    std::function<Tensor()> read;
    std::function<void(const Tensor&)> assign;
};

/// A registry model: the compiled joint, constrained accessors for its
/// learnable parameters, and an independent closed-form log-density used to
/// cross-check the driver. The reference is coded directly from the density
/// formulas over plain doubles and never touches the sampling/driver path;
/// it is defined for single-draw (unvectorized) values.
struct ModelHandle {
    std::string id;
    JointPtr joint;
    std::map<std::string, VariableAccess> settables;
    std::function<double(const StructuredValue&)> reference_log_density;
    std::string doc;
    std::map<std::string, double> hyper;
};

const std::vector<std::string>& model_ids();

/// Builds a registry model. Unknown ids and unknown or out-of-domain
/// hyperparameter overrides raise Error.
ModelHandle build_model(const std::string& id,
                        const std::map<std::string, double>& overrides = {});

}  // namespace jointdist
