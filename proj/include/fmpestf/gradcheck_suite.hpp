#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmpestf/config.hpp"
#include "fmpestf/grad_check.hpp"

namespace fmpestf {

// C=4, N=4, T=8, T'=4, depth 1.
ModelConfig toy_model_config(std::uint64_t seed = 0);

// Scopes accepted by run_toy_grad_check.
const std::vector<std::string>& grad_check_scopes();

// Finite-difference check of one toy block or the whole toy model against a
// fixed random linear readout of its output. `sign_flip_parameter`, when not
// empty, negates that parameter's analytic gradient before comparison.
GradCheckReport run_toy_grad_check(const std::string& scope, std::uint64_t seed,
                                   const std::string& sign_flip_parameter = {});

}  // namespace fmpestf
