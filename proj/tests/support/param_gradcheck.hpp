// Catch-aware wrapper that finite-difference-checks every named parameter of
// a module against the tape's analytic gradients.
#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <map>
#include <string>

#include "avseg/params.hpp"
#include "gradcheck.hpp"

namespace avseg::test {

inline void require_param_gradients(ParamDict& dict,
                                    const std::map<std::string, Tensor>& analytic,
                                    const std::function<double()>& loss,
                                    double h = 1e-5, double rel_tol = 1e-4) {
  for (const auto& [name, grad] : analytic) {
    INFO("parameter " << name);
    GradCheckResult res = check_gradient(dict.at(name).vec(), grad, loss, h, rel_tol);
    INFO(res.detail);
    REQUIRE(res.ok);
  }
}

}  // namespace avseg::test
