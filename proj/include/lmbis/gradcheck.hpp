#pragma once

#include <functional>
#include <vector>

#include "lmbis/tensor.hpp"

namespace lmbis {

// A scalar-valued function of a list of tensors together with its analytic
// gradient. Both callables must describe the same map; the checker compares
// the gradient against central finite differences entry by entry.
//
// Everything runs in double precision: 32-bit storage is the production
// contract, but finite differences need the headroom.
struct GradCheckProblem {
    std::function<double(const std::vector<TensorT<double>>&)> value;
    std::function<std::vector<TensorT<double>>(const std::vector<TensorT<double>>&)>
        gradients;
};

// Returns max over all input entries of |analytic - central_difference| /
// max(1, |analytic|). epsilon must lie in [1e-6, 1e-3].
double grad_check(const GradCheckProblem& problem,
                  std::vector<TensorT<double>> inputs, double epsilon);

}  // namespace lmbis
