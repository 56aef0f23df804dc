#include "lmbis/gradcheck.hpp"

#include <cmath>

namespace lmbis {

double grad_check(const GradCheckProblem& problem,
                  std::vector<TensorT<double>> inputs, double epsilon) {
    if (!(epsilon >= 1e-6 && epsilon <= 1e-3))
        throw std::invalid_argument("grad_check: epsilon must be in [1e-6, 1e-3]");
    if (!problem.value || !problem.gradients)
        throw std::invalid_argument("grad_check: problem is incomplete");

    const auto analytic = problem.gradients(inputs);
    if (analytic.size() != inputs.size())
        throw std::invalid_argument("grad_check: gradient count != input count");

    double max_err = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (!analytic[t].same_shape(inputs[t]))
            throw ShapeError("grad_check: gradient shape mismatch for input " +
                             std::to_string(t));
        for (std::size_t i = 0; i < inputs[t].size(); ++i) {
            const double x = inputs[t][i];
            inputs[t][i] = x + epsilon;
            const double f_plus = problem.value(inputs);
            inputs[t][i] = x - epsilon;
            const double f_minus = problem.value(inputs);
            inputs[t][i] = x;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
                throw NumericError("grad_check: non-finite function value");
            const double fd = (f_plus - f_minus) / (2.0 * epsilon);
            const double a = analytic[t][i];
            const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace lmbis
