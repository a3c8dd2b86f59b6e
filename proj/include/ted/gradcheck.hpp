#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ted/tensor.hpp"

namespace ted {

struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

// Compares reverse-mode gradients of a scalar function against central finite
// differences. Relative error per entry is |a - n| / max(|a|, |n|, floor).
//
// `f` must rebuild the graph from the inputs on every call and be deterministic.
inline GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, double step = 1e-5, double floor = 1e-4,
                                 std::size_t max_entries_per_input = 0) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor loss = f(inputs);
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs)
        analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                           : std::vector<double>(t.size(), 0.0));

    GradCheckResult result;
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto values = inputs[k].mutable_data();
        const std::size_t n = values.size();
        const std::size_t stride =
            (max_entries_per_input == 0 || n <= max_entries_per_input) ? 1 : (n + max_entries_per_input - 1) / max_entries_per_input;
        for (std::size_t i = 0; i < n; i += stride) {
            const double orig = values[i];
            values[i] = orig + step;
            const double up = f(inputs).item();
            values[i] = orig - step;
            const double down = f(inputs).item();
            values[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[k][i];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
            ++result.checked;
            result.max_abs_error = std::max(result.max_abs_error, abs_err);
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_input = k;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace ted
