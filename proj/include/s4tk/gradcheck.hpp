#pragma once

#include <functional>
#include <string>
#include <vector>

#include "s4tk/ops.hpp"
#include "s4tk/tensor.hpp"

// Central finite-difference verification of tape gradients. The relative
// error guard uses max(1, |numeric|) in the denominator so tiny gradients
// are compared absolutely rather than blowing up the ratio.

namespace s4tk::core {

struct GradCheckReport {
    bool ok = true;
    float max_rel_err = 0.0f;
    // Location of the worst coordinate, for debugging failed checks.
    int worst_input = -1;
    int64_t worst_coord = -1;
    float analytic_at_worst = 0.0f;
    float numeric_at_worst = 0.0f;
};

// f maps the given leaf tensors to a scalar loss. Each input is perturbed
// coordinate-wise with a central difference of step h and the tape gradient
// is compared against the quotient.
inline GradCheckReport check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                       std::vector<Tensor> inputs, float h = 1e-3f, float tol = 1e-3f) {
    GradCheckReport rep;

    // Analytic pass.
    {
        Tape tape;
        Tape::Scope scope(tape);
        for (auto& t : inputs) t.zero_grad();
        Tensor loss = f(inputs);
        if (loss.size() != 1) throw DimensionError("check_gradients expects a scalar loss");
        if (!std::isfinite(loss.item())) throw NumericError("check_gradients: non-finite loss");
        tape.backward(loss);
    }
    std::vector<std::vector<float>> analytic;
    analytic.reserve(inputs.size());
    for (auto& t : inputs) {
        t.node()->ensure_grad();
        analytic.push_back(t.grad());
        for (float g : analytic.back())
            if (!std::isfinite(g)) throw NumericError("check_gradients: non-finite analytic gradient");
    }

    // Numeric pass: evaluate without a tape so no graph is recorded.
    auto eval = [&]() {
        Tensor loss = f(inputs);
        float v = loss.item();
        if (!std::isfinite(v)) throw NumericError("check_gradients: non-finite loss during probing");
        return v;
    };

    for (size_t k = 0; k < inputs.size(); ++k) {
        auto& data = inputs[k].mutable_data();
        for (size_t i = 0; i < data.size(); ++i) {
            float orig = data[i];
            data[i] = orig + h;
            float fp = eval();
            data[i] = orig - h;
            float fm = eval();
            data[i] = orig;
            float numeric = (fp - fm) / (2.0f * h);
            float a = analytic[k][i];
            float rel = std::fabs(a - numeric) / std::max(1.0f, std::fabs(numeric));
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_input = static_cast<int>(k);
                rep.worst_coord = static_cast<int64_t>(i);
                rep.analytic_at_worst = a;
                rep.numeric_at_worst = numeric;
            }
        }
    }
    rep.ok = rep.max_rel_err <= tol;
    return rep;
}

} // namespace s4tk::core
