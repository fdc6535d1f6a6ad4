#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mrnn/autodiff.hpp"
#include "mrnn/errors.hpp"

namespace mrnn {

// Result of comparing one analytic gradient against central differences.
struct GradCheckReport {
    double max_rel_err = 0.0;
    long worst_tensor = -1;
    long worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;

    std::string str() const {
        std::ostringstream os;
        os << "max rel err " << max_rel_err;
        if (worst_tensor >= 0) {
            os << " at tensor " << worst_tensor << " index " << worst_index << " (analytic "
               << analytic << ", central " << numeric << ")";
        }
        return os.str();
    }
};

// Checks d(scalar f)/d(inputs) by central differences with step eps.
// Relative error uses max(1, |analytic|) in the denominator so gradients
// near zero are judged on absolute error.
//
// f receives the perturbed inputs and must return the scalar output; it is
// reevaluated 2*numel times per tensor, so keep the graphs small.
inline GradCheckReport grad_check(
    const std::function<double(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    const std::vector<Tensor>& analytic_grads, double eps = 1e-5) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw std::invalid_argument("finite-difference step must lie in [1e-7, 1e-3], got " +
                                    std::to_string(eps));
    }
    if (analytic_grads.size() != inputs.size()) {
        throw std::invalid_argument("need one analytic gradient per input tensor");
    }
    GradCheckReport rep;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (!(analytic_grads[t].shape == inputs[t].shape)) {
            throw ShapeError("gradient shape " + analytic_grads[t].shape.str() +
                             " does not match input shape " + inputs[t].shape.str());
        }
        for (long i = 0; i < inputs[t].shape.numel(); ++i) {
            const double saved = inputs[t].v[i];
            inputs[t].v[i] = saved + eps;
            const double fp = f(inputs);
            inputs[t].v[i] = saved - eps;
            const double fm = f(inputs);
            inputs[t].v[i] = saved;
            const double num = (fp - fm) / (2.0 * eps);
            const double ana = analytic_grads[t].v[i];
            const double rel = std::fabs(ana - num) / std::max(1.0, std::fabs(ana));
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_tensor = static_cast<long>(t);
                rep.worst_index = i;
                rep.analytic = ana;
                rep.numeric = num;
            }
        }
    }
    return rep;
}

// Convenience wrapper for whole graphs. The harness registers one leaf per
// input tensor (so input order is never at the mercy of argument evaluation
// order) and hands them to the builder, which wires the graph and returns
// the scalar loss. The graph is built once to read off analytic gradients,
// then rebuilt 2*numel times for the central differences.
inline GradCheckReport grad_check_graph(
    const std::function<Var(Tape&, const std::vector<Var>&)>& builder,
    const std::vector<Tensor>& inputs, double eps = 1e-5) {
    auto run = [&](Tape& tape, const std::vector<Tensor>& xs, std::vector<Var>* leaves_out) {
        std::vector<Var> leaves;
        leaves.reserve(xs.size());
        for (const Tensor& t : xs) leaves.push_back(tape.leaf(t));
        Var loss = builder(tape, leaves);
        if (tape.shape(loss).numel() != 1) {
            throw ShapeError("gradient check needs a scalar loss, got " + tape.shape(loss).str());
        }
        if (leaves_out != nullptr) *leaves_out = std::move(leaves);
        return loss;
    };
    Tape tape;
    std::vector<Var> leaves;
    Var loss = run(tape, inputs, &leaves);
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(inputs.size());
    for (const Var& v : leaves) grads.push_back(tape.grad_tensor(v));
    auto f = [&](const std::vector<Tensor>& xs) {
        Tape tp;
        Var out = run(tp, xs, nullptr);
        return tp.value(out)[0];
    };
    return grad_check(f, inputs, grads, eps);
}

}  // namespace mrnn
