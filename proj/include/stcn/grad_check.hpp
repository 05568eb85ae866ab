#pragma once

#include "stcn/graph.hpp"

#include <functional>

namespace stcn {

// A scalar-valued differentiable function expressed on a graph. The callable
// must be pure: invoked repeatedly with perturbed copies of x, it may not
// mutate external state (pass update_running = false to batch norm, rebuild
// dropout masks from a fixed seed, ...).
using ScalarGraphFn = std::function<Var(Graph&, const Var&)>;

// Compares the reverse-mode gradient of f at x against central differences
// (f(x+h) - f(x-h)) / 2h element-wise and returns the maximum relative error
// with denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const ScalarGraphFn& f, const Tensor& x, double h = 1e-6);

// Plain evaluation of f at x (fresh graph, no gradients).
double eval_scalar(const ScalarGraphFn& f, const Tensor& x);

} // namespace stcn
