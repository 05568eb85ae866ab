#include "stcn/grad_check.hpp"

#include <cmath>

namespace stcn {

double eval_scalar(const ScalarGraphFn& f, const Tensor& x) {
    Graph g;
    Var vx = g.leaf(x, false);
    Var out = f(g, vx);
    return out.value().item();
}

double grad_check(const ScalarGraphFn& f, const Tensor& x, double h) {
    if (h < 1e-7 || h > 1e-4) {
        throw InputError("grad_check: step size " + std::to_string(h) +
                         " outside [1e-7, 1e-4]");
    }
    std::vector<double> analytic(x.size());
    {
        Graph g;
        Var vx = g.leaf(x, true);
        Var out = f(g, vx);
        if (out.value().size() != 1) {
            throw ShapeError("grad_check: f must be scalar-valued, got " +
                             shape_str(out.value().shape()));
        }
        if (!std::isfinite(out.value().item())) {
            throw NumericError("grad_check: f(x) is not finite");
        }
        g.backward(out);
        analytic = vx.grad();
    }
    double max_rel = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = eval_scalar(f, probe);
        probe[i] = orig - h;
        const double fm = eval_scalar(f, probe);
        probe[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
            throw NumericError("grad_check: non-finite gradient at element " + std::to_string(i));
        }
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

} // namespace stcn
