#include "mmfuse/gradcheck.hpp"

#include <cmath>

namespace mmfuse {

namespace {

double eval_forward(const ScalarFn& f, const std::vector<Matrix>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& m : inputs) vars.push_back(tape.leaf(m));
    Var root = f(tape, vars);
    const Matrix& v = tape.value(root);
    if (v.rows() != 1 || v.cols() != 1) {
        throw ContractError("grad_check: function must return a 1x1 scalar, got " +
                            v.shape_str());
    }
    return v(0, 0);
}

} // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Matrix>& inputs, double eps,
                           int order) {
    if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
    if (order != 2 && order != 4) throw ContractError("grad_check: order must be 2 or 4");

    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& m : inputs) vars.push_back(tape.leaf(m));
    Var root = f(tape, vars);
    tape.backward(root);
    std::vector<Matrix> analytic;
    analytic.reserve(vars.size());
    for (Var v : vars) analytic.push_back(tape.grad(v));

    GradCheckResult result;
    std::vector<Matrix> probe = inputs;
    for (std::size_t k = 0; k < probe.size(); ++k) {
        for (std::size_t e = 0; e < probe[k].size(); ++e) {
            const double saved = probe[k].data()[e];
            double numeric;
            if (order == 2) {
                probe[k].data()[e] = saved + eps;
                const double plus = eval_forward(f, probe);
                probe[k].data()[e] = saved - eps;
                const double minus = eval_forward(f, probe);
                numeric = (plus - minus) / (2.0 * eps);
            } else {
                probe[k].data()[e] = saved + 2.0 * eps;
                const double plus2 = eval_forward(f, probe);
                probe[k].data()[e] = saved + eps;
                const double plus1 = eval_forward(f, probe);
                probe[k].data()[e] = saved - eps;
                const double minus1 = eval_forward(f, probe);
                probe[k].data()[e] = saved - 2.0 * eps;
                const double minus2 = eval_forward(f, probe);
                numeric = (-plus2 + 8.0 * plus1 - 8.0 * minus1 + minus2) / (12.0 * eps);
            }
            probe[k].data()[e] = saved;
            const double analytic_v = analytic[k].data()[e];
            const double denom =
                std::max({std::fabs(analytic_v), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(analytic_v - numeric) / denom;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_input = k;
                result.worst_entry = e;
                result.analytic = analytic_v;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

} // namespace mmfuse
