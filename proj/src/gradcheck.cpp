#include "stvg/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace stvg {

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                           double h, double tol, const std::vector<std::string>& names) {
    if (h < 1e-6 || h > 1e-4) throw std::invalid_argument("grad_check: h must lie in [1e-6, 1e-4]");
    if (inputs.empty()) throw std::invalid_argument("grad_check: no inputs");

    for (const Tensor& t : inputs)
        if (!t.requires_grad())
            throw std::invalid_argument("grad_check: all inputs must require grad");

    // Analytic pass.
    std::vector<Tensor> ins = inputs;
    for (Tensor& t : ins) {
        t.grad_vec();
        t.zero_grad();
    }
    Tensor y = f();
    if (y.size() != 1) throw std::invalid_argument("grad_check: f must produce a scalar");
    if (!std::isfinite(y.item())) throw std::runtime_error("grad_check: f is non-finite");
    y.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(ins.size());
    for (Tensor& t : ins) analytic.push_back(t.grad_vec());

    GradCheckReport rep;
    NoGradGuard ng;
    for (size_t which = 0; which < ins.size(); ++which) {
        Tensor& t = ins[which];
        double* d = t.data();
        for (int64_t i = 0; i < t.size(); ++i) {
            const double saved = d[i];
            d[i] = saved + h;
            const double fp = f().item();
            d[i] = saved - h;
            const double fm = f().item();
            d[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("grad_check: f is non-finite under perturbation");
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[which][static_cast<size_t>(i)];
            const double rel = std::abs(a - numeric) /
                               std::max({std::abs(a), std::abs(numeric), 1.0});
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst.name = which < names.size() ? names[which]
                                                      : "input" + std::to_string(which);
                rep.worst.index = i;
                rep.worst.analytic = a;
                rep.worst.numeric = numeric;
                rep.worst.rel_err = rel;
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace stvg
