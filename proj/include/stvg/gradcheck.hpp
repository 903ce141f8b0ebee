#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stvg/tensor.hpp"

namespace stvg {

struct GradCheckEntry {
    std::string name;
    int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    GradCheckEntry worst;
    int64_t checked = 0;
    bool pass = false;
};

// Compares reverse-mode gradients of the scalar produced by `f` against
// central differences over every element of `inputs`. `f` must rebuild its
// graph from the current input values on each call. Relative error uses a
// unit floor: |a - n| / max(|a|, |n|, 1).
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                           double h, double tol,
                           const std::vector<std::string>& names = {});

}  // namespace stvg
