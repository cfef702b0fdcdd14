#pragma once

#include <algorithm>
#include <cmath>

#include "icmoe/tensor.hpp"

namespace icmoe {

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar-valued function f of x. Callers sample away from relu/abs kinks.
template <typename F>
double grad_check(F f, Tensor x, double h = 1e-5) {
    x.zero_grad();
    {
        Tape tape;
        Tensor y = f(x);
        backward(y);
    }
    const std::vector<double> analytic = x.grad();

    double max_rel = 0.0;
    auto& d = x.data_mut();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double saved = d[i];
        d[i] = saved + h;
        const double fp = f(x).item();  // no tape active: plain evaluation
        d[i] = saved - h;
        const double fm = f(x).item();
        d[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double rel =
            std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i]));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace icmoe
