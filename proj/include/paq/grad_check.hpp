#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "paq/tensor.hpp"

namespace paq {

// Max relative error between analytic gradients and central finite differences,
// taken over every coordinate of every parameter. `f` must evaluate the scalar
// objective from the current parameter values; it is rerun under a fresh tape
// for the analytic pass and without grad bookkeeping for the stencil passes.
inline double finite_diff_check(const std::function<Tensor()>& f,
                                const std::vector<Tensor>& params, double eps = 1e-5) {
    if (!(eps > 0.0 && eps <= 1e-2))
        throw std::invalid_argument("finite_diff_check: eps must lie in (0, 1e-2]");

    auto eval = [&]() {
        Tensor v = f();
        if (v.size() != 1) throw std::invalid_argument("finite_diff_check: f must be scalar");
        return v.item();
    };
    const double v0 = eval();
    if (eval() != v0)
        throw std::invalid_argument("finite_diff_check: f is not deterministic");

    // analytic pass
    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
    {
        Tape tape;
        Tensor loss = f();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (size_t i = 0; i < p.size(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + eps;
            const double fp = eval();
            p.data()[i] = saved - eps;
            const double fm = eval();
            p.data()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline double finite_diff_check(const std::function<Tensor()>& f, const Tensor& theta,
                                double eps = 1e-5) {
    return finite_diff_check(f, std::vector<Tensor>{theta}, eps);
}

}  // namespace paq
